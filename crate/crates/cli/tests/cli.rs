use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tempocoh::data::{self, DatasetHeader, VideoRecord};
use tempocoh::models::checkpoint;
use tempocoh::models::{Model, ModelConfig, ModelKind, TcMode};
use tempocoh::taxonomy::{LabelSet, Taxonomy};
use tempocoh::tensor::Tensor;

const TINY: &str = "0\t-1\ta\n1\t-1\tb\n2\t0\ta::x\n3\t0\ta::y\n4\t1\tb::x\n";

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let s = Sandbox { dir: tempfile::tempdir().unwrap() };
        std::fs::write(s.path("tiny.tsv"), TINY).unwrap();
        std::fs::copy(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/toy20.tsv"), s.path("toy20.tsv")).unwrap();
        s
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_tempocoh"));
        cmd.current_dir(self.dir.path()).args(args);
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}\nstdout: {}\nstderr: {}", text(&out.stdout), text(&out.stderr));
        text(&out.stdout)
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }

    fn bytes(&self, name: &str) -> Vec<u8> {
        std::fs::read(self.path(name)).unwrap()
    }

    /// Separable two-level data: one scene per video, little noise.
    fn tiny_data(&self) {
        self.ok(&["gen-data", "--taxonomy", "tiny.tsv", "--out", "tiny.tcd", "--videos", "40", "--seed", "1", "--sigma", "0.05", "--scenes-max", "1", "--frames-min", "4", "--frames-max", "6"]);
    }
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

fn overall(report: &Value, model: usize) -> Value {
    report["models"][model]["report"]["overall"].clone()
}

#[test]
fn gen_data_is_readable_and_reproducible() {
    let s = Sandbox::new();
    let args = ["gen-data", "--taxonomy", "toy20.tsv", "--out", "a.tcd", "--videos", "32", "--seed", "7"];
    s.ok(&args);
    let (header, recs) = data::read_dataset(&s.path("a.tcd")).unwrap();
    assert_eq!((header.num_labels, recs.len()), (20, 32));
    let first = s.bytes("a.tcd");
    s.ok(&args);
    assert_eq!(s.bytes("a.tcd"), first);
    let manifest = s.json("a.tcd.manifest.json");
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seeds"]["data"], 7);
    assert_eq!(manifest["exit_code"], 0);
}

#[test]
fn usage_and_io_errors_have_distinct_codes() {
    let s = Sandbox::new();
    let zero = s.run(&["gen-data", "--taxonomy", "toy20.tsv", "--out", "z.tcd", "--videos", "0", "--seed", "1"]);
    assert_eq!(code(&zero), Some(2));
    assert_eq!(code(&s.run(&["train", "--model", "lstm", "--data", "x", "--taxonomy", "y", "--out", "z"])), Some(2));
    assert_eq!(code(&s.run(&["train", "--model", "tc-netvlad", "--kernel-width", "7", "--data", "x", "--taxonomy", "y", "--out", "z"])), Some(2));
    let missing = s.run(&["gen-data", "--taxonomy", "nope.tsv", "--out", "m.tcd", "--videos", "2", "--seed", "1"]);
    assert_eq!(code(&missing), Some(3));

    s.tiny_data();
    let mut bytes = s.bytes("tiny.tcd");
    bytes[1] = b'X';
    std::fs::write(s.path("bad.tcd"), bytes).unwrap();
    let bad = s.run(&["train", "--model", "dnn", "--data", "bad.tcd", "--taxonomy", "tiny.tsv", "--out", "b.tcm"]);
    assert_eq!(code(&bad), Some(3));
    assert!(text(&bad.stderr).contains("byte 0"), "{}", text(&bad.stderr));
    assert_eq!(s.json("b.tcm.manifest.json")["exit_code"], 3);
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let s = Sandbox::new();
    s.tiny_data();
    s.ok(&["train", "--model", "tc-rnn", "--data", "tiny.tcd", "--taxonomy", "tiny.tsv", "--out", "init.tcm", "--epochs", "0", "--seed", "4"]);
    let (_, loaded) = checkpoint::load(&s.path("init.tcm")).unwrap();
    let (header, _) = data::read_dataset(&s.path("tiny.tcd")).unwrap();
    let cfg = ModelConfig::toy(ModelKind::TcRnn, header.video_dim + header.audio_dim, 5);
    assert_eq!(loaded, Model::init(cfg, 4).unwrap());
}

#[test]
fn radius_zero_reproduces_plain_netvlad() {
    let s = Sandbox::new();
    s.ok(&["gen-data", "--taxonomy", "toy20.tsv", "--out", "d.tcd", "--videos", "60", "--seed", "3"]);
    let common = ["--data", "d.tcd", "--taxonomy", "toy20.tsv", "--epochs", "2", "--recipe", "toy", "--seed", "5"];
    s.ok(&[&["train", "--model", "tc-netvlad", "--L", "0", "--out", "tc.tcm"][..], &common].concat());
    s.ok(&[&["train", "--model", "netvlad", "--out", "plain.tcm"][..], &common].concat());
    s.ok(&["evaluate", "--checkpoint", "tc.tcm", "plain.tcm", "--data", "d.tcd", "--taxonomy", "toy20.tsv", "--out", "cmp.json"]);
    let report = s.json("cmp.json");
    assert_eq!(overall(&report, 0), overall(&report, 1));
    assert_eq!(report["models"][0]["name"], "tc-netvlad");
    let csv = std::fs::read_to_string(s.path("cmp.csv")).unwrap();
    assert!(csv.starts_with("metric,row,tc-netvlad,netvlad\n"));
}

#[test]
fn perfect_fit_scores_one_and_reports_every_level() {
    let s = Sandbox::new();
    s.tiny_data();
    s.ok(&["train", "--model", "netvlad", "--data", "tiny.tcd", "--taxonomy", "tiny.tsv", "--out", "fit.tcm", "--recipe", "toy", "--lr", "0.05", "--epochs", "40", "--split", "1,0,0"]);
    let args = ["evaluate", "--checkpoint", "fit.tcm", "--data", "tiny.tcd", "--taxonomy", "tiny.tsv", "--subset", "train", "--split", "1,0,0", "--out", "fit.json"];
    let table = s.ok(&args);
    assert!(table.contains("Level 0") && table.contains("Level 1"));
    let report = s.json("fit.json");
    for block in [overall(&report, 0), report["models"][0]["report"]["per_level"][0]["metrics"].clone()] {
        for m in ["gap", "map", "perr", "hit1"] {
            assert_eq!(block[m], 1.0, "{m} in {block}");
        }
    }
    assert_eq!(report["models"][0]["report"]["per_level"].as_array().unwrap().len(), 2);
    let first = s.bytes("fit.json");
    s.ok(&args);
    assert_eq!(s.bytes("fit.json"), first);
    assert_eq!(report["report_version"], 1);
}

#[test]
fn label_space_mismatch_exits_5() {
    let s = Sandbox::new();
    s.tiny_data();
    s.ok(&["train", "--model", "dnn", "--data", "tiny.tcd", "--taxonomy", "tiny.tsv", "--out", "m.tcm", "--epochs", "1"]);
    s.ok(&["gen-data", "--taxonomy", "toy20.tsv", "--out", "other.tcd", "--videos", "8", "--seed", "1"]);
    let out = s.run(&["evaluate", "--checkpoint", "m.tcm", "--data", "other.tcd", "--taxonomy", "toy20.tsv", "--out", "e.json"]);
    assert_eq!(code(&out), Some(5), "{}", text(&out.stderr));
    let out = s.run(&["evaluate", "--checkpoint", "m.tcm", "--data", "tiny.tcd", "--taxonomy", "toy20.tsv", "--out", "e.json"]);
    assert_eq!(code(&out), Some(5), "{}", text(&out.stderr));
}

#[test]
fn non_finite_features_abort_with_exit_4() {
    let s = Sandbox::new();
    let tax = Taxonomy::parse(TINY).unwrap();
    let rec = |id: &str, v: f64| VideoRecord {
        video_id: id.into(),
        video_feats: Tensor::new(&[3, 2], vec![v, 0.5, 0.1, 0.2, 0.3, 0.4]).unwrap(),
        audio_feats: Tensor::new(&[3, 1], vec![0.1, 0.2, 0.3]).unwrap(),
        scene_starts: vec![0],
        truth: LabelSet::from_ids(5, &[0, 2]),
    };
    let recs: Vec<VideoRecord> = (0..10).map(|i| rec(&format!("v{i}"), if i == 3 { f64::NAN } else { 0.2 })).collect();
    data::write_dataset(&s.path("nan.tcd"), DatasetHeader::new(2, 1, 5, 10, tax.checksum()), &recs).unwrap();
    let out = s.run(&["train", "--model", "netvlad", "--data", "nan.tcd", "--taxonomy", "tiny.tsv", "--out", "n.tcm", "--split", "1,0,0", "--batch-size", "4"]);
    assert_eq!(code(&out), Some(4), "{}", text(&out.stderr));
    let err = text(&out.stderr);
    assert!(err.contains("epoch 1") && err.contains("batch"), "{err}");
}

#[test]
fn verify_smoke_passes_quickly() {
    let s = Sandbox::new();
    let t = Instant::now();
    let out = s.ok(&["verify", "--seeds", "1", "--report", "v.json"]);
    let elapsed = t.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "verify --seeds 1 took {elapsed:.2}s");
    assert!(out.contains("INFO equivalence/assignment-set-vs-conv-with-bias"));
    let report = s.json("v.json");
    let biased = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "assignment-set-vs-conv-with-bias").unwrap();
    assert!(biased["max_deviation"].as_f64().unwrap() > 0.0);
    assert!(biased["note"].as_str().unwrap().contains("b = 0"));
    assert_eq!(s.json("v.json.manifest.json")["exit_code"], 0);
}

fn write_checkpoint(path: &Path, kind: ModelKind, mode: TcMode, delta: bool) {
    let mut cfg = ModelConfig::toy(kind, 20, 5);
    cfg.tc_mode = mode;
    let mut m = Model::init(cfg, 2).unwrap();
    if delta {
        m.reset_kernels_to_delta().unwrap();
    }
    checkpoint::save(&m, path).unwrap();
}

#[test]
fn inspect_dumps_kernels_and_attention() {
    let s = Sandbox::new();
    s.tiny_data();
    write_checkpoint(&s.path("delta.tcm"), ModelKind::TcNetvlad, TcMode::Conv, true);
    write_checkpoint(&s.path("rnn.tcm"), ModelKind::TcRnn, TcMode::Exact, false);
    s.ok(&["inspect", "--checkpoint", "delta.tcm", "rnn.tcm", "--out-dir", "dump", "--data", "tiny.tcd", "--record", "vid000003"]);

    let avg = std::fs::read_to_string(s.path("dump/kernels_avg.csv")).unwrap();
    let rows: Vec<&str> = avg.lines().skip(1).collect();
    assert_eq!(rows, ["tc-netvlad,tc.kernel,-2,0", "tc-netvlad,tc.kernel,-1,0", "tc-netvlad,tc.kernel,0,1", "tc-netvlad,tc.kernel,1,0", "tc-netvlad,tc.kernel,2,0"]);
    let raw = std::fs::read_to_string(s.path("dump/kernels.csv")).unwrap();
    for map in 0..4 {
        let n = raw.lines().filter(|l| l.starts_with(&format!("tc-netvlad,tc.kernel,{map},"))).count();
        assert_eq!(n, 5);
    }

    let att = std::fs::read_to_string(s.path("dump/attention.csv")).unwrap();
    let frames = data::read_dataset(&s.path("tiny.tcd")).unwrap().1[3].frames();
    let lines: Vec<&str> = att.lines().skip(1).collect();
    assert_eq!(lines.len(), frames);
    let sum = |col: usize| lines.iter().map(|l| l.split(',').nth(col).unwrap().parse::<f64>().unwrap()).sum::<f64>();
    assert!((sum(2) - 1.0).abs() < 1e-12 && (sum(3) - 1.0).abs() < 1e-12);

    let unknown = s.run(&["inspect", "--checkpoint", "rnn.tcm", "--out-dir", "dump2", "--data", "tiny.tcd", "--record", "nope"]);
    assert_eq!(code(&unknown), Some(5));
}

#[test]
fn config_file_values_yield_to_flags() {
    let s = Sandbox::new();
    std::fs::write(s.path("run.cfg"), "# generation defaults\ntaxonomy = tiny.tsv\nvideos = 6\nseed = 2\nsigma = 0.4\n").unwrap();
    s.ok(&["gen-data", "--config", "run.cfg", "--out", "c.tcd", "--seed", "9"]);
    let m = s.json("c.tcd.manifest.json");
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(m["config"]["videos"], 6);
    assert_eq!(m["config"]["sigma"], 0.4);
    assert!(!m["argv"].as_array().unwrap().iter().any(|a| a == "--config"));
}

#[test]
fn replay_reproduces_outputs() {
    let s = Sandbox::new();
    s.tiny_data();
    s.ok(&["train", "--model", "tc-netvlad", "--data", "tiny.tcd", "--taxonomy", "tiny.tsv", "--out", "r.tcm", "--epochs", "2", "--recipe", "toy"]);
    let before = s.bytes("r.tcm");
    let out = s.ok(&["replay", "r.tcm.manifest.json"]);
    assert!(out.contains("identical"), "{out}");
    assert_eq!(s.bytes("r.tcm"), before);
    assert_eq!(s.json("r.tcm.manifest.json.replay.json")["metrics"]["identical"], true);
}

#[test]
fn thread_count_does_not_change_results() {
    let s = Sandbox::new();
    s.tiny_data();
    let args = |out: &'static str| ["train", "--model", "tc-rnn", "--data", "tiny.tcd", "--taxonomy", "tiny.tsv", "--out", out, "--epochs", "2", "--recipe", "toy", "--batch-size", "8"];
    for (out, threads) in [("t1.tcm", "1"), ("t3.tcm", "3")] {
        let o = s.run_env(&args(out), &[("TEMPOCOH_THREADS", threads)]);
        assert_eq!(code(&o), Some(0), "{}", text(&o.stderr));
    }
    assert_eq!(s.bytes("t1.tcm"), s.bytes("t3.tcm"));
    assert_eq!(code(&s.run_env(&args("t0.tcm"), &[("TEMPOCOH_THREADS", "0")])), Some(2));
}
