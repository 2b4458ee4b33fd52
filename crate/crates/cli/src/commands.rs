//! Subcommand bodies. Each fills in the run manifest as it goes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use tempocoh::coherence::DistanceScale;
use tempocoh::data::{self, pad_or_truncate, split, DatasetHeader, DatasetReader, SynthConfig, VideoRecord};
use tempocoh::loss::{HierVariant, LossConfig};
use tempocoh::metrics::{comparison_csv, per_level_report, MetricReport};
use tempocoh::models::checkpoint::{self, CheckpointMeta};
use tempocoh::models::train::{eval_records, train, Example, LossKind, TrainConfig};
use tempocoh::models::{Model, ModelConfig, ModelInput, ModelKind, TcMode};
use tempocoh::taxonomy::Taxonomy;
use tempocoh::verify::{self, VerifyOptions};

use crate::args::*;
use crate::error::CliError;
use crate::manifest::{write_text, RunManifest};

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    Taxonomy::parse(&text).map_err(|e| io(path, e))
}

/// Reads a dataset and checks it was generated against `tax`.
fn load_dataset(path: &Path, tax: &Taxonomy) -> Result<(DatasetHeader, Vec<VideoRecord>), CliError> {
    let (header, records) = data::read_dataset(path)?;
    check_header(&header, tax)?;
    Ok((header, records))
}

fn check_header(header: &DatasetHeader, tax: &Taxonomy) -> Result<(), CliError> {
    if header.num_labels != tax.len() {
        return Err(CliError::Mismatch(format!("dataset has {} labels, taxonomy has {}", header.num_labels, tax.len())));
    }
    if header.taxonomy_checksum != tax.checksum() {
        return Err(CliError::Mismatch("dataset was generated with a different taxonomy (checksum differs)".into()));
    }
    Ok(())
}

fn select(records: &[VideoRecord], subset: Subset, s: &SplitArgs) -> Result<Vec<Example>, CliError> {
    let parts = split(records.len(), s.split, s.split_seed)?;
    let ids: Vec<usize> = match subset {
        Subset::All => (0..records.len()).collect(),
        Subset::Train => parts.train,
        Subset::Val => parts.val,
        Subset::Test => parts.test,
    };
    Ok(ids.into_iter().map(|i| Example::from_record(&records[i])).collect())
}

/// How the label bias enters each coherent assignment.
fn bias_mode(cfg: &ModelConfig) -> &'static str {
    let coherent = matches!(cfg.kind, ModelKind::TcNetvlad | ModelKind::TcEns);
    match (coherent, cfg.tc_mode) {
        (false, _) => "none",
        (true, TcMode::Conv) => "conv-form: bias added after window aggregation",
        (true, _) => "set-form: bias inside every aggregated logit",
    }
}

fn model_conventions(m: &mut RunManifest, cfg: &ModelConfig, top_n: usize) {
    m.convention("bias_mode", bias_mode(cfg));
    m.convention("gap_top_n", top_n.to_string());
    m.convention("perr_definition", "per-record");
    m.convention("attention_self_term", "window");
    m.convention("distance_scale", format!("{:?}", cfg.distance_scale).to_lowercase());
}

pub fn gen_data(a: &GenDataArgs, m: &mut RunManifest) -> Result<(), CliError> {
    m.config(a);
    m.seed("data", a.seed);
    let tax = load_taxonomy(&a.taxonomy)?;
    let cfg = SynthConfig {
        num_videos: a.videos as usize,
        frames_min: a.frames_min,
        frames_max: a.frames_max,
        scenes_min: a.scenes_min,
        scenes_max: a.scenes_max,
        sigma: a.sigma,
        audio_correlation: a.audio_correlation,
        video_dim: a.video_dim,
        audio_dim: a.audio_dim,
        centroid_scale: a.centroid_scale,
        seed: a.seed,
    };
    if a.max_frames == Some(0) {
        return Err(CliError::Usage("--max-frames must be at least 1".into()));
    }
    let mut records = data::generate_synthetic(&cfg, &tax)?;
    if let Some(max) = a.max_frames {
        records = records.iter().map(|r| pad_or_truncate(r, max)).collect::<Result<_, _>>()?;
    }
    let header = DatasetHeader::new(a.video_dim, a.audio_dim, tax.len(), records.len() as u64, tax.checksum());
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    data::write_dataset(&a.out, header, &records)?;
    m.output(&a.out)?;
    let frames: usize = records.iter().map(|r| r.frames()).sum();
    m.metrics = json!({ "records": records.len(), "frames": frames, "labels": tax.len() });
    println!("wrote {} records ({frames} frames) to {}", records.len(), a.out.display());
    Ok(())
}

pub fn train_cmd(a: &TrainArgs, m: &mut RunManifest) -> Result<(), CliError> {
    m.config(a);
    m.seed("init_and_shuffle", a.seed);
    m.seed("split", a.split.split_seed);
    let tax = load_taxonomy(&a.taxonomy)?;
    let (header, records) = load_dataset(&a.data, &tax)?;
    let train_set = select(&records, Subset::Train, &a.split)?;
    let val_set = select(&records, Subset::Val, &a.split)?;
    let cfg = ModelConfig {
        kind: a.model,
        input_dim: header.video_dim + header.audio_dim,
        num_labels: tax.len(),
        clusters: a.clusters,
        hidden: a.hidden,
        heads: a.heads,
        width: a.width,
        dnn_hidden: a.dnn_hidden,
        radius: a.radius,
        tc_mode: a.tc_mode,
        kernel_width: a.kernel_width,
        feature_maps: a.feature_maps,
        distance_scale: match a.distance_scale {
            ScaleArg::Raw => DistanceScale::Raw,
            ScaleArg::PerDimension => DistanceScale::PerDimension,
        },
    };
    let base = match a.recipe {
        Recipe::Paper => TrainConfig::default(),
        Recipe::Toy => TrainConfig::toy(),
    };
    let variant = match a.hier_variant {
        VariantArg::Literal => HierVariant::Literal,
        VariantArg::Blended => HierVariant::Blended,
    };
    let tcfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        loss: match a.loss {
            LossArg::Bce => LossKind::Bce,
            LossArg::Hier => LossKind::Hier,
        },
        loss_config: LossConfig { lambda: a.lambda, variant, ..LossConfig::default() },
        top_n: a.top_n,
    };
    model_conventions(m, &cfg, a.top_n);
    m.convention("loss", format!("{:?}", tcfg.loss).to_lowercase());
    m.convention("hier_variant", format!("{variant:?}").to_lowercase());
    m.convention("learning_rate", tcfg.learning_rate.to_string());
    m.convention("batch_size", tcfg.batch_size.to_string());

    let model = Model::init(cfg, a.seed)?;
    let out = train(model, &train_set, &val_set, &tcfg, &tax)?;
    checkpoint::save(&out.model, &a.out)?;
    m.output(&a.out)?;

    let trace_path = a.trace.clone().unwrap_or_else(|| crate::manifest::sibling(&a.out, ".trace.csv"));
    let mut csv = String::from("model,epoch,train_loss,val_gap\n");
    for e in &out.trace {
        let gap = e.val_gap.map_or(String::new(), |g| g.to_string());
        let _ = writeln!(csv, "{},{},{},{gap}", e.model, e.epoch, e.train_loss);
    }
    write_text(&trace_path, &csv)?;
    m.output(&trace_path)?;
    m.metrics = json!({
        "train_records": train_set.len(),
        "val_records": val_set.len(),
        "best_epochs": out.best_epochs,
        "trace": out.trace,
    });
    for e in &out.trace {
        println!("{} epoch {:>3}  loss {:.6}  val GAP {}", e.model, e.epoch, e.train_loss, e.val_gap.map_or("-".into(), |g| format!("{g:.4}")));
    }
    println!("checkpoint {} (kept epochs {:?})", a.out.display(), out.best_epochs);
    Ok(())
}

/// Display names for checkpoints; repeated kinds get a numeric suffix.
fn model_names(metas: &[CheckpointMeta]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    metas
        .iter()
        .map(|meta| {
            let base = meta.config.kind.to_string();
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}#{n}")
            }
        })
        .collect()
}

fn check_model(model: &Model, path: &Path, header: Option<&DatasetHeader>, tax: &Taxonomy) -> Result<(), CliError> {
    if model.num_labels() != tax.len() {
        return Err(CliError::Mismatch(format!("{} predicts {} labels, taxonomy has {}", path.display(), model.num_labels(), tax.len())));
    }
    if let Some(h) = header {
        let dim = h.video_dim + h.audio_dim;
        if model.config().input_dim != dim {
            return Err(CliError::Mismatch(format!("{} expects {}-dim frames, dataset has {dim}", path.display(), model.config().input_dim)));
        }
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, m: &mut RunManifest) -> Result<(), CliError> {
    m.config(a);
    m.seed("split", a.split.split_seed);
    m.convention("gap_top_n", a.top_n.to_string());
    m.convention("perr_definition", "per-record");
    if a.top_n == 0 {
        return Err(CliError::Usage("--top-n must be positive".into()));
    }
    let tax = load_taxonomy(&a.taxonomy)?;
    let (header, records) = load_dataset(&a.data, &tax)?;
    let examples = select(&records, a.subset, &a.split)?;
    if examples.is_empty() {
        return Err(CliError::Usage(format!("the {:?} subset is empty", a.subset).to_lowercase()));
    }
    let loaded: Vec<(CheckpointMeta, Model)> = a.checkpoint.iter().map(|p| checkpoint::load(p)).collect::<Result<_, _>>()?;
    for ((_, model), path) in loaded.iter().zip(&a.checkpoint) {
        check_model(model, path, Some(&header), &tax)?;
    }
    let names = model_names(&loaded.iter().map(|(meta, _)| meta.clone()).collect::<Vec<_>>());
    let mut reports: Vec<(String, MetricReport)> = Vec::new();
    for ((meta, model), name) in loaded.iter().zip(&names) {
        m.convention(&format!("bias_mode[{name}]"), bias_mode(&meta.config));
        let recs = eval_records(model, &examples)?;
        let report = per_level_report(&recs, &tax, a.top_n).map_err(|e| CliError::Mismatch(e.to_string()))?;
        reports.push((name.clone(), report));
    }
    let body = json!({
        "report_version": tempocoh::metrics::REPORT_VERSION,
        "subset": a.subset,
        "top_n": a.top_n,
        "perr_definition": "per-record",
        "models": reports.iter().zip(&a.checkpoint).map(|((name, r), p)| json!({
            "name": name,
            "checkpoint": p.display().to_string(),
            "report": r,
        })).collect::<Vec<_>>(),
    });
    write_text(&a.out, &(serde_json::to_string_pretty(&body).expect("report serializes") + "\n"))?;
    m.output(&a.out)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_text(&csv_path, &comparison_csv(&reports))?;
    m.output(&csv_path)?;
    m.metrics = body["models"].clone();
    for (name, r) in &reports {
        println!("{name} ({} records, {:?} subset)", r.records, a.subset);
        print!("{}", r.table());
    }
    Ok(())
}

pub fn verify_cmd(a: &VerifyArgs, m: &mut RunManifest) -> Result<(), CliError> {
    m.config(a);
    m.seed("base", a.base_seed);
    m.convention("equivalence_bias", "zero (non-zero bias reported as informational)");
    m.convention("attention_self_term", "window");
    let report = verify::run_all(&VerifyOptions { seeds: a.seeds, base_seed: a.base_seed });
    for c in &report.checks {
        println!("{}", c.line());
    }
    println!("{} checks in {:.2}s", report.checks.len(), report.elapsed_seconds);
    let mut saved = serde_json::to_value(&report).expect("report serializes");
    // Wall time varies between runs; the file holds only reproducible values.
    saved.as_object_mut().expect("object").remove("elapsed_seconds");
    write_text(&a.report, &(serde_json::to_string_pretty(&saved).expect("serializes") + "\n"))?;
    m.output(&a.report)?;
    m.metrics = json!({ "checks": report.checks.len(), "passed": report.passed() });
    let failures: Vec<String> = report
        .failures()
        .map(|c| format!("{}/{} (seed {})", c.suite, c.name, c.failing_seed.map_or("-".into(), |s| s.to_string())))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failures.join(", ")))
    }
}

/// Streams the dataset until `id` is found.
fn find_record(path: &Path, id: &str) -> Result<(DatasetHeader, VideoRecord), CliError> {
    let mut reader = DatasetReader::open(path)?;
    let header = *reader.header();
    for rec in &mut reader {
        let rec = rec?;
        if rec.video_id == id {
            return Ok((header, rec));
        }
    }
    Err(CliError::Mismatch(format!("record {id:?} not found in {}", path.display())))
}

/// The same weights with coherence switched off: radius 0 and unit-impulse kernels.
fn without_coherence(model: &Model) -> Result<Model, CliError> {
    let mut cfg = *model.config();
    cfg.radius = 0;
    let mut plain = Model::from_parts(cfg, model.params().clone())?;
    plain.reset_kernels_to_delta()?;
    Ok(plain)
}

pub fn inspect(a: &InspectArgs, m: &mut RunManifest) -> Result<(), CliError> {
    m.config(a);
    let loaded: Vec<(CheckpointMeta, Model)> = a.checkpoint.iter().map(|p| checkpoint::load(p)).collect::<Result<_, _>>()?;
    let names = model_names(&loaded.iter().map(|(meta, _)| meta.clone()).collect::<Vec<_>>());
    std::fs::create_dir_all(&a.out_dir).map_err(|e| io(&a.out_dir, e))?;

    let mut raw = String::from("model,param,map,offset,weight\n");
    let mut avg = String::from("model,param,offset,weight\n");
    let mut peaks = serde_json::Map::new();
    for ((_, model), name) in loaded.iter().zip(&names) {
        for (param, kernel) in model.kernels()? {
            let half = (kernel.width() / 2) as isize;
            for f in 0..kernel.maps() {
                for o in 0..kernel.width() {
                    let _ = writeln!(raw, "{name},{param},{f},{},{}", o as isize - half, kernel.weights().get2(f, o));
                }
            }
            for (o, w) in kernel.normalized_average().iter().enumerate() {
                let _ = writeln!(avg, "{name},{param},{},{w}", o as isize - half);
            }
            println!("{name} {param}: averaged kernel peaks at offset {}", kernel.peak_offset());
            peaks.insert(format!("{name}/{param}"), json!(kernel.peak_offset()));
        }
    }
    let kernels_path = a.out_dir.join("kernels.csv");
    let avg_path = a.out_dir.join("kernels_avg.csv");
    write_text(&kernels_path, &raw)?;
    write_text(&avg_path, &avg)?;
    m.output(&kernels_path)?;
    m.output(&avg_path)?;

    if let (Some(data_path), Some(id)) = (&a.data, &a.record) {
        let (header, rec) = find_record(data_path, id)?;
        let features = rec.fused();
        let input = ModelInput::with_scenes(&features, &rec.scene_starts);
        let mut csv = String::from("model,frame,with_tc,without_tc\n");
        for ((_, model), (name, path)) in loaded.iter().zip(names.iter().zip(&a.checkpoint)) {
            let dim = header.video_dim + header.audio_dim;
            if model.config().input_dim != dim {
                return Err(CliError::Mismatch(format!("{} expects {}-dim frames, dataset has {dim}", path.display(), model.config().input_dim)));
            }
            let (Some(with), Some(without)) = (model.attention(&input)?, without_coherence(model)?.attention(&input)?) else {
                continue;
            };
            for (t, (w, p)) in with.iter().zip(&without).enumerate() {
                let _ = writeln!(csv, "{name},{t},{w},{p}");
            }
        }
        let att_path = a.out_dir.join("attention.csv");
        write_text(&att_path, &csv)?;
        m.output(&att_path)?;
    }
    m.metrics = json!({ "kernel_peak_offsets": peaks });
    Ok(())
}

/// Manifest path used when `--manifest` is absent.
pub fn default_manifest(cmd: &Command) -> PathBuf {
    use crate::manifest::sibling;
    match cmd {
        Command::GenData(a) => sibling(&a.out, ".manifest.json"),
        Command::Train(a) => sibling(&a.out, ".manifest.json"),
        Command::Evaluate(a) => sibling(&a.out, ".manifest.json"),
        Command::Verify(a) => sibling(&a.report, ".manifest.json"),
        Command::Inspect(a) => a.out_dir.join("manifest.json"),
        Command::Replay(a) => sibling(&a.manifest_path, ".replay.json"),
    }
}
