//! Oracle suites: every vectorized path checked against an independent
//! route, with the maximum deviation and first failing seed per property.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coherence::{self, Affinity, DistanceScale, GateMatrix, SelfTerm, TcKernel};
use crate::data::synth::derive_seed;
use crate::loss::{self, HierVariant, LossConfig, PredictionBatch, TargetBatch};
use crate::metrics::{self, EvalRecord};
use crate::models::train::{example_loss_on_tape, Example, LossKind, TrainConfig};
use crate::models::{Model, ModelConfig, ModelInput, ModelKind, TcMode};
use crate::oracle::{self, Matrix};
use crate::taxonomy::{LabelSet, Taxonomy};
use crate::tensor::{self, check_gradients, BinaryOp, Tape, Tensor, UnaryOp, Var};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;
pub type CaseResult = std::result::Result<f64, BoxError>;

/// Tolerances of the gating properties.
pub const EQUIVALENCE_TOL: f64 = 1e-10;
pub const REDUCTION_TOL: f64 = 1e-12;
pub const ORACLE_TOL: f64 = 1e-12;
pub const MODEL_ORACLE_TOL: f64 = 1e-10;
pub const NORMALIZATION_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const METRIC_TOL: f64 = 1e-12;
/// Central-difference step of gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Gradient checks run at most this many seeds per case.
pub const GRADIENT_SEEDS: u64 = 20;
/// Random metric sets checked in addition to the enumeration.
pub const RANDOM_METRIC_SETS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Reported deviation of a documented non-identity; never gating.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub status: Status,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub cases: u64,
    pub failing_seed: Option<u64>,
    pub note: Option<String>,
}

impl Check {
    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        };
        let mut s = format!(
            "{tag} {}/{}: max deviation {:.3e} (tolerance {:.0e}, {} cases)",
            self.suite, self.name, self.max_deviation, self.tolerance, self.cases
        );
        if let Some(seed) = self.failing_seed {
            s.push_str(&format!(", first failing seed {seed}"));
        }
        if let Some(n) = &self.note {
            s.push_str(&format!(" [{n}]"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seeds: u64,
    pub checks: Vec<Check>,
    pub elapsed_seconds: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seeds: u64,
    pub base_seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seeds: 100, base_seed: 0 }
    }
}

/// Accumulates the worst deviation of one property over seeds.
struct Tracker {
    suite: &'static str,
    name: String,
    tol: f64,
    info: bool,
    max_dev: f64,
    cases: u64,
    failing_seed: Option<u64>,
    error: Option<String>,
    note: Option<String>,
}

impl Tracker {
    fn new(suite: &'static str, name: impl Into<String>, tol: f64) -> Self {
        Tracker { suite, name: name.into(), tol, info: false, max_dev: 0.0, cases: 0, failing_seed: None, error: None, note: None }
    }

    fn info(mut self, note: impl Into<String>) -> Self {
        self.info = true;
        self.note = Some(note.into());
        self
    }

    fn observe(&mut self, seed: u64, r: CaseResult) {
        self.cases += 1;
        match r {
            Ok(dev) => {
                let dev = if dev.is_nan() { f64::INFINITY } else { dev };
                self.max_dev = self.max_dev.max(dev);
                if dev > self.tol && self.failing_seed.is_none() && !self.info {
                    self.failing_seed = Some(seed);
                }
            }
            Err(e) => {
                self.max_dev = f64::INFINITY;
                self.failing_seed.get_or_insert(seed);
                self.error.get_or_insert_with(|| e.to_string());
            }
        }
    }

    fn finish(self) -> Check {
        let status = if self.error.is_some() || (!self.info && self.failing_seed.is_some()) {
            Status::Fail
        } else if self.info {
            Status::Info
        } else {
            Status::Pass
        };
        let note = match (self.error, self.note) {
            (Some(e), _) => Some(format!("error: {e}")),
            (None, n) => n,
        };
        Check {
            suite: self.suite.into(),
            name: self.name,
            status,
            max_deviation: self.max_dev,
            tolerance: self.tol,
            cases: self.cases,
            failing_seed: self.failing_seed,
            note,
        }
    }
}

fn rng_for(opts: &VerifyOptions, salt: &str, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(opts.base_seed, salt, seed))
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

fn rows(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn max_diff(a: &Matrix, b: &Tensor) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m = m.max((v - b.get2(i, j)).abs());
        }
    }
    m
}

fn max_diff_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random valid scene starts for `t` frames.
fn rand_scenes(rng: &mut ChaCha8Rng, t: usize) -> Vec<usize> {
    let mut starts = vec![0];
    starts.extend((1..t).filter(|_| rng.random_bool(0.3)));
    starts
}

/// Random coherence instance: `T ≤ 16`, `K ≤ 8`, `D ≤ 8`, `L ≤ 3`.
struct Instance {
    x: Tensor,
    w: Tensor,
    b: Tensor,
    radius: usize,
}

impl Instance {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let t = rng.random_range(1..=16);
        let k = rng.random_range(1..=8);
        let d = rng.random_range(1..=8);
        Instance {
            x: rand_tensor(rng, &[t, d], -1.0, 1.0),
            w: rand_tensor(rng, &[k, d], -1.0, 1.0),
            b: rand_tensor(rng, &[k], -1.0, 1.0),
            radius: rng.random_range(0..=3),
        }
    }

    fn q(&self) -> Tensor {
        tensor::matmul(&self.x, &tensor::transpose(&self.w).expect("matrix")).expect("shapes agree")
    }

    fn q_biased(&self) -> Tensor {
        let q = self.q();
        let k = self.b.numel();
        Tensor::new(q.dims(), q.data().iter().enumerate().map(|(i, v)| v + self.b.data()[i % k]).collect()).expect("same")
    }

    fn affinity(&self) -> Affinity {
        coherence::affinity(&self.x, DistanceScale::Raw).expect("matrix")
    }
}

pub fn run_all(opts: &VerifyOptions) -> VerifyReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    checks.extend(equivalence(opts));
    checks.extend(reductions(opts));
    checks.extend(oracle_matches(opts));
    checks.extend(normalization(opts));
    checks.extend(gradients(opts));
    checks.extend(metric_oracles(opts));
    checks.extend(hier_loss_cases());
    VerifyReport { seeds: opts.seeds, checks, elapsed_seconds: start.elapsed().as_secs_f64() }
}

/// Set form against convolution form.
pub fn equivalence(opts: &VerifyOptions) -> Vec<Check> {
    let mut assign = Tracker::new("equivalence", "assignment-set-vs-conv-zero-bias", EQUIVALENCE_TOL);
    let mut biased = Tracker::new("equivalence", "assignment-set-vs-conv-with-bias", EQUIVALENCE_TOL).info(
        "with b ≠ 0 the set form carries an extra b_k·Σ_{j∈N_i} d_ij in each exponent; the forms agree only for b = 0",
    );
    let mut attn = Tracker::new("equivalence", "attention-set-vs-conv-window", EQUIVALENCE_TOL);
    let mut doubled = Tracker::new("equivalence", "attention-conv-window-plus-self", EQUIVALENCE_TOL)
        .info("adding e_j outside the window sum counts the attended frame twice since d'_jj = 1");
    for seed in 0..opts.seeds {
        let mut rng = rng_for(opts, "equivalence", seed);
        let inst = Instance::draw(&mut rng);
        let d = inst.affinity();
        let zero_b = Tensor::zeros(&[inst.b.numel()]);
        assign.observe(seed, (|| {
            let set = coherence::tc_assignment(&inst.q(), &d, inst.radius)?;
            let conv = coherence::tc_assignment_conv(&inst.x, &inst.w, &zero_b, &d, inst.radius)?;
            Ok(set.values().max_abs_diff(conv.values()))
        })());
        biased.observe(seed, (|| {
            let set = coherence::tc_assignment(&inst.q_biased(), &d, inst.radius)?;
            let conv = coherence::tc_assignment_conv(&inst.x, &inst.w, &inst.b, &d, inst.radius)?;
            Ok(set.values().max_abs_diff(conv.values()))
        })());
        let t = inst.x.rows();
        let e = rand_tensor(&mut rng, &[t], -2.0, 2.0);
        attn.observe(seed, (|| {
            let set = coherence::tc_attention(&e, &inst.x, inst.radius)?;
            let conv = coherence::tc_attention_conv(&e, &d, inst.radius, SelfTerm::Window)?;
            Ok(set.values().max_abs_diff(conv.values()))
        })());
        doubled.observe(seed, (|| {
            let set = coherence::tc_attention(&e, &inst.x, inst.radius)?;
            let conv = coherence::tc_attention_conv(&e, &d, inst.radius, SelfTerm::WindowPlusSelf)?;
            Ok(set.values().max_abs_diff(conv.values()))
        })());
    }
    vec![assign.finish(), biased.finish(), attn.finish(), doubled.finish()]
}

fn softmax_vec(e: &Tensor) -> tensor::Result<Tensor> {
    tensor::softmax_lastdim(e)
}

/// Configuration used for model-level reductions and gradient checks.
fn small_config(kind: ModelKind, rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        kind,
        input_dim: 3,
        num_labels: 3,
        clusters: 3,
        hidden: 8,
        heads: 2,
        width: 4,
        dnn_hidden: 4,
        radius: rng.random_range(1..=2),
        tc_mode: TcMode::Exact,
        kernel_width: 3,
        feature_maps: 2,
        distance_scale: DistanceScale::Raw,
    }
}

/// A coherent model and its plain counterpart sharing every common parameter.
fn reduction_pair(cfg: ModelConfig, seed: u64) -> Result<(Model, Model), BoxError> {
    let mut tc = Model::init(cfg, seed)?;
    tc.reset_kernels_to_delta()?;
    let plain = Model::init(cfg.with_kind(cfg.kind.plain()), seed)?;
    for (name, value) in plain.params().iter() {
        if tc.params().get(name)? != value {
            return Err(format!("parameter {name} differs between {} and {}", cfg.kind, cfg.kind.plain()).into());
        }
    }
    Ok((tc, plain))
}

/// Coherence switched off collapses to the plain counterpart.
pub fn reductions(opts: &VerifyOptions) -> Vec<Check> {
    let s = "reduction";
    let mut l0 = Tracker::new(s, "assignment-radius-0-is-vanilla", REDUCTION_TOL);
    let mut z0 = Tracker::new(s, "gated-all-zero-is-vanilla", REDUCTION_TOL);
    let mut z1 = Tracker::new(s, "gated-all-one-is-ungated", REDUCTION_TOL);
    let mut conv_l0 = Tracker::new(s, "conv-assignment-radius-0-is-vanilla", REDUCTION_TOL);
    let mut att_l0 = Tracker::new(s, "attention-radius-0-is-softmax", REDUCTION_TOL);
    let mut delta = Tracker::new(s, "delta-kernel-layer-is-identity", REDUCTION_TOL);
    let model_cases: [(&str, ModelKind, TcMode, bool); 7] = [
        ("tc-netvlad-radius-0", ModelKind::TcNetvlad, TcMode::Exact, true),
        ("tc-netvlad-learned-gate-radius-0", ModelKind::TcNetvlad, TcMode::LearnedGate, true),
        ("tc-netvlad-delta-conv", ModelKind::TcNetvlad, TcMode::Conv, false),
        ("tc-rnn-radius-0", ModelKind::TcRnn, TcMode::Exact, true),
        ("tc-rnn-delta-conv", ModelKind::TcRnn, TcMode::Conv, false),
        ("tc-tm-delta-kernels", ModelKind::TcTm, TcMode::Exact, false),
        ("tc-ens-radius-0-delta", ModelKind::TcEns, TcMode::Exact, true),
    ];
    let mut model_trackers: Vec<Tracker> =
        model_cases.iter().map(|(n, ..)| Tracker::new(s, format!("{n}-matches-plain"), REDUCTION_TOL)).collect();

    for seed in 0..opts.seeds {
        let mut rng = rng_for(opts, "reduction", seed);
        let inst = Instance::draw(&mut rng);
        let d = inst.affinity();
        let q = inst.q();
        let t = q.rows();
        l0.observe(seed, (|| {
            let a = coherence::tc_assignment(&q, &d, 0)?;
            Ok(a.values().max_abs_diff(coherence::vanilla_assignment(&q)?.values()))
        })());
        z0.observe(seed, (|| {
            let a = coherence::tc_assignment_gated(&q, &d, &GateMatrix::constant(t, 0.0), inst.radius)?;
            Ok(a.values().max_abs_diff(coherence::vanilla_assignment(&q)?.values()))
        })());
        z1.observe(seed, (|| {
            let a = coherence::tc_assignment_gated(&q, &d, &GateMatrix::constant(t, 1.0), inst.radius)?;
            Ok(a.values().max_abs_diff(coherence::tc_assignment(&q, &d, inst.radius)?.values()))
        })());
        conv_l0.observe(seed, (|| {
            let a = coherence::tc_assignment_conv(&inst.x, &inst.w, &inst.b, &d, 0)?;
            Ok(a.values().max_abs_diff(coherence::vanilla_assignment(&inst.q_biased())?.values()))
        })());
        let e = rand_tensor(&mut rng, &[t], -2.0, 2.0);
        att_l0.observe(seed, (|| {
            let a = coherence::tc_attention(&e, &inst.x, 0)?;
            Ok(a.values().max_abs_diff(&softmax_vec(&e)?))
        })());
        let maps = rng.random_range(1..=4);
        let width = 2 * rng.random_range(0..=3) + 1;
        delta.observe(seed, (|| {
            let out = coherence::tc_conv_layer(&inst.x, &TcKernel::delta(maps, width)?)?;
            Ok(out.max_abs_diff(&inst.x))
        })());

        let frame_count = rng.random_range(1..=7);
        let frames = rand_tensor(&mut rng, &[frame_count, 3], -1.0, 1.0);
        let scenes = rand_scenes(&mut rng, frames.rows());
        let input = ModelInput::with_scenes(&frames, &scenes);
        for ((_, kind, mode, zero_radius), tracker) in model_cases.iter().zip(model_trackers.iter_mut()) {
            let mut cfg = small_config(*kind, &mut rng);
            cfg.tc_mode = *mode;
            if *zero_radius {
                cfg.radius = 0;
            }
            tracker.observe(seed, (|| {
                let (tc, plain) = reduction_pair(cfg, seed)?;
                Ok(max_diff_vec(&tc.predict(&input)?, &plain.predict(&input)?))
            })());
        }
    }
    let mut out = vec![l0.finish(), z0.finish(), z1.finish(), conv_l0.finish(), att_l0.finish(), delta.finish()];
    out.extend(model_trackers.into_iter().map(Tracker::finish));
    out
}

/// Vectorized operators against literal scalar-loop evaluation.
pub fn oracle_matches(opts: &VerifyOptions) -> Vec<Check> {
    let s = "oracle";
    let mut aff = Tracker::new(s, "affinity", ORACLE_TOL);
    let mut vanilla = Tracker::new(s, "vanilla-assignment", ORACLE_TOL);
    let mut assign = Tracker::new(s, "tc-assignment", ORACLE_TOL);
    let mut gated = Tracker::new(s, "tc-assignment-gated", ORACLE_TOL);
    let mut attn = Tracker::new(s, "tc-attention", ORACLE_TOL);
    let mut conv = Tracker::new(s, "tc-assignment-conv", ORACLE_TOL);
    let mut attn_conv = Tracker::new(s, "tc-attention-conv", ORACLE_TOL);
    let mut layer = Tracker::new(s, "tc-conv-layer", ORACLE_TOL);
    let mut compose = Tracker::new(s, "conv-assignment-as-convolution", ORACLE_TOL);
    let mut gates = Tracker::new(s, "scene-gates-partition", 0.0);
    let mut perturb = Tracker::new(s, "gated-cross-scene-perturbation", ORACLE_TOL);
    let mut vlad = Tracker::new(s, "netvlad-forward", MODEL_ORACLE_TOL);
    let mut vlad_perm = Tracker::new(s, "netvlad-frame-permutation", MODEL_ORACLE_TOL);

    for seed in 0..opts.seeds {
        let mut rng = rng_for(opts, "oracle", seed);
        let inst = Instance::draw(&mut rng);
        let d = inst.affinity();
        let dm = rows(d.values());
        let xm = rows(&inst.x);
        let q = inst.q();
        let qm = rows(&q);
        let t = q.rows();
        aff.observe(seed, Ok(max_diff(&oracle::affinity(&xm), d.values())));
        vanilla.observe(seed, (|| {
            let a = coherence::vanilla_assignment(&q)?;
            Ok(max_diff(&oracle::tc_assignment(&qm, &dm, None, 0), a.values()))
        })());
        assign.observe(seed, (|| {
            let a = coherence::tc_assignment(&q, &d, inst.radius)?;
            Ok(max_diff(&oracle::tc_assignment(&qm, &dm, None, inst.radius), a.values()))
        })());
        let scenes = rand_scenes(&mut rng, t);
        let z = coherence::gates_from_scenes(&scenes, t).expect("valid scenes");
        let zm = rows(z.values());
        gated.observe(seed, (|| {
            let a = coherence::tc_assignment_gated(&q, &d, &z, inst.radius)?;
            Ok(max_diff(&oracle::tc_assignment(&qm, &dm, Some(&zm), inst.radius), a.values()))
        })());
        gates.observe(seed, {
            let segment = |i: usize| scenes.iter().filter(|&&s| s <= i).count();
            let mut mismatches = 0.0;
            for i in 0..t {
                for j in 0..t {
                    let expect = if segment(i) == segment(j) { 1.0 } else { 0.0 };
                    if z.values().get2(i, j) != expect {
                        mismatches += 1.0;
                    }
                }
            }
            Ok(mismatches)
        });
        perturb.observe(seed, (|| {
            let full = coherence::tc_assignment_gated(&q, &d, &z, inst.radius)?;
            let mut worst: f64 = 0.0;
            for i in 0..t {
                let mut zeroed = q.data().to_vec();
                for j in 0..t {
                    if z.values().get2(i, j) == 0.0 {
                        zeroed[j * q.cols()..(j + 1) * q.cols()].fill(0.0);
                    }
                }
                let alt = coherence::tc_assignment_gated(&Tensor::new(q.dims(), zeroed)?, &d, &z, inst.radius)?;
                worst = worst.max(max_diff_vec(full.values().row(i), alt.values().row(i)));
            }
            Ok(worst)
        })());
        let e = rand_tensor(&mut rng, &[t], -2.0, 2.0);
        attn.observe(seed, (|| {
            let a = coherence::tc_attention(&e, &inst.x, inst.radius)?;
            Ok(max_diff_vec(&oracle::tc_attention(e.data(), &xm, inst.radius), a.weights()))
        })());
        conv.observe(seed, (|| {
            let a = coherence::tc_assignment_conv(&inst.x, &inst.w, &inst.b, &d, inst.radius)?;
            Ok(max_diff(&oracle::tc_assignment_conv(&xm, &rows(&inst.w), inst.b.data(), &dm, inst.radius), a.values()))
        })());
        attn_conv.observe(seed, (|| {
            let mut worst: f64 = 0.0;
            for conv_self in [SelfTerm::Window, SelfTerm::WindowPlusSelf] {
                let a = coherence::tc_attention_conv(&e, &d, inst.radius, conv_self)?;
                worst = worst.max(max_diff_vec(&oracle::tc_attention_conv(e.data(), &dm, inst.radius, conv_self), a.weights()));
            }
            Ok(worst)
        })());
        let maps = rng.random_range(1..=4);
        let width = 2 * rng.random_range(0..=3) + 1;
        let kernel = rand_tensor(&mut rng, &[maps, width], -1.0, 1.0);
        layer.observe(seed, (|| {
            let out = coherence::tc_conv_layer(&inst.x, &TcKernel::new(kernel.clone())?)?;
            Ok(max_diff(&oracle::conv_layer(&xm, &rows(&kernel)), &out))
        })());
        compose.observe(seed, (|| {
            let c: f64 = rng.random_range(0.05..1.0);
            let r = inst.radius;
            let dc = Tensor::new(&[t, t], (0..t * t).map(|i| if i / t == i % t { 1.0 } else { c }).collect())?;
            let mut k = vec![c; 2 * r + 1];
            k[r] = 1.0;
            let smoothed = tensor::conv1d_same(&inst.x, &Tensor::vector(k))?;
            let logits = tensor::matmul(&smoothed, &tensor::transpose(&inst.w)?)?;
            let kk = inst.b.numel();
            let logits = Tensor::new(logits.dims(), logits.data().iter().enumerate().map(|(i, v)| v + inst.b.data()[i % kk]).collect())?;
            let expect = tensor::softmax_lastdim(&logits)?;
            let got = coherence::tc_assignment_conv(&inst.x, &inst.w, &inst.b, &Affinity::from_values(dc)?, r)?;
            Ok(got.values().max_abs_diff(&expect))
        })());

        let frame_count = rng.random_range(1..=7);
        let frames = rand_tensor(&mut rng, &[frame_count, 3], -1.0, 1.0);
        let cfg = small_config(ModelKind::Netvlad, &mut rng);
        vlad.observe(seed, (|| {
            let m = Model::init(cfg, seed)?;
            let p = m.params();
            let (w, c, hw) = (rows(p.get("vlad.w")?), rows(p.get("vlad.c")?), rows(p.get("head.w")?));
            let weights = oracle::NetVladWeights { w: &w, b: p.get("vlad.b")?.data(), c: &c, head_w: &hw, head_b: p.get("head.b")?.data() };
            Ok(max_diff_vec(&oracle::netvlad(&weights, &rows(&frames)), &m.predict(&ModelInput::new(&frames))?))
        })());
        vlad_perm.observe(seed, (|| {
            let m = Model::init(cfg, seed)?;
            let n = frames.rows();
            let reversed: Vec<f64> = (0..n).rev().flat_map(|i| frames.row(i).to_vec()).collect();
            let rev = Tensor::new(frames.dims(), reversed)?;
            Ok(max_diff_vec(&m.predict(&ModelInput::new(&frames))?, &m.predict(&ModelInput::new(&rev))?))
        })());
    }
    [aff, vanilla, assign, gated, attn, conv, attn_conv, layer, compose, gates, perturb, vlad, vlad_perm]
        .into_iter()
        .map(Tracker::finish)
        .collect()
}

fn sum_to_one(rows_of: &Tensor) -> f64 {
    let (r, c) = if rows_of.shape().rank() == 1 { (1, rows_of.numel()) } else { (rows_of.rows(), rows_of.cols()) };
    let mut worst: f64 = 0.0;
    for i in 0..r {
        let row = &rows_of.data()[i * c..(i + 1) * c];
        if row.iter().any(|&v| v < 0.0) {
            return f64::INFINITY;
        }
        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    worst
}

/// Assignment rows and attention vectors sum to one; two-frame symmetry is exact.
pub fn normalization(opts: &VerifyOptions) -> Vec<Check> {
    let s = "normalization";
    let mut sums = Tracker::new(s, "rows-sum-to-one", NORMALIZATION_TOL);
    let mut sym = Tracker::new(s, "two-frame-symmetry", 0.0);
    let mut attn_rows = Tracker::new(s, "transformer-attention-rows", NORMALIZATION_TOL);
    for seed in 0..opts.seeds * 10 {
        let mut rng = rng_for(opts, "normalization", seed);
        let inst = Instance::draw(&mut rng);
        let d = inst.affinity();
        let q = inst.q();
        let t = q.rows();
        let e = rand_tensor(&mut rng, &[t], -3.0, 3.0);
        let z = coherence::gates_from_scenes(&rand_scenes(&mut rng, t), t).expect("valid scenes");
        sums.observe(seed, (|| {
            let outs = [
                coherence::vanilla_assignment(&q)?.values().clone(),
                coherence::tc_assignment(&q, &d, inst.radius)?.values().clone(),
                coherence::tc_assignment_gated(&q, &d, &z, inst.radius)?.values().clone(),
                coherence::tc_assignment_conv(&inst.x, &inst.w, &inst.b, &d, inst.radius)?.values().clone(),
                coherence::tc_attention(&e, &inst.x, inst.radius)?.values().clone(),
                coherence::tc_attention_conv(&e, &d, inst.radius, SelfTerm::Window)?.values().clone(),
                coherence::tc_attention_conv(&e, &d, inst.radius, SelfTerm::WindowPlusSelf)?.values().clone(),
            ];
            Ok(outs.iter().map(sum_to_one).fold(0.0, f64::max))
        })());
        let value: f64 = rng.random_range(-3.0..3.0);
        let h_row: Vec<f64> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(-1.0..1.0)).collect();
        sym.observe(seed, (|| {
            let h = Tensor::matrix(&[h_row.clone(), h_row.clone()])?;
            let a = coherence::tc_attention(&Tensor::vector(vec![value, value]), &h, 1)?;
            let w = a.weights();
            Ok(if w[0] == w[1] && w[0] == 0.5 { 0.0 } else { (w[0] - w[1]).abs().max(f64::MIN_POSITIVE) })
        })());
        let dk = rng.random_range(1..=4);
        let (qq, kk) = (rand_tensor(&mut rng, &[t, dk], -2.0, 2.0), rand_tensor(&mut rng, &[t, dk], -2.0, 2.0));
        attn_rows.observe(seed, (|| {
            let logits = tensor::matmul(&qq, &tensor::transpose(&kk)?)?.map(|v| v / (dk as f64).sqrt());
            Ok(sum_to_one(&tensor::softmax_lastdim(&logits)?))
        })());
    }
    vec![sums.finish(), sym.finish(), attn_rows.finish()]
}

/// Scalar objective recorded on a tape from bound inputs.
pub type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, BoxError>>;

/// Deterministic weights turning any output into a scalar with a non-trivial gradient.
fn project(tape: &mut Tape, v: Var) -> Result<Var, BoxError> {
    let value = tape.value(v);
    let w = Tensor::from_shape(value.shape().clone(), (0..value.numel()).map(|i| (0.7 + 1.3 * i as f64).sin()).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(v, w)?;
    Ok(tape.sum(prod)?)
}

fn op_case(f: impl Fn(&mut Tape, &[Var]) -> Result<Var, BoxError> + 'static) -> Builder {
    Box::new(move |tape, v| {
        let out = f(tape, v)?;
        project(tape, out)
    })
}

/// Every differentiable tape operation with inputs drawn from `rng`.
pub fn op_gradient_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Builder, Vec<Tensor>)> {
    let mut r = |dims: &[usize], lo: f64, hi: f64| rand_tensor(rng, dims, lo, hi);
    let a = r(&[3, 4], -1.0, 1.0);
    let b = r(&[3, 4], -1.0, 1.0);
    let pos = r(&[3, 4], 0.5, 2.0);
    let signed: Tensor = r(&[3, 4], 0.2, 1.0).map(|v| v);
    let signs = r(&[3, 4], -1.0, 1.0);
    let away = Tensor::new(&[3, 4], signed.data().iter().zip(signs.data()).map(|(m, s)| m.copysign(*s)).collect()).unwrap();
    let m34 = r(&[3, 4], -1.0, 1.0);
    let m42 = r(&[4, 2], -1.0, 1.0);
    let seq = r(&[5, 3], -1.0, 1.0);
    let kern = r(&[3], -1.0, 1.0);
    let pts = r(&[4, 3], -1.0, 1.0);
    let vec4 = r(&[4], -1.0, 1.0);
    let vec3 = r(&[3], -1.0, 1.0);
    let scal = r(&[1], -1.0, 1.0);
    let t = 6;
    let x = r(&[t, 3], -1.0, 1.0);
    let qk = r(&[t, 4], -1.0, 1.0);
    let e = r(&[t], -1.0, 1.0);
    let dmat = coherence::affinity(&x, DistanceScale::Raw).unwrap().values().clone();
    let w = r(&[4, 3], -1.0, 1.0);
    let bias = r(&[4], -1.0, 1.0);
    let kernels = r(&[2, 3], -1.0, 1.0);
    let z = coherence::gates_from_scenes(&[0, 3], t).unwrap().values().clone();
    let scores = r(&[2, 4], 0.1, 0.9);

    let bin = |op: BinaryOp| op_case(move |tp, v| Ok(tp.binary(op, v[0], v[1])?));
    let un = |op: UnaryOp| op_case(move |tp, v| Ok(tp.unary(op, v[0])?));
    let zc = z.clone();
    let mut cases: Vec<(&'static str, Builder, Vec<Tensor>)> = vec![
        ("add", bin(BinaryOp::Add), vec![a.clone(), b.clone()]),
        ("sub", bin(BinaryOp::Sub), vec![a.clone(), b.clone()]),
        ("mul", bin(BinaryOp::Mul), vec![a.clone(), b.clone()]),
        ("div", bin(BinaryOp::Div), vec![a.clone(), pos.clone()]),
        ("scalar-ops", op_case(|tp, v| {
            let s = tp.add_scalar(v[0], 0.3)?;
            let s = tp.mul_scalar(s, -1.7)?;
            Ok(tp.scalar(BinaryOp::Div, s, 2.5)?)
        }), vec![a.clone()]),
        ("exp", un(UnaryOp::Exp), vec![a.clone()]),
        ("log", un(UnaryOp::Log), vec![pos.clone()]),
        ("neg", un(UnaryOp::Neg), vec![a.clone()]),
        ("sqrt", un(UnaryOp::Sqrt), vec![pos.clone()]),
        ("square", un(UnaryOp::Square), vec![a.clone()]),
        ("recip", un(UnaryOp::Recip), vec![pos.clone()]),
        ("tanh", un(UnaryOp::Tanh), vec![a.clone()]),
        ("sigmoid", un(UnaryOp::Sigmoid), vec![a.clone()]),
        ("matmul", op_case(|tp, v| Ok(tp.matmul(v[0], v[1])?)), vec![m34.clone(), m42]),
        ("transpose", op_case(|tp, v| Ok(tp.transpose(v[0])?)), vec![m34.clone()]),
        ("softmax", op_case(|tp, v| Ok(tp.softmax_lastdim(v[0])?)), vec![m34.clone()]),
        ("conv1d-same", op_case(|tp, v| Ok(tp.conv1d_same(v[0], v[1])?)), vec![seq.clone(), kern]),
        ("pairwise-l2", op_case(|tp, v| Ok(tp.pairwise_l2(v[0])?)), vec![pts]),
        ("sum-mean", op_case(|tp, v| {
            let s = tp.sum(v[0])?;
            let m = tp.mean(v[0])?;
            let p = tp.mul(s, m)?;
            Ok(p)
        }), vec![a.clone()]),
        ("sum-lastdim", op_case(|tp, v| Ok(tp.sum_lastdim(v[0])?)), vec![a.clone()]),
        ("sum-rows", op_case(|tp, v| Ok(tp.sum_rows(v[0])?)), vec![a.clone()]),
        ("add-row", op_case(|tp, v| Ok(tp.add_row(v[0], v[1])?)), vec![a.clone(), vec4.clone()]),
        ("scale-rows", op_case(|tp, v| Ok(tp.scale_rows(v[0], v[1])?)), vec![a.clone(), vec3.clone()]),
        ("reshape-slice-concat", op_case(|tp, v| {
            let r = tp.reshape(v[0], &[4, 3])?;
            let top = tp.slice_rows(r, 1, 2)?;
            let left = tp.slice_cols(v[1], 1, 3)?;
            let stacked = tp.concat_rows(&[top, left])?;
            let side = tp.concat_cols(&[stacked, stacked])?;
            Ok(side)
        }), vec![a.clone(), b.clone()]),
        ("clamp-min", op_case(|tp, v| Ok(tp.clamp_min(v[0], 0.0)?)), vec![away]),
        ("scalar-var", op_case(|tp, v| {
            let m = tp.mul_scalar_var(v[0], v[1])?;
            Ok(tp.add_scalar_var(m, v[1])?)
        }), vec![a.clone(), scal.clone()]),
        ("affinity", op_case(|tp, v| Ok(coherence::affinity_on_tape(tp, v[0], DistanceScale::Raw)?)), vec![x.clone()]),
        ("learned-gates", op_case(|tp, v| Ok(coherence::learned_gates_on_tape(tp, v[0], v[1], v[2], DistanceScale::PerDimension)?)),
            vec![x.clone(), scal.clone(), scal.map(|s| s - 0.5)]),
        ("tc-assignment", op_case(|tp, v| Ok(coherence::tc_assignment_on_tape(tp, v[0], v[1], None, 2)?)), vec![qk.clone(), dmat.clone()]),
        ("tc-assignment-gated", op_case(move |tp, v| {
            let zv = tp.constant(zc.clone());
            Ok(coherence::tc_assignment_on_tape(tp, v[0], v[1], Some(zv), 2)?)
        }), vec![qk.clone(), dmat.clone()]),
        ("tc-attention", op_case(|tp, v| Ok(coherence::tc_attention_on_tape(tp, v[0], v[1], 2, DistanceScale::Raw)?)), vec![e.clone(), x.clone()]),
        ("tc-assignment-conv", op_case(|tp, v| Ok(coherence::tc_assignment_conv_on_tape(tp, v[0], v[1], v[2], v[3], 2)?)),
            vec![x.clone(), w, bias, dmat.clone()]),
        ("tc-attention-conv", op_case(|tp, v| Ok(coherence::tc_attention_conv_on_tape(tp, v[0], v[1], 2, SelfTerm::Window)?)),
            vec![e.clone(), dmat.clone()]),
        ("tc-attention-conv-plus-self", op_case(|tp, v| Ok(coherence::tc_attention_conv_on_tape(tp, v[0], v[1], 1, SelfTerm::WindowPlusSelf)?)),
            vec![e, dmat]),
        ("tc-conv-layer", op_case(|tp, v| Ok(coherence::tc_conv_layer_on_tape(tp, v[0], v[1])?)), vec![seq, kernels]),
    ];

    let truth = vec![LabelSet::from_ids(4, &[0, 1]), LabelSet::from_ids(4, &[2])];
    let tax = Taxonomy::from_parents(&[(None, "a"), (Some(0), "a1"), (None, "b"), (Some(2), "b1")]).unwrap();
    let argmax: Vec<usize> = (0..2).map(|i| loss::argmax(scores.row(i))).collect();
    for (name, variant) in [("hier-loss-literal", HierVariant::Literal), ("hier-loss-blended", HierVariant::Blended)] {
        let (tax, truth, argmax) = (tax.clone(), truth.clone(), argmax.clone());
        cases.push((name, Box::new(move |tp, v| {
            let targets = TargetBatch::flat(truth.clone());
            let cfg = LossConfig { variant, ..LossConfig::default() };
            Ok(loss::hier_cross_entropy_on_tape(tp, v[0], &argmax, &targets, &tax, &cfg)?)
        }), vec![scores.clone()]));
    }
    let bce_truth = truth.clone();
    cases.push(("multilabel-bce", Box::new(move |tp, v| {
        let targets = TargetBatch::flat(bce_truth.clone());
        Ok(loss::multilabel_cross_entropy_on_tape(tp, v[0], &targets, &LossConfig::default())?)
    }), vec![scores]));
    cases.push(("label-prior", Box::new(|tp, v| Ok(loss::label_prior_loss_on_tape(tp, v[0], &[0..2, 2..6])?)), vec![qk]));
    cases
}

/// Model variants covered by the gradient suite.
pub fn gradient_model_cases() -> Vec<(String, ModelKind, TcMode)> {
    let mut out = Vec::new();
    for kind in ModelKind::ALL {
        let modes: &[TcMode] = match kind {
            ModelKind::TcNetvlad | ModelKind::TcRnn => &[TcMode::Exact, TcMode::Gated, TcMode::LearnedGate, TcMode::Conv],
            _ => &[TcMode::Exact],
        };
        for &mode in modes {
            let name = if modes.len() > 1 { format!("{kind}-{}", mode_name(mode)) } else { kind.to_string() };
            out.push((name, kind, mode));
        }
    }
    out
}

fn mode_name(m: TcMode) -> &'static str {
    match m {
        TcMode::Exact => "exact",
        TcMode::Gated => "gated",
        TcMode::LearnedGate => "learned-gate",
        TcMode::Conv => "conv",
    }
}

/// Gradient of the full training objective of `kind` against central differences.
pub fn model_gradient_error(kind: ModelKind, mode: TcMode, rng: &mut ChaCha8Rng, seed: u64) -> CaseResult {
    let mut cfg = small_config(kind, rng);
    cfg.tc_mode = mode;
    let model = Model::init(cfg, seed)?;
    // Random parameters of realistic magnitude rather than the small initialization.
    let mut model = model;
    let names: Vec<String> = model.params().names().to_vec();
    for name in names {
        let dims = model.params().get(&name)?.dims().to_vec();
        model.params_mut().set(&name, rand_tensor(rng, &dims, -0.8, 0.8))?;
    }
    let t = 6;
    let features = rand_tensor(rng, &[t, cfg.input_dim], -1.0, 1.0);
    let truth = LabelSet::from_bits((0..cfg.num_labels).map(|_| rng.random_bool(0.5)).collect());
    let ex = Example { id: "grad".into(), features, scene_starts: vec![0, 3], truth };
    let mut train_cfg = TrainConfig { loss: LossKind::Bce, ..TrainConfig::toy() };
    train_cfg.loss_config.lambda = 0.1;
    let tax = Taxonomy::from_parents(&[(None, "a"), (None, "b"), (None, "c")])?;
    let check = check_gradients(
        |tape: &mut Tape, vars: &[Var]| -> Result<Var, BoxError> {
            Ok(example_loss_on_tape(tape, &model, vars, &ex, &train_cfg, &tax)?)
        },
        model.params().values(),
        FD_STEP,
    )?;
    Ok(check.max_error())
}

/// Tape gradients of every operation, loss and model against central differences.
pub fn gradients(opts: &VerifyOptions) -> Vec<Check> {
    let seeds = opts.seeds.min(GRADIENT_SEEDS);
    let mut out = Vec::new();
    let names: Vec<&str> = op_gradient_cases(&mut rng_for(opts, "gradient-ops", 0)).iter().map(|c| c.0).collect();
    let mut trackers: Vec<Tracker> = names.iter().map(|n| Tracker::new("gradient", *n, GRADIENT_TOL)).collect();
    for seed in 0..seeds {
        let cases = op_gradient_cases(&mut rng_for(opts, "gradient-ops", seed));
        for ((_, build, inputs), tracker) in cases.into_iter().zip(trackers.iter_mut()) {
            tracker.observe(seed, check_gradients(&*build, &inputs, FD_STEP).map(|c| c.max_error()));
        }
    }
    out.extend(trackers.into_iter().map(Tracker::finish));
    for (name, kind, mode) in gradient_model_cases() {
        let mut tracker = Tracker::new("gradient", format!("model-{name}"), GRADIENT_TOL);
        for seed in 0..seeds {
            let mut rng = rng_for(opts, &format!("gradient-model-{name}"), seed);
            tracker.observe(seed, model_gradient_error(kind, mode, &mut rng, seed));
        }
        out.push(tracker.finish());
    }
    out
}

/// Shapes `(records, labels)` enumerated exhaustively.
pub fn enumerated_shapes() -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for n in 1..=6 {
        for k in 1..=5 {
            if n * k <= 6 {
                v.push((n, k));
            }
        }
    }
    v
}

/// Score grid of the enumeration; three levels produce ties and strict orders.
pub const SCORE_GRID: [f64; 3] = [0.25, 0.5, 0.75];

fn build_records(n: usize, k: usize, truth_bits: u64, score_code: u64) -> Vec<EvalRecord> {
    let mut code = score_code;
    (0..n)
        .map(|i| {
            let scores = (0..k)
                .map(|_| {
                    let s = SCORE_GRID[(code % 3) as usize];
                    code /= 3;
                    s
                })
                .collect();
            let bits = (0..k).map(|j| truth_bits >> (i * k + j) & 1 == 1).collect();
            EvalRecord::new(format!("r{i}"), scores, LabelSet::from_bits(bits)).expect("valid record")
        })
        .collect()
}

/// Largest deviation between fast and brute-force metrics on one record set.
pub fn metric_deviation(records: &[EvalRecord]) -> CaseResult {
    let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    let mut worst: f64 = 0.0;
    for top_n in [1, 2, metrics::DEFAULT_TOP_N] {
        worst = worst.max(opt(metrics::try_global_average_precision(records, top_n)?, oracle::gap(records, top_n)));
    }
    worst = worst.max(opt(metrics::try_mean_average_precision(records)?, oracle::map(records)));
    worst = worst.max(opt(metrics::precision_at_equal_recall(records)?.value, oracle::perr(records)));
    worst = worst.max((metrics::hit_at_one(records)? - oracle::hit1(records)).abs());
    Ok(worst)
}

fn three_level_taxonomy() -> Taxonomy {
    Taxonomy::from_parents(&[
        (None, "a"),
        (None, "b"),
        (Some(0), "a1"),
        (Some(0), "a2"),
        (Some(1), "b1"),
        (Some(2), "a1x"),
        (Some(2), "a1y"),
        (Some(4), "b1x"),
    ])
    .expect("valid taxonomy")
}

/// Fast metrics against brute force on every small record set and on random sets.
pub fn metric_oracles(opts: &VerifyOptions) -> Vec<Check> {
    let mut enumerated = Tracker::new("metrics", "enumerated-sets", METRIC_TOL);
    enumerated.note = Some("all truth bitmaps and grid scores for records·labels ≤ 6".into());
    for (n, k) in enumerated_shapes() {
        let cells = (n * k) as u32;
        for truth_bits in 0..(1u64 << cells) {
            for score_code in 0..3u64.pow(cells) {
                let recs = build_records(n, k, truth_bits, score_code);
                enumerated.observe(truth_bits, metric_deviation(&recs));
            }
        }
    }
    let mut random = Tracker::new("metrics", "random-sets", METRIC_TOL);
    let count = if opts.seeds >= 100 { RANDOM_METRIC_SETS } else { 2 * opts.seeds };
    for seed in 0..count {
        let mut rng = rng_for(opts, "metrics", seed);
        let (n, k) = (rng.random_range(1..=12), rng.random_range(1..=8));
        let grid = rng.random_bool(0.5);
        let recs: Vec<EvalRecord> = (0..n)
            .map(|_| {
                let scores = (0..k)
                    .map(|_| if grid { rng.random_range(0..5) as f64 / 4.0 } else { rng.random_range(0.0..1.0) })
                    .collect();
                let bits = (0..k).map(|_| rng.random_bool(0.3)).collect();
                EvalRecord::new(format!("v{:02}", rng.random_range(0..n)), scores, LabelSet::from_bits(bits)).expect("valid")
            })
            .collect();
        random.observe(seed, metric_deviation(&recs));
    }
    let mut levels = Tracker::new("metrics", "per-level-restricted", METRIC_TOL);
    let tax = three_level_taxonomy();
    for seed in 0..count.min(50) {
        let mut rng = rng_for(opts, "metrics-levels", seed);
        let leaves = tax.leaves();
        let recs: Vec<EvalRecord> = (0..rng.random_range(2..=10))
            .map(|i| {
                let picks: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| leaves[rng.random_range(0..leaves.len())]).collect();
                let scores = (0..tax.len()).map(|_| rng.random_range(0.0..1.0)).collect();
                EvalRecord::new(format!("v{i}"), scores, tax.ancestor_closure(&picks).expect("known ids")).expect("valid")
            })
            .collect();
        levels.observe(seed, (|| {
            let rep = metrics::per_level_report(&recs, &tax, metrics::DEFAULT_TOP_N)?;
            let mut worst: f64 = 0.0;
            for lvl in &rep.per_level {
                let ids = tax.nodes_at_level(lvl.level)?;
                let restricted: Vec<EvalRecord> = recs.iter().map(|r| r.restrict(&ids)).collect();
                let labelled: Vec<EvalRecord> = restricted.iter().filter(|r| !r.truth.is_empty()).cloned().collect();
                let pairs = [
                    (lvl.metrics.gap, oracle::gap(&restricted, metrics::DEFAULT_TOP_N)),
                    (lvl.metrics.map, oracle::map(&restricted)),
                    (lvl.metrics.perr, oracle::perr(&restricted)),
                    (lvl.metrics.hit1, (!labelled.is_empty()).then(|| oracle::hit1(&labelled))),
                ];
                for (a, b) in pairs {
                    worst = worst.max(match (a, b) {
                        (Some(x), Some(y)) => (x - y).abs(),
                        (None, None) => 0.0,
                        _ => f64::INFINITY,
                    });
                }
            }
            Ok(worst)
        })());
    }
    vec![enumerated.finish(), random.finish(), levels.finish()]
}

/// Hand-computed values of the hierarchical loss.
pub fn hier_loss_cases() -> Vec<Check> {
    let s = "hier-loss";
    let tax = Taxonomy::from_parents(&[(None, "A"), (Some(0), "A::B"), (Some(1), "A::B::C"), (None, "Z")]).expect("valid");
    let literal = LossConfig::default();
    let blended = LossConfig { variant: HierVariant::Blended, ..literal };
    let eval = |scores: Vec<f64>, cfg: &LossConfig| -> Result<f64, BoxError> {
        let y = tax.ancestor_closure(&[2])?;
        let targets = TargetBatch::new(&tax, vec![y])?;
        let preds = PredictionBatch::new(Tensor::new(&[1, 4], scores)?)?;
        Ok(loss::hier_cross_entropy(&preds, &targets, &tax, cfg)?)
    };
    let mut perfect = Tracker::new(s, "perfect-path-is-zero", 0.0);
    perfect.observe(0, eval(vec![1.0, 1.0, 1.0, 0.0], &literal).map(f64::abs));
    let mut parent = Tracker::new(s, "parent-at-0.8-literal", 1e-6);
    parent.note = Some("expected 0.111572".into());
    parent.observe(0, eval(vec![0.3, 0.8, 0.2, 0.1], &literal).map(|v| (v - 0.111572).abs()));
    let mut off_literal = Tracker::new(s, "off-path-literal-is-zero", 0.0);
    off_literal.observe(0, eval(vec![0.1, 0.2, 0.3, 0.9], &literal).map(f64::abs));
    let mut off_blended = Tracker::new(s, "off-path-blended-is-positive", 0.0);
    off_blended.observe(0, eval(vec![0.1, 0.2, 0.3, 0.9], &blended).map(|v| if v > 0.0 { 0.0 } else { 1.0 }));
    let mut monotone = Tracker::new(s, "partial-credit-monotone-4-level-chain", 0.0);
    monotone.observe(0, (|| {
        let chain = Taxonomy::from_parents(&[(None, "A"), (Some(0), "B"), (Some(1), "C"), (Some(2), "D")])?;
        let y = chain.ancestor_closure(&[3])?;
        let credits = (0..4).map(|k| loss::partial_credit(&chain, &y, k, k)).collect::<Result<Vec<_>, _>>()?;
        let expect = [0.125, 0.25, 0.5, 1.0];
        let increasing = credits.windows(2).all(|w| w[0] < w[1]);
        Ok(if increasing { max_diff_vec(&credits, &expect) } else { 1.0 })
    })());
    vec![perfect.finish(), parent.finish(), off_literal.finish(), off_blended.finish(), monotone.finish()]
}
