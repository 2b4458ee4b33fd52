//! Temporal-coherence operators.
//!
//! Notation used throughout: a sequence has `T` frames; `d[i][j] =
//! exp(−‖x_i − x_j‖₂)` is the frame affinity; the neighborhood of frame `i`
//! is `N_i = [i−L, i+L] ∩ [0, T)` without `i` itself; the convolution window
//! `[i−L, i+L] ∩ [0, T)` includes `i` with `d[i][i] = 1`. Edge frames get
//! truncated neighborhoods (no wraparound).
//!
//! Set forms (`tc_assignment`, `tc_attention`) evaluate the exponent as
//! `s_i = q_i + Σ_{j∈N_i} z_ij·d_ij·q_j`. Convolution forms
//! (`tc_assignment_conv`, `tc_attention_conv`) aggregate over the window
//! first and apply the affine map afterwards. The two agree exactly in
//! exact arithmetic when the bias is zero; with a bias the set form carries
//! an extra `b_k · Σ_{j∈N_i} d_ij` per frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{self, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum CoherenceError {
    #[error("invalid frame sequence: {0}")]
    Sequence(String),
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, CoherenceError>;

/// Per-frame features with scene starts.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    features: Tensor,
    scene_starts: Vec<usize>,
}

impl FrameSequence {
    pub fn new(features: Tensor, scene_starts: Vec<usize>) -> Result<Self> {
        if features.shape().rank() != 2 || features.rows() == 0 {
            return Err(CoherenceError::Sequence(format!("need a T×D matrix with T ≥ 1, got {}", features.shape())));
        }
        validate_scene_starts(&scene_starts, features.rows())?;
        Ok(FrameSequence { features, scene_starts })
    }

    /// A sequence that is one scene.
    pub fn single_scene(features: Tensor) -> Result<Self> {
        FrameSequence::new(features, vec![0])
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn scene_starts(&self) -> &[usize] {
        &self.scene_starts
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn validate_scene_starts(starts: &[usize], t_len: usize) -> Result<()> {
    if starts.first() != Some(&0) {
        return Err(CoherenceError::Sequence("scene starts must begin at frame 0".into()));
    }
    if starts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoherenceError::Sequence(format!("scene starts not strictly increasing: {starts:?}")));
    }
    if starts.last().is_some_and(|&s| s >= t_len) {
        return Err(CoherenceError::Sequence(format!("scene start beyond {t_len} frames: {starts:?}")));
    }
    Ok(())
}

/// How raw L2 distances are scaled before `exp(−·)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceScale {
    #[default]
    Raw,
    /// Divide by `√D`, which keeps affinities away from underflow for wide features.
    PerDimension,
}

impl DistanceScale {
    fn factor(self, dim: usize) -> f64 {
        match self {
            DistanceScale::Raw => 1.0,
            DistanceScale::PerDimension => 1.0 / (dim.max(1) as f64).sqrt(),
        }
    }
}

/// Symmetric `T×T` matrix of `exp(−‖x_i − x_j‖₂)`, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity(Tensor);

impl Affinity {
    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn from_values(values: Tensor) -> Result<Self> {
        if values.shape().rank() != 2 || values.rows() != values.cols() {
            return Err(CoherenceError::Sequence(format!("affinity must be square, got {}", values.shape())));
        }
        Ok(Affinity(values))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn affinity(features: &Tensor, scale: DistanceScale) -> Result<Affinity> {
    let dist = tensor::pairwise_l2(features)?;
    let f = scale.factor(features.cols());
    Ok(Affinity(dist.map(|v| (-v * f).exp())))
}

/// Scene-membership gates: 1 for pairs within one scene, else 0 (or learned values in `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix(Tensor);

impl GateMatrix {
    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn constant(t_len: usize, value: f64) -> Self {
        GateMatrix(Tensor::full(&[t_len, t_len], value))
    }

    pub fn from_values(values: Tensor) -> Result<Self> {
        if values.shape().rank() != 2 || values.rows() != values.cols() {
            return Err(CoherenceError::Sequence(format!("gates must be square, got {}", values.shape())));
        }
        if values.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CoherenceError::Sequence("gate values must lie in [0, 1]".into()));
        }
        Ok(GateMatrix(values))
    }
}

pub fn gates_from_scenes(scene_starts: &[usize], t_len: usize) -> Result<GateMatrix> {
    validate_scene_starts(scene_starts, t_len)?;
    let mut scene_of = vec![0usize; t_len];
    for (s, &start) in scene_starts.iter().enumerate() {
        scene_of[start..].fill(s);
    }
    let mut z = vec![0.0; t_len * t_len];
    for i in 0..t_len {
        for j in 0..t_len {
            if scene_of[i] == scene_of[j] {
                z[i * t_len + j] = 1.0;
            }
        }
    }
    Ok(GateMatrix(Tensor::new(&[t_len, t_len], z)?))
}

/// Soft assignments `T×K`; each row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix(Tensor);

impl AssignmentMatrix {
    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.0.rows()).map(|i| self.0.row(i).iter().sum()).collect()
    }
}

/// Attention weights over `T` frames, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector(Tensor);

impl AttentionVector {
    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn weights(&self) -> &[f64] {
        self.0.data()
    }
}

/// Learnable temporal kernels, `F` feature maps of odd width `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TcKernel(Tensor);

impl TcKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        match weights.dims() {
            [f, w] if *f >= 1 && w % 2 == 1 => Ok(TcKernel(weights)),
            _ => Err(CoherenceError::Kernel(format!("need F×W weights with F ≥ 1 and W odd, got {}", weights.shape()))),
        }
    }

    /// Every map is the unit impulse at offset 0.
    pub fn delta(maps: usize, width: usize) -> Result<Self> {
        if width.is_multiple_of(2) || maps == 0 {
            return Err(CoherenceError::Kernel(format!("delta kernel needs odd width and F ≥ 1, got F={maps} W={width}")));
        }
        let mut w = Tensor::zeros(&[maps, width]).into_data();
        for f in 0..maps {
            w[f * width + width / 2] = 1.0;
        }
        TcKernel::new(Tensor::new(&[maps, width], w)?)
    }

    pub fn weights(&self) -> &Tensor {
        &self.0
    }

    pub fn maps(&self) -> usize {
        self.0.rows()
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    /// Mean over feature maps, length `W`.
    pub fn averaged(&self) -> Vec<f64> {
        let (f, w) = (self.maps(), self.width());
        (0..w).map(|o| (0..f).map(|m| self.0.get2(m, o)).sum::<f64>() / f as f64).collect()
    }

    /// Averaged kernel divided by its largest magnitude; an all-zero kernel stays zero.
    pub fn normalized_average(&self) -> Vec<f64> {
        let avg = self.averaged();
        let peak = avg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return avg;
        }
        avg.into_iter().map(|v| v / peak).collect()
    }

    /// Offset from the center, in frames, of the largest averaged weight; ties go to the smallest offset.
    pub fn peak_offset(&self) -> isize {
        let avg = self.averaged();
        let half = (self.width() / 2) as isize;
        let mut best = 0;
        for (o, v) in avg.iter().enumerate() {
            if *v > avg[best] {
                best = o;
            }
        }
        best as isize - half
    }
}

/// `1` where `|i − j| ≤ radius`, optionally excluding the diagonal.
pub fn band_mask(t_len: usize, radius: usize, include_self: bool) -> Tensor {
    let mut m = vec![0.0; t_len * t_len];
    for i in 0..t_len {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(t_len - 1);
        for j in lo..=hi {
            if include_self || j != i {
                m[i * t_len + j] = 1.0;
            }
        }
    }
    Tensor::new(&[t_len, t_len], m).expect("square mask")
}

// ── Tape forms ───────────────────────────────────────────────────────

/// `exp(−scale·‖x_i − x_j‖₂)` recorded on the tape.
pub fn affinity_on_tape(tape: &mut Tape, features: Var, scale: DistanceScale) -> Result<Var> {
    let dim = tape.value(features).cols();
    let dist = tape.pairwise_l2(features)?;
    let scaled = tape.mul_scalar(dist, -scale.factor(dim))?;
    Ok(tape.exp(scaled)?)
}

/// Learned gates `sigmoid(bias + slope·‖x_i − x_j‖₂)`; `bias` and `slope` are one-element.
pub fn learned_gates_on_tape(tape: &mut Tape, features: Var, bias: Var, slope: Var, scale: DistanceScale) -> Result<Var> {
    let dim = tape.value(features).cols();
    let dist = tape.pairwise_l2(features)?;
    let dist = tape.mul_scalar(dist, scale.factor(dim))?;
    let sloped = tape.mul_scalar_var(dist, slope)?;
    let shifted = tape.add_scalar_var(sloped, bias)?;
    Ok(tape.sigmoid(shifted)?)
}

/// Neighborhood weights `M_ij = mask_ij · d_ij [· z_ij]`.
fn neighbor_weights(tape: &mut Tape, d: Var, gates: Option<Var>, radius: usize, include_self: bool) -> Result<Var> {
    let t_len = tape.value(d).rows();
    let mask = tape.constant(band_mask(t_len, radius, include_self));
    let mut w = tape.mul(mask, d)?;
    if let Some(z) = gates {
        w = tape.mul(w, z)?;
    }
    Ok(w)
}

/// Coherent logits `q + M·q` for `q: T×K`.
pub fn coherent_logits_on_tape(tape: &mut Tape, q: Var, d: Var, gates: Option<Var>, radius: usize) -> Result<Var> {
    let m = neighbor_weights(tape, d, gates, radius, false)?;
    let spread = tape.matmul(m, q)?;
    Ok(tape.add(q, spread)?)
}

pub fn tc_assignment_on_tape(tape: &mut Tape, q: Var, d: Var, gates: Option<Var>, radius: usize) -> Result<Var> {
    let logits = coherent_logits_on_tape(tape, q, d, gates, radius)?;
    Ok(tape.softmax_lastdim(logits)?)
}

/// Convolution form: window-aggregate `x` with affinity weights, then `· wᵀ + b` and softmax.
pub fn tc_assignment_conv_on_tape(tape: &mut Tape, x: Var, w: Var, b: Var, d: Var, radius: usize) -> Result<Var> {
    let window = neighbor_weights(tape, d, None, radius, true)?;
    let pooled = tape.matmul(window, x)?;
    let wt = tape.transpose(w)?;
    let proj = tape.matmul(pooled, wt)?;
    let logits = tape.add_row(proj, b)?;
    Ok(tape.softmax_lastdim(logits)?)
}

/// Coherent attention scores before normalization, `e + M·e` for `e: [T]`.
pub fn coherent_scores_on_tape(tape: &mut Tape, e: Var, d: Var, radius: usize) -> Result<Var> {
    let t_len = tape.value(e).numel();
    let col = tape.reshape(e, &[t_len, 1])?;
    let logits = coherent_logits_on_tape(tape, col, d, None, radius)?;
    Ok(tape.reshape(logits, &[t_len])?)
}

/// Coherent attention over hidden states `h: T×H` with scores `e: [T]`.
pub fn tc_attention_on_tape(tape: &mut Tape, e: Var, h: Var, radius: usize, scale: DistanceScale) -> Result<Var> {
    let d = affinity_on_tape(tape, h, scale)?;
    let s = coherent_scores_on_tape(tape, e, d, radius)?;
    Ok(tape.softmax_lastdim(s)?)
}

/// Treatment of the attended frame's own score in the convolution form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfTerm {
    /// The window term `e_j · d′_jj` is the only self contribution.
    #[default]
    Window,
    /// The window term plus a separate `e_j`, so the self score is counted twice when `d′_jj = 1`.
    WindowPlusSelf,
}

pub fn tc_attention_conv_on_tape(tape: &mut Tape, e: Var, dprime: Var, radius: usize, self_term: SelfTerm) -> Result<Var> {
    let t_len = tape.value(e).numel();
    let col = tape.reshape(e, &[t_len, 1])?;
    let window = neighbor_weights(tape, dprime, None, radius, true)?;
    let mut s = tape.matmul(window, col)?;
    if self_term == SelfTerm::WindowPlusSelf {
        s = tape.add(s, col)?;
    }
    let s = tape.reshape(s, &[t_len])?;
    Ok(tape.softmax_lastdim(s)?)
}

/// Mean over the `F` kernel maps of depthwise `conv1d_same(seq, kernel_f)`.
pub fn tc_conv_layer_on_tape(tape: &mut Tape, seq: Var, kernel: Var) -> Result<Var> {
    let dims = tape.value(kernel).dims().to_vec();
    let (maps, width) = match dims.as_slice() {
        [f, w] if *f >= 1 && w % 2 == 1 => (*f, *w),
        _ => return Err(CoherenceError::Kernel(format!("need F×W kernel with W odd, got {:?}", dims))),
    };
    let mut acc: Option<Var> = None;
    for f in 0..maps {
        let row = tape.slice_rows(kernel, f, 1)?;
        let k = tape.reshape(row, &[width])?;
        let out = tape.conv1d_same(seq, k)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, out)?,
            None => out,
        });
    }
    let total = acc.expect("at least one map");
    Ok(tape.mul_scalar(total, 1.0 / maps as f64)?)
}

// ── Plain forms ──────────────────────────────────────────────────────

fn run<F>(build: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = build(&mut tape)?;
    Ok(tape.value(out).clone())
}

fn check_square(d: &Tensor, t_len: usize) -> Result<()> {
    if d.dims() != [t_len, t_len] {
        return Err(CoherenceError::Sequence(format!("expected {t_len}×{t_len} pairwise matrix, got {}", d.shape())));
    }
    Ok(())
}

/// Row-wise softmax of precomputed `q: T×K`.
pub fn vanilla_assignment(q: &Tensor) -> Result<AssignmentMatrix> {
    Ok(AssignmentMatrix(tensor::softmax_lastdim(q)?))
}

pub fn tc_assignment(q: &Tensor, d: &Affinity, radius: usize) -> Result<AssignmentMatrix> {
    check_square(d.values(), q.rows())?;
    run(|t| {
        let (q, d) = (t.constant(q.clone()), t.constant(d.values().clone()));
        tc_assignment_on_tape(t, q, d, None, radius)
    })
    .map(AssignmentMatrix)
}

pub fn tc_assignment_gated(q: &Tensor, d: &Affinity, z: &GateMatrix, radius: usize) -> Result<AssignmentMatrix> {
    check_square(d.values(), q.rows())?;
    check_square(z.values(), q.rows())?;
    run(|t| {
        let (q, d, z) = (t.constant(q.clone()), t.constant(d.values().clone()), t.constant(z.values().clone()));
        tc_assignment_on_tape(t, q, d, Some(z), radius)
    })
    .map(AssignmentMatrix)
}

pub fn tc_assignment_conv(x: &Tensor, w: &Tensor, b: &Tensor, d: &Affinity, radius: usize) -> Result<AssignmentMatrix> {
    check_square(d.values(), x.rows())?;
    run(|t| {
        let (x, w, b, d) = (
            t.constant(x.clone()),
            t.constant(w.clone()),
            t.constant(b.clone()),
            t.constant(d.values().clone()),
        );
        tc_assignment_conv_on_tape(t, x, w, b, d, radius)
    })
    .map(AssignmentMatrix)
}

pub fn tc_attention(e: &Tensor, h: &Tensor, radius: usize) -> Result<AttentionVector> {
    if h.rows() != e.numel() {
        return Err(CoherenceError::Sequence(format!("{} scores for {} hidden states", e.numel(), h.rows())));
    }
    run(|t| {
        let (e, h) = (t.constant(e.clone()), t.constant(h.clone()));
        tc_attention_on_tape(t, e, h, radius, DistanceScale::Raw)
    })
    .map(AttentionVector)
}

pub fn tc_attention_conv(e: &Tensor, dprime: &Affinity, radius: usize, self_term: SelfTerm) -> Result<AttentionVector> {
    check_square(dprime.values(), e.numel())?;
    run(|t| {
        let (e, d) = (t.constant(e.clone()), t.constant(dprime.values().clone()));
        tc_attention_conv_on_tape(t, e, d, radius, self_term)
    })
    .map(AttentionVector)
}

pub fn tc_conv_layer(seq: &Tensor, kernel: &TcKernel) -> Result<Tensor> {
    run(|t| {
        let (s, k) = (t.constant(seq.clone()), t.constant(kernel.weights().clone()));
        tc_conv_layer_on_tape(t, s, k)
    })
}
