//! Training objectives: hierarchical partial-credit cross-entropy, plain
//! multi-label cross-entropy, and the segment label-prior regularizer.
//!
//! Each objective has a tape form (`*_on_tape`) used during training and a
//! plain form that records onto a throwaway tape.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{LabelSet, Taxonomy, TaxonomyError};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid loss configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HierVariant {
    /// The partial-credit formula as written: zero loss when the argmax is off the true path.
    Literal,
    /// Literal plus row-mean binary cross-entropy on rows whose argmax is off the true path.
    Blended,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub variant: HierVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.0, epsilon: 1e-12, variant: HierVariant::Literal }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(LossError::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(LossError::Config(format!("epsilon must lie in (0, 1e-3], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-node probabilities for N items plus the row argmax (ties to the lowest id).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    scores: Tensor,
    argmax: Vec<usize>,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl PredictionBatch {
    pub fn new(scores: Tensor) -> Result<Self> {
        if scores.shape().rank() != 2 || scores.rows() == 0 || scores.cols() == 0 {
            return Err(LossError::Contract(format!("scores must be a non-empty N×K matrix, got {}", scores.shape())));
        }
        if let Some(bad) = scores.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LossError::Contract(format!("score {bad} outside [0, 1]")));
        }
        let argmax = (0..scores.rows()).map(|i| argmax(scores.row(i))).collect();
        Ok(PredictionBatch { scores, argmax })
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn len(&self) -> usize {
        self.argmax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.argmax.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    labels: Vec<LabelSet>,
}

impl TargetBatch {
    pub fn new(tax: &Taxonomy, labels: Vec<LabelSet>) -> Result<Self> {
        for (i, y) in labels.iter().enumerate() {
            if !tax.is_closed(y) {
                return Err(LossError::Contract(format!("target row {i} is not ancestor-closed")));
            }
        }
        Ok(TargetBatch { labels })
    }

    /// Targets without a taxonomy check; for objectives that ignore hierarchy.
    pub fn flat(labels: Vec<LabelSet>) -> Self {
        TargetBatch { labels }
    }

    pub fn labels(&self) -> &[LabelSet] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn as_tensor(&self, k: usize) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.labels.len() * k);
        for y in &self.labels {
            if y.len() != k {
                return Err(LossError::Contract(format!("label set over {} ids, scores over {k}", y.len())));
            }
            data.extend(y.as_f64());
        }
        Ok(Tensor::new(&[self.labels.len(), k], data)?)
    }
}

/// Partial credit `2^(level(k) − deepest(y))` when `k` is the predicted node, else 0.
pub fn partial_credit(tax: &Taxonomy, y: &LabelSet, predicted: usize, k: usize) -> Result<f64> {
    tax.node(predicted)?;
    let level = tax.level(k)?;
    if k != predicted {
        return Ok(0.0);
    }
    let deepest = tax.deepest_level(y)?;
    Ok(2f64.powi(level as i32 - deepest as i32))
}

/// Constant mask with `f_hier(i, k) · y[i, k]` entries.
fn hier_mask(tax: &Taxonomy, argmax: &[usize], targets: &TargetBatch) -> Result<Tensor> {
    let k = tax.len();
    let mut data = vec![0.0; argmax.len() * k];
    for (i, (&pred, y)) in argmax.iter().zip(targets.labels()).enumerate() {
        if y.contains(pred) {
            data[i * k + pred] = partial_credit(tax, y, pred, pred)?;
        }
    }
    Ok(Tensor::new(&[argmax.len(), k], data)?)
}

fn check_batch(scores: &Tensor, targets: &TargetBatch) -> Result<()> {
    if targets.is_empty() || scores.rows() == 0 {
        return Err(LossError::Contract("empty batch".into()));
    }
    if scores.shape().rank() != 2 || scores.rows() != targets.len() {
        return Err(LossError::Contract(format!(
            "{} targets for scores of shape {}",
            targets.len(),
            scores.shape()
        )));
    }
    Ok(())
}

/// Elementwise `−[y log ŷ + (1−y) log(1−ŷ)]` with ε-clamped logs.
fn bce_elements(tape: &mut Tape, scores: Var, truth: Var, eps: f64) -> Result<Var> {
    let pos = tape.clamp_min(scores, eps)?;
    let log_pos = tape.log(pos)?;
    let neg_scores = tape.neg(scores)?;
    let complement = tape.add_scalar(neg_scores, 1.0)?;
    let neg = tape.clamp_min(complement, eps)?;
    let log_neg = tape.log(neg)?;
    let neg_truth = tape.neg(truth)?;
    let one_minus_truth = tape.add_scalar(neg_truth, 1.0)?;
    let a = tape.mul(truth, log_pos)?;
    let b = tape.mul(one_minus_truth, log_neg)?;
    let s = tape.add(a, b)?;
    Ok(tape.neg(s)?)
}

/// Hierarchical cross-entropy recorded on `tape`.
///
/// `argmax` is taken as given; the partial-credit mask is a constant.
pub fn hier_cross_entropy_on_tape(
    tape: &mut Tape,
    scores: Var,
    argmax: &[usize],
    targets: &TargetBatch,
    tax: &Taxonomy,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_batch(tape.value(scores), targets)?;
    let (n, k) = (tape.value(scores).rows(), tape.value(scores).cols());
    if k != tax.len() {
        return Err(LossError::Contract(format!("scores over {k} labels, taxonomy has {}", tax.len())));
    }
    let mask = tape.constant(hier_mask(tax, argmax, targets)?);
    let clamped = tape.clamp_min(scores, cfg.epsilon)?;
    let logs = tape.log(clamped)?;
    let weighted = tape.mul(mask, logs)?;
    let total = tape.sum(weighted)?;
    let literal = tape.mul_scalar(total, -1.0 / n as f64)?;

    match cfg.variant {
        HierVariant::Literal => Ok(literal),
        HierVariant::Blended => {
            let mut row_weights = vec![0.0; n * k];
            for (i, (&pred, y)) in argmax.iter().zip(targets.labels()).enumerate() {
                if !y.contains(pred) {
                    row_weights[i * k..(i + 1) * k].fill(1.0 / k as f64);
                }
            }
            let truth = tape.constant(targets.as_tensor(k)?);
            let bce = bce_elements(tape, scores, truth, cfg.epsilon)?;
            let rows = tape.constant(Tensor::new(&[n, k], row_weights)?);
            let off_path = tape.mul(rows, bce)?;
            let off_sum = tape.sum(off_path)?;
            let off_mean = tape.mul_scalar(off_sum, 1.0 / n as f64)?;
            Ok(tape.add(literal, off_mean)?)
        }
    }
}

pub fn hier_cross_entropy(
    preds: &PredictionBatch,
    targets: &TargetBatch,
    tax: &Taxonomy,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let scores = tape.constant(preds.scores().clone());
    let loss = hier_cross_entropy_on_tape(&mut tape, scores, preds.argmax(), targets, tax, cfg)?;
    Ok(tape.value(loss).data()[0])
}

/// Mean binary cross-entropy over all N·K entries.
pub fn multilabel_cross_entropy_on_tape(
    tape: &mut Tape,
    scores: Var,
    targets: &TargetBatch,
    cfg: &LossConfig,
) -> Result<Var> {
    check_batch(tape.value(scores), targets)?;
    let k = tape.value(scores).cols();
    let truth = tape.constant(targets.as_tensor(k)?);
    let bce = bce_elements(tape, scores, truth, cfg.epsilon)?;
    Ok(tape.mean(bce)?)
}

pub fn multilabel_cross_entropy(preds: &PredictionBatch, targets: &TargetBatch, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let scores = tape.constant(preds.scores().clone());
    let loss = multilabel_cross_entropy_on_tape(&mut tape, scores, targets, cfg)?;
    Ok(tape.value(loss).data()[0])
}

/// Frame ranges covering `0..t_len` split at each scene start.
pub fn segments_from_starts(starts: &[usize], t_len: usize) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(starts.len());
    for (i, &s) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(t_len).min(t_len);
        if s < end {
            out.push(s..end);
        }
    }
    out
}

fn check_partition(segments: &[Range<usize>], t_len: usize) -> Result<()> {
    let mut expected = 0;
    for seg in segments {
        if seg.start != expected || seg.end <= seg.start {
            return Err(LossError::Contract(format!(
                "segments must partition 0..{t_len} in order; found {seg:?} where frame {expected} should start"
            )));
        }
        expected = seg.end;
    }
    if expected != t_len {
        return Err(LossError::Contract(format!("segments cover 0..{expected}, sequence has {t_len} frames")));
    }
    Ok(())
}

/// Mean over segments of the mean pairwise squared distance between frame predictions.
///
/// Uses `Σ_{i<j} ‖p_i − p_j‖² = m·Σ‖p_i‖² − ‖Σ p_i‖²` per segment of m rows.
pub fn label_prior_loss_on_tape(tape: &mut Tape, frame_preds: Var, segments: &[Range<usize>]) -> Result<Var> {
    let t_len = tape.value(frame_preds).rows();
    check_partition(segments, t_len)?;
    let mut terms = Vec::new();
    for seg in segments {
        let m = seg.len();
        if m < 2 {
            continue;
        }
        let rows = tape.slice_rows(frame_preds, seg.start, m)?;
        let sq = tape.mul(rows, rows)?;
        let sumsq = tape.sum(sq)?;
        let spread = tape.mul_scalar(sumsq, m as f64)?;
        let col = tape.sum_rows(rows)?;
        let col_sq = tape.mul(col, col)?;
        let centre = tape.sum(col_sq)?;
        let total = tape.sub(spread, centre)?;
        let pairs = (m * (m - 1) / 2) as f64;
        terms.push(tape.mul_scalar(total, 1.0 / pairs)?);
    }
    let zero = tape.constant(Tensor::scalar(0.0));
    let mut acc = zero;
    for t in terms {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.mul_scalar(acc, 1.0 / segments.len() as f64)?)
}

pub fn label_prior_loss(frame_preds: &Tensor, segments: &[Range<usize>]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(frame_preds.clone());
    let loss = label_prior_loss_on_tape(&mut tape, p, segments)?;
    Ok(tape.value(loss).data()[0])
}

/// `original + λ · prior`.
pub fn overall_loss_on_tape(tape: &mut Tape, original: Var, prior: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let scaled = tape.mul_scalar(prior, cfg.lambda)?;
    Ok(tape.add(original, scaled)?)
}

pub fn overall_loss(original: f64, prior: f64, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(original + cfg.lambda * prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradients;

    fn chain4() -> Taxonomy {
        Taxonomy::parse("0\t-1\tA\n1\t0\tB\n2\t1\tC\n3\t2\tD\n").unwrap()
    }

    fn chain3_with_sibling() -> Taxonomy {
        // 0 → 1 → 2, plus 3 a second top-level node.
        Taxonomy::parse("0\t-1\tA\n1\t0\tA::B\n2\t1\tA::B::C\n3\t-1\tZ\n").unwrap()
    }

    #[test]
    fn partial_credit_examples() {
        let tax = chain3_with_sibling();
        let y = tax.ancestor_closure(&[2]).unwrap();
        assert_eq!(partial_credit(&tax, &y, 2, 2).unwrap(), 1.0);
        assert_eq!(partial_credit(&tax, &y, 1, 1).unwrap(), 0.5);
        assert_eq!(partial_credit(&tax, &y, 1, 2).unwrap(), 0.0);
        assert!(partial_credit(&tax, &y, 9, 9).is_err());
    }

    #[test]
    fn partial_credit_monotone_on_path() {
        let tax = chain4();
        let y = tax.ancestor_closure(&[3]).unwrap();
        let credits: Vec<f64> = (0..4).map(|k| partial_credit(&tax, &y, k, k).unwrap()).collect();
        assert_eq!(credits, vec![0.125, 0.25, 0.5, 1.0]);
        assert!(credits.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn hier_loss_hand_cases() {
        let tax = chain3_with_sibling();
        let y = tax.ancestor_closure(&[2]).unwrap();
        let targets = TargetBatch::new(&tax, vec![y]).unwrap();
        let literal = LossConfig::default();
        let blended = LossConfig { variant: HierVariant::Blended, ..literal };

        let perfect = PredictionBatch::new(Tensor::matrix(&[vec![1.0, 1.0, 1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(hier_cross_entropy(&perfect, &targets, &tax, &literal).unwrap(), 0.0);

        // Argmax on the parent (level 1) of the deepest true node (level 2).
        let parent = PredictionBatch::new(Tensor::matrix(&[vec![0.3, 0.8, 0.2, 0.1]]).unwrap()).unwrap();
        assert_eq!(parent.argmax(), &[1]);
        let v = hier_cross_entropy(&parent, &targets, &tax, &literal).unwrap();
        assert!((v - 0.111572).abs() <= 1e-6, "{v}");
        assert!((v - (-0.5 * 0.8f64.ln())).abs() <= 1e-15);

        let off = PredictionBatch::new(Tensor::matrix(&[vec![0.1, 0.2, 0.3, 0.9]]).unwrap()).unwrap();
        assert_eq!(hier_cross_entropy(&off, &targets, &tax, &literal).unwrap(), 0.0);
        assert!(hier_cross_entropy(&off, &targets, &tax, &blended).unwrap() > 0.0);
    }

    #[test]
    fn hier_loss_rejects_empty_and_open_targets() {
        let tax = chain4();
        let empty = TargetBatch::new(&tax, vec![]).unwrap();
        let mut tape = Tape::new();
        let scores = tape.constant(Tensor::zeros(&[0, 4]));
        assert!(hier_cross_entropy_on_tape(&mut tape, scores, &[], &empty, &tax, &LossConfig::default()).is_err());
        let open = LabelSet::from_ids(4, &[3]);
        assert!(TargetBatch::new(&tax, vec![open]).is_err());
    }

    #[test]
    fn multilabel_examples() {
        let tax = chain4();
        let cfg = LossConfig::default();
        let y = tax.ancestor_closure(&[1]).unwrap();
        let targets = TargetBatch::flat(vec![y.clone()]);
        let perfect = PredictionBatch::new(Tensor::new(&[1, 4], y.as_f64()).unwrap()).unwrap();
        let v = multilabel_cross_entropy(&perfect, &targets, &cfg).unwrap();
        assert!(v <= -(1.0 - cfg.epsilon).ln() + 1e-18);

        let half = PredictionBatch::new(Tensor::full(&[1, 4], 0.5)).unwrap();
        let v = multilabel_cross_entropy(&half, &targets, &cfg).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn label_prior_examples() {
        let same = Tensor::matrix(&[vec![0.2, 0.7], vec![0.2, 0.7], vec![0.5, 0.1]]).unwrap();
        assert_eq!(label_prior_loss(&same, &[0..2, 2..3]).unwrap(), 0.0);
        let opposite = Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((label_prior_loss(&opposite, std::slice::from_ref(&(0..2))).unwrap() - 2.0).abs() < 1e-15);
        let constant = Tensor::full(&[4, 3], 0.4);
        assert_eq!(label_prior_loss(&constant, &[0..1, 1..3, 3..4]).unwrap(), 0.0);

        assert!(label_prior_loss(&constant, &[0..2, 1..4]).is_err());
        assert!(label_prior_loss(&constant, std::slice::from_ref(&(0..2))).is_err());
    }

    #[test]
    fn overall_loss_examples() {
        let mut cfg = LossConfig::default();
        assert_eq!(overall_loss(1.3, 9.0, &cfg).unwrap(), 1.3);
        cfg.lambda = 0.5;
        assert_eq!(overall_loss(1.0, 2.0, &cfg).unwrap(), 2.0);
        cfg.lambda = -0.1;
        assert!(matches!(overall_loss(1.0, 2.0, &cfg), Err(LossError::Config(_))));
    }

    #[test]
    fn overall_loss_gradient_reaches_both_terms() {
        let cfg = LossConfig { lambda: 0.7, ..LossConfig::default() };
        let preds = Tensor::matrix(&[vec![0.3, 0.6], vec![0.4, 0.2], vec![0.9, 0.5]]).unwrap();
        let targets = TargetBatch::flat(vec![
            LabelSet::from_ids(2, &[1]),
            LabelSet::from_ids(2, &[0]),
            LabelSet::from_ids(2, &[0, 1]),
        ]);
        let check = check_gradients(
            |tape, v| {
                let bce = multilabel_cross_entropy_on_tape(tape, v[0], &targets, &cfg).map_err(as_tensor_err)?;
                let prior = label_prior_loss_on_tape(tape, v[0], &[0..2, 2..3]).map_err(as_tensor_err)?;
                overall_loss_on_tape(tape, bce, prior, &cfg).map_err(as_tensor_err)
            },
            &[preds],
            1e-6,
        )
        .unwrap();
        assert!(check.max_error() <= 1e-5, "{check:?}");
    }

    fn as_tensor_err(e: LossError) -> TensorError {
        match e {
            LossError::Tensor(t) => t,
            other => TensorError::Contract { op: "loss", detail: other.to_string() },
        }
    }
}
