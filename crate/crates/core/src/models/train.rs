//! Mini-batch Adam training with deterministic shuffling and early stopping.
//!
//! Per-sample forward/backward passes run in parallel; gradients are summed
//! in sample order so results do not depend on the worker count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, Model, ModelError, ModelInput, Result};
use crate::data::synth::derive_seed;
use crate::data::VideoRecord;
use crate::loss::{self, LossConfig, TargetBatch};
use crate::metrics::{self, EvalRecord, DEFAULT_TOP_N};
use crate::taxonomy::{LabelSet, Taxonomy};
use crate::coherence::CoherenceError;
use crate::loss::LossError;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean binary cross-entropy over all labels.
    #[default]
    Bce,
    /// Hierarchical partial-credit cross-entropy, variant from the loss config.
    Hier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub loss_config: LossConfig,
    pub top_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0002,
            batch_size: 128,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            loss: LossKind::Bce,
            loss_config: LossConfig::default(),
            top_n: DEFAULT_TOP_N,
        }
    }
}

impl TrainConfig {
    /// Small batches and a larger step size for toy datasets.
    pub fn toy() -> Self {
        TrainConfig { learning_rate: 0.005, batch_size: 16, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.top_n == 0 {
            return Err(ModelError::Config("batch size, patience and top_n must be positive".into()));
        }
        self.loss_config.validate()?;
        Ok(())
    }
}

/// One training or evaluation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Tensor,
    pub scene_starts: Vec<usize>,
    pub truth: LabelSet,
}

impl Example {
    pub fn from_record(rec: &VideoRecord) -> Self {
        Example {
            id: rec.video_id.clone(),
            features: rec.fused(),
            scene_starts: rec.scene_starts.clone(),
            truth: rec.truth.clone(),
        }
    }

    pub fn input(&self) -> ModelInput<'_> {
        ModelInput::with_scenes(&self.features, &self.scene_starts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub model: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochStats>,
    /// Epoch whose parameters were kept per trained model; 0 means the initialization.
    pub best_epochs: Vec<usize>,
}

/// Training objective of one example recorded on `tape`, with parameters bound to `vars`.
pub fn example_loss_on_tape(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    ex: &Example,
    cfg: &TrainConfig,
    tax: &Taxonomy,
) -> Result<Var> {
    let out = model.forward_on_tape(tape, vars, &ex.input())?;
    let k = tape.value(out.scores).numel();
    let row = tape.reshape(out.scores, &[1, k])?;
    let original = match cfg.loss {
        LossKind::Bce => {
            let targets = TargetBatch::flat(vec![ex.truth.clone()]);
            loss::multilabel_cross_entropy_on_tape(tape, row, &targets, &cfg.loss_config)?
        }
        LossKind::Hier => {
            let targets = TargetBatch::new(tax, vec![ex.truth.clone()])?;
            let top = loss::argmax(tape.value(row).data());
            loss::hier_cross_entropy_on_tape(tape, row, &[top], &targets, tax, &cfg.loss_config)?
        }
    };
    Ok(match out.frame_scores {
        Some(frames) if cfg.loss_config.lambda > 0.0 => {
            let segments = loss::segments_from_starts(&ex.scene_starts, ex.features.rows());
            let prior = loss::label_prior_loss_on_tape(tape, frames, &segments)?;
            loss::overall_loss_on_tape(tape, original, prior, &cfg.loss_config)?
        }
        _ => original,
    })
}

/// Loss of one example and its gradient per parameter.
pub fn example_loss_and_grad(
    model: &Model,
    ex: &Example,
    cfg: &TrainConfig,
    tax: &Taxonomy,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape, true);
    let total = example_loss_on_tape(&mut tape, model, &vars, ex, cfg, tax)?;
    let value = tape.value(total).data()[0];
    let grads = tape.backward(total)?;
    Ok((value, vars.iter().map(|&v| grads.get_or_zeros(v)).collect()))
}

pub fn predict_all(model: &Model, examples: &[Example]) -> Result<Vec<Vec<f64>>> {
    examples.par_iter().map(|ex| model.predict(&ex.input())).collect()
}

pub fn eval_records(model: &Model, examples: &[Example]) -> Result<Vec<EvalRecord>> {
    let preds = predict_all(model, examples)?;
    examples
        .iter()
        .zip(preds)
        .map(|(ex, p)| EvalRecord::new(ex.id.clone(), p, ex.truth.clone()).map_err(ModelError::from))
        .collect()
}

fn validation_gap(model: &Model, val: &[Example], top_n: usize) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    Ok(metrics::try_global_average_precision(&eval_records(model, val)?, top_n)?)
}

/// Whether an error comes from non-finite values rather than a misconfiguration.
fn is_numeric(e: &ModelError) -> bool {
    let tensor = match e {
        ModelError::Tensor(t) => t,
        ModelError::Coherence(CoherenceError::Tensor(t)) => t,
        ModelError::Loss(LossError::Tensor(t)) => t,
        _ => return false,
    };
    matches!(tensor, TensorError::Domain { .. })
}

/// Trains a single model or, for ensembles, each member in turn.
pub fn train(model: Model, train_set: &[Example], val: &[Example], cfg: &TrainConfig, tax: &Taxonomy) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Contract("training set is empty".into()));
    }
    if !model.config().kind.is_ensemble() {
        return train_single(model, train_set, val, cfg, tax);
    }
    let config = *model.config();
    let (mut members, mut trace, mut best_epochs) = (Vec::new(), Vec::new(), Vec::new());
    for member in model.members()? {
        let out = train_single(member, train_set, val, cfg, tax)?;
        members.push(out.model);
        trace.extend(out.trace);
        best_epochs.extend(out.best_epochs);
    }
    Ok(TrainOutcome { model: Model::from_members(config, &members)?, trace, best_epochs })
}

fn train_single(mut model: Model, train_set: &[Example], val: &[Example], cfg: &TrainConfig, tax: &Taxonomy) -> Result<TrainOutcome> {
    let name = model.config().kind.to_string();
    let mut opt = Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate), model.params());
    let mut best: Option<(f64, usize, Model)> = None;
    let mut last_epoch = 0;
    let mut stale = 0;
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle", epoch as u64)));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(f64, Vec<Tensor>)> = chunk
                .par_iter()
                .map(|&i| example_loss_and_grad(&model, &train_set[i], cfg, tax))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    e if is_numeric(&e) => ModelError::NumericAbort { epoch, batch, detail: e.to_string() },
                    e => e,
                })?;
            let mut grads: Vec<Vec<f64>> = model.params().values().iter().map(|t| vec![0.0; t.numel()]).collect();
            for (pos, (value, g)) in results.iter().enumerate() {
                if !value.is_finite() || g.iter().any(|t| !t.all_finite()) {
                    return Err(ModelError::NumericAbort {
                        epoch,
                        batch,
                        detail: format!("example {} produced loss {value}", train_set[chunk[pos]].id),
                    });
                }
                loss_sum += value;
                for (acc, t) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(t.data()).for_each(|(a, v)| *a += v);
                }
            }
            seen += chunk.len();
            let scale = 1.0 / chunk.len() as f64;
            let grads: Vec<Tensor> = grads
                .into_iter()
                .zip(model.params().values())
                .map(|(g, p)| Tensor::from_shape(p.shape().clone(), g.into_iter().map(|v| v * scale).collect()))
                .collect::<std::result::Result<_, _>>()?;
            opt.step(model.params_mut(), &grads)?;
        }
        let val_gap = validation_gap(&model, val, cfg.top_n)?;
        let train_loss = loss_sum / seen as f64;
        log::info!("{name} epoch {epoch}: train loss {train_loss:.6}, val GAP {val_gap:?}");
        trace.push(EpochStats { model: name.clone(), epoch, train_loss, val_gap });
        last_epoch = epoch;
        match (val_gap, &best) {
            (Some(g), Some((b, _, _))) if g <= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            (Some(g), _) => {
                best = Some((g, epoch, model.clone()));
                stale = 0;
            }
            (None, _) => {}
        }
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, last_epoch),
    };
    Ok(TrainOutcome { model, trace, best_epochs: vec![best_epoch] })
}
