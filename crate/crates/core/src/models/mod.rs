//! Sequence aggregation models and their temporally coherent variants.
//!
//! Every model maps a `T×D` frame matrix to `K` label probabilities through a
//! single affine head followed by a sigmoid. Parameters live in a
//! [`ParamStore`] in a fixed registration order, so a TC variant with its
//! coherence switched off initializes exactly like its plain counterpart.

pub mod checkpoint;
mod nets;
pub mod params;
pub mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coherence::{CoherenceError, DistanceScale, TcKernel};
use crate::loss::LossError;
use crate::metrics::MetricsError;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use params::{Adam, AdamConfig, Bound, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NumericAbort { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Coherence(#[from] CoherenceError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Allowed kernel widths for hyperparameter search.
pub const KERNEL_WIDTH_GRID: [usize; 5] = [5, 9, 13, 17, 21];
/// Allowed feature-map counts for hyperparameter search.
pub const FEATURE_MAP_GRID: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Dnn,
    Netvlad,
    TcNetvlad,
    Rnn,
    RnnAttn,
    TcRnn,
    Tm,
    TcTm,
    Ensemble,
    TcEns,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::Dnn,
        ModelKind::Netvlad,
        ModelKind::TcNetvlad,
        ModelKind::Rnn,
        ModelKind::RnnAttn,
        ModelKind::TcRnn,
        ModelKind::Tm,
        ModelKind::TcTm,
        ModelKind::Ensemble,
        ModelKind::TcEns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dnn => "dnn",
            ModelKind::Netvlad => "netvlad",
            ModelKind::TcNetvlad => "tc-netvlad",
            ModelKind::Rnn => "rnn",
            ModelKind::RnnAttn => "rnn-attn",
            ModelKind::TcRnn => "tc-rnn",
            ModelKind::Tm => "tm",
            ModelKind::TcTm => "tc-tm",
            ModelKind::Ensemble => "ensemble",
            ModelKind::TcEns => "tc-ens",
        }
    }

    /// Member kinds of an ensemble; empty for single models.
    pub fn members(self) -> &'static [ModelKind] {
        match self {
            ModelKind::Ensemble => &[ModelKind::RnnAttn, ModelKind::Netvlad, ModelKind::Tm],
            ModelKind::TcEns => &[ModelKind::TcRnn, ModelKind::TcNetvlad, ModelKind::TcTm],
            _ => &[],
        }
    }

    pub fn is_ensemble(self) -> bool {
        !self.members().is_empty()
    }

    /// The non-coherent counterpart.
    pub fn plain(self) -> ModelKind {
        match self {
            ModelKind::TcNetvlad => ModelKind::Netvlad,
            ModelKind::TcRnn => ModelKind::RnnAttn,
            ModelKind::TcTm => ModelKind::Tm,
            ModelKind::TcEns => ModelKind::Ensemble,
            k => k,
        }
    }

    /// Whether the model produces per-frame label scores usable by the label prior.
    pub fn has_frame_scores(self) -> bool {
        matches!(
            self,
            ModelKind::Dnn | ModelKind::Rnn | ModelKind::RnnAttn | ModelKind::TcRnn | ModelKind::Tm | ModelKind::TcTm
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown model {s:?}")))
    }
}

/// How coherence enters the NetVLAD assignment or the RNN attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TcMode {
    /// Affinity-weighted neighbor logits.
    #[default]
    Exact,
    /// As `Exact`, with neighbor terms zeroed across scene boundaries.
    Gated,
    /// As `Exact`, with gates `sigmoid(a + b·distance)` learned jointly.
    LearnedGate,
    /// A learned temporal convolution feeds the assignment or attention scores.
    Conv,
}

impl FromStr for TcMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(TcMode::Exact),
            "gated" => Ok(TcMode::Gated),
            "learned-gate" => Ok(TcMode::LearnedGate),
            "conv" => Ok(TcMode::Conv),
            _ => Err(ModelError::Config(format!("unknown TC mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_labels: usize,
    pub clusters: usize,
    pub hidden: usize,
    pub heads: usize,
    pub width: usize,
    pub dnn_hidden: usize,
    pub radius: usize,
    pub tc_mode: TcMode,
    pub kernel_width: usize,
    pub feature_maps: usize,
    pub distance_scale: DistanceScale,
}

impl ModelConfig {
    /// Toy-scale defaults.
    pub fn toy(kind: ModelKind, input_dim: usize, num_labels: usize) -> Self {
        ModelConfig {
            kind,
            input_dim,
            num_labels,
            clusters: 8,
            hidden: 32,
            heads: 2,
            width: 16,
            dnn_hidden: 32,
            radius: 2,
            tc_mode: TcMode::Exact,
            kernel_width: 5,
            feature_maps: 4,
            distance_scale: DistanceScale::Raw,
        }
    }

    pub fn with_kind(self, kind: ModelKind) -> Self {
        ModelConfig { kind, ..self }
    }

    fn uses_transformer(&self) -> bool {
        matches!(self.kind, ModelKind::Tm | ModelKind::TcTm) || self.kind.members().contains(&ModelKind::Tm)
            || self.kind.members().contains(&ModelKind::TcTm)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("num_labels", self.num_labels),
            ("clusters", self.clusters),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("width", self.width),
            ("dnn_hidden", self.dnn_hidden),
            ("feature_maps", self.feature_maps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.kernel_width.is_multiple_of(2) {
            return Err(ModelError::Config(format!("kernel width must be odd, got {}", self.kernel_width)));
        }
        if self.uses_transformer() && !self.width.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "transformer width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

/// One sequence presented to a model.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub features: &'a Tensor,
    pub scene_starts: Option<&'a [usize]>,
}

impl<'a> ModelInput<'a> {
    pub fn new(features: &'a Tensor) -> Self {
        ModelInput { features, scene_starts: None }
    }

    pub fn with_scenes(features: &'a Tensor, scene_starts: &'a [usize]) -> Self {
        ModelInput { features, scene_starts: Some(scene_starts) }
    }
}

/// Tape outputs of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Label probabilities, shape `[K]`.
    pub scores: Var,
    /// Per-frame label probabilities `T×K`, when the model has them.
    pub frame_scores: Option<Var>,
    /// Attention weights over frames `[T]`, for attention-pooled models.
    pub attention: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        if config.kind.is_ensemble() {
            for (i, &member) in config.kind.members().iter().enumerate() {
                nets::register(&mut params, &member_prefix(i), &config.with_kind(member), &mut rng)?;
            }
        } else {
            nets::register(&mut params, "", &config, &mut rng)?;
        }
        Ok(Model { config, params })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes against the layout.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let layout = Model::init(config, 0)?;
        if layout.params.names() != params.names() {
            return Err(ModelError::Contract(format!(
                "parameter names do not match the {} layout",
                config.kind
            )));
        }
        for ((name, a), b) in layout.params.iter().zip(params.values()) {
            if a.dims() != b.dims() {
                return Err(ModelError::Contract(format!("parameter {name}: expected {}, got {}", a.shape(), b.shape())));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    /// Members of an ensemble as standalone models.
    pub fn members(&self) -> Result<Vec<Model>> {
        let mut out = Vec::new();
        for (i, &kind) in self.config.kind.members().iter().enumerate() {
            let prefix = member_prefix(i);
            let mut store = ParamStore::new();
            for (name, value) in self.params.iter() {
                if let Some(rest) = name.strip_prefix(&prefix) {
                    store.insert(rest, value.clone())?;
                }
            }
            out.push(Model::from_parts(self.config.with_kind(kind), store)?);
        }
        Ok(out)
    }

    /// Assembles an ensemble from trained members.
    pub fn from_members(config: ModelConfig, members: &[Model]) -> Result<Self> {
        let kinds: Vec<ModelKind> = members.iter().map(|m| m.config.kind).collect();
        if kinds != config.kind.members() {
            return Err(ModelError::Contract(format!("{} expects members {:?}, got {kinds:?}", config.kind, config.kind.members())));
        }
        if let Some(m) = members.iter().find(|m| m.num_labels() != config.num_labels) {
            return Err(ModelError::Contract(format!(
                "member {} predicts {} labels, ensemble has {}",
                m.config.kind,
                m.num_labels(),
                config.num_labels
            )));
        }
        let mut store = ParamStore::new();
        for (i, m) in members.iter().enumerate() {
            for (name, value) in m.params.iter() {
                store.insert(&format!("{}{name}", member_prefix(i)), value.clone())?;
            }
        }
        Model::from_parts(config, store)
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[Var], input: &ModelInput<'_>) -> Result<Forward> {
        let f = input.features;
        if f.shape().rank() != 2 || f.rows() == 0 || f.cols() != self.config.input_dim {
            return Err(ModelError::Contract(format!(
                "expected T×{} frames with T ≥ 1, got {}",
                self.config.input_dim,
                f.shape()
            )));
        }
        let bound = Bound::new(&self.params, vars);
        if !self.config.kind.is_ensemble() {
            return nets::forward(tape, bound, &self.config, input);
        }
        let prefixes: Vec<String> = (0..self.config.kind.members().len()).map(member_prefix).collect();
        let mut total: Option<Var> = None;
        for (kind, prefix) in self.config.kind.members().iter().zip(&prefixes) {
            let out = nets::forward(tape, bound.with_prefix(prefix), &self.config.with_kind(*kind), input)?;
            total = Some(match total {
                Some(t) => tape.add(t, out.scores)?,
                None => out.scores,
            });
        }
        let mean = tape.mul_scalar(total.expect("ensembles have members"), 1.0 / prefixes.len() as f64)?;
        Ok(Forward { scores: mean, frame_scores: None, attention: None })
    }

    /// Label probabilities for one sequence.
    pub fn predict(&self, input: &ModelInput<'_>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &vars, input)?;
        Ok(tape.value(out.scores).data().to_vec())
    }

    /// Attention weights over frames, for attention-pooled models.
    pub fn attention(&self, input: &ModelInput<'_>) -> Result<Option<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &vars, input)?;
        Ok(out.attention.map(|a| tape.value(a).data().to_vec()))
    }

    /// Learned temporal kernels by parameter name.
    pub fn kernels(&self) -> Result<Vec<(String, TcKernel)>> {
        self.params
            .iter()
            .filter(|(name, _)| name.contains("kernel"))
            .map(|(name, value)| Ok((name.to_string(), TcKernel::new(value.clone())?)))
            .collect()
    }

    /// Sets every temporal kernel to unit impulses.
    pub fn reset_kernels_to_delta(&mut self) -> Result<()> {
        let names: Vec<String> = self.params.names().iter().filter(|n| n.contains("kernel")).cloned().collect();
        for name in names {
            let dims = self.params.get(&name)?.dims().to_vec();
            self.params.set(&name, TcKernel::delta(dims[0], dims[1])?.weights().clone())?;
        }
        Ok(())
    }
}

fn member_prefix(i: usize) -> String {
    format!("m{i}.")
}
