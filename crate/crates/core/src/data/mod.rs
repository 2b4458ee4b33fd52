//! Video records, padding, splits, the synthetic generator and the binary container.

pub mod format;
pub mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{LabelSet, TaxonomyError};
use crate::tensor::{Tensor, TensorError};

pub use format::{read_dataset, write_dataset, DatasetHeader, DatasetReader, DatasetWriter};
pub use synth::{generate_synthetic, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed dataset at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error("I/O error at byte {offset}: {source}")]
    Io { offset: u64, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub video_feats: Tensor,
    pub audio_feats: Tensor,
    pub scene_starts: Vec<usize>,
    pub truth: LabelSet,
}

impl VideoRecord {
    pub fn frames(&self) -> usize {
        self.video_feats.rows()
    }

    /// Video and audio features side by side, `T×(Dv+Da)`.
    pub fn fused(&self) -> Tensor {
        let t = self.frames();
        let (dv, da) = (self.video_feats.cols(), self.audio_feats.cols());
        let mut data = Vec::with_capacity(t * (dv + da));
        for i in 0..t {
            data.extend_from_slice(self.video_feats.row(i));
            data.extend_from_slice(self.audio_feats.row(i));
        }
        Tensor::new(&[t, dv + da], data).expect("row counts agree")
    }
}

fn resize_rows(t: &Tensor, rows: usize) -> Tensor {
    let c = t.cols();
    let mut data = t.data()[..rows.min(t.rows()) * c].to_vec();
    data.resize(rows * c, 0.0);
    Tensor::new(&[rows, c], data).expect("sized above")
}

/// Zero frames appended, or the tail dropped, to reach `max_frames`; scene starts past the end are removed.
pub fn pad_or_truncate(rec: &VideoRecord, max_frames: usize) -> Result<VideoRecord> {
    if max_frames == 0 {
        return Err(DataError::Config("max_frames must be at least 1".into()));
    }
    Ok(VideoRecord {
        video_id: rec.video_id.clone(),
        video_feats: resize_rows(&rec.video_feats, max_frames),
        audio_feats: resize_rows(&rec.audio_feats, max_frames),
        scene_starts: rec.scene_starts.iter().copied().filter(|&s| s < max_frames).collect(),
        truth: rec.truth.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut by `fractions` (train, val, test).
pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Config(format!("split fractions must be in [0, 1] and sum to 1, got {fractions:?}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split { train: idx, val, test })
}
