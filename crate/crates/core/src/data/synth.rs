//! Scene-structured synthetic videos.
//!
//! Each taxonomy node owns a random offset; a leaf's centroid is the sum of
//! offsets along its path, so siblings share their ancestors' component.
//! A video is a run of scenes, each showing one uniformly drawn leaf.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Result, VideoRecord};
use crate::taxonomy::Taxonomy;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub scenes_min: usize,
    pub scenes_max: usize,
    /// Standard deviation of per-frame noise around the scene centroid.
    pub sigma: f64,
    /// Correlation between the audio view and its latent class centroid, in `[0, 1]`.
    pub audio_correlation: f64,
    pub video_dim: usize,
    pub audio_dim: usize,
    /// Standard deviation of each node's centroid offset.
    pub centroid_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 512,
            frames_min: 8,
            frames_max: 16,
            scenes_min: 1,
            scenes_max: 3,
            sigma: 0.3,
            audio_correlation: 0.8,
            video_dim: 16,
            audio_dim: 4,
            centroid_scale: 1.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DataError::Config(m));
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return fail(format!("frame range {}..={} is empty", self.frames_min, self.frames_max));
        }
        if self.scenes_min == 0 || self.scenes_min > self.scenes_max {
            return fail(format!("scene range {}..={} is empty", self.scenes_min, self.scenes_max));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.audio_correlation) {
            return fail(format!("audio correlation must lie in [0, 1], got {}", self.audio_correlation));
        }
        if self.video_dim == 0 {
            return fail("video_dim must be positive".into());
        }
        Ok(())
    }
}

/// Seed for stream `index` derived from `seed`, independent of generation order.
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Values stored on disk as float32; generating them at that precision keeps round trips exact.
fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Per-node video and audio centroids.
#[derive(Debug, Clone)]
pub struct Centroids {
    pub video: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
}

pub fn centroids(cfg: &SynthConfig, tax: &Taxonomy) -> Centroids {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "centroids", 0));
    let mut offsets_v = Vec::with_capacity(tax.len());
    let mut offsets_a = Vec::with_capacity(tax.len());
    for _ in 0..tax.len() {
        offsets_v.push((0..cfg.video_dim).map(|_| cfg.centroid_scale * normal(&mut rng)).collect::<Vec<_>>());
        offsets_a.push((0..cfg.audio_dim).map(|_| cfg.centroid_scale * normal(&mut rng)).collect::<Vec<_>>());
    }
    let path_sum = |offsets: &[Vec<f64>], id: usize, dim: usize| {
        let mut acc = vec![0.0; dim];
        let mut cur = Some(id);
        while let Some(n) = cur {
            acc.iter_mut().zip(&offsets[n]).for_each(|(a, o)| *a += o);
            cur = tax.nodes()[n].parent;
        }
        acc
    };
    Centroids {
        video: (0..tax.len()).map(|i| path_sum(&offsets_v, i, cfg.video_dim)).collect(),
        audio: (0..tax.len()).map(|i| path_sum(&offsets_a, i, cfg.audio_dim)).collect(),
    }
}

/// The scene plan of one record: start frames and the leaf shown in each scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenePlan {
    pub frames: usize,
    pub starts: Vec<usize>,
    pub leaves: Vec<usize>,
}

pub fn scene_plan(cfg: &SynthConfig, leaves: &[usize], index: u64) -> ScenePlan {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "plan", index));
    let frames = rng.random_range(cfg.frames_min..=cfg.frames_max);
    let scenes = rng.random_range(cfg.scenes_min..=cfg.scenes_max).min(frames);
    let mut cuts = rand::seq::index::sample(&mut rng, frames - 1, scenes - 1).into_vec();
    cuts.sort_unstable();
    let mut starts = vec![0];
    starts.extend(cuts.into_iter().map(|c| c + 1));
    let chosen = (0..scenes).map(|_| leaves[rng.random_range(0..leaves.len())]).collect();
    ScenePlan { frames, starts, leaves: chosen }
}

pub fn generate_record(cfg: &SynthConfig, tax: &Taxonomy, cents: &Centroids, index: u64) -> Result<VideoRecord> {
    let leaves = tax.leaves();
    let plan = scene_plan(cfg, &leaves, index);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "frames", index));
    let rho = cfg.audio_correlation;
    let audio_noise = (1.0 - rho * rho).sqrt() * cfg.sigma;
    let (mut video, mut audio) = (Vec::new(), Vec::new());
    for (s, &leaf) in plan.leaves.iter().enumerate() {
        let end = plan.starts.get(s + 1).copied().unwrap_or(plan.frames);
        for _ in plan.starts[s]..end {
            for c in &cents.video[leaf] {
                video.push(f32_exact(c + cfg.sigma * normal(&mut rng)));
            }
            for c in &cents.audio[leaf] {
                audio.push(f32_exact(rho * c + audio_noise * normal(&mut rng)));
            }
        }
    }
    Ok(VideoRecord {
        video_id: format!("vid{index:06}"),
        video_feats: Tensor::new(&[plan.frames, cfg.video_dim], video)?,
        audio_feats: Tensor::new(&[plan.frames, cfg.audio_dim], audio)?,
        scene_starts: plan.starts,
        truth: tax.ancestor_closure(&plan.leaves)?,
    })
}

/// `num_videos` records; record `i` depends only on `(cfg, tax, i)`.
pub fn generate_synthetic(cfg: &SynthConfig, tax: &Taxonomy) -> Result<Vec<VideoRecord>> {
    cfg.validate()?;
    if tax.leaves().len() < 2 {
        return Err(DataError::Config("taxonomy needs at least two leaves".into()));
    }
    let cents = centroids(cfg, tax);
    (0..cfg.num_videos as u64).map(|i| generate_record(cfg, tax, &cents, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coherence::{affinity, DistanceScale};

    fn toy() -> Taxonomy {
        Taxonomy::from_parents(&[(None, "a"), (None, "b"), (Some(0), "a1"), (Some(0), "a2"), (Some(1), "b1")]).unwrap()
    }

    #[test]
    fn noiseless_single_scene_frames_coincide() {
        let cfg = SynthConfig { num_videos: 3, sigma: 0.0, scenes_min: 1, scenes_max: 1, ..Default::default() };
        for r in generate_synthetic(&cfg, &toy()).unwrap() {
            let d = affinity(&r.fused(), DistanceScale::Raw).unwrap();
            assert!(d.values().data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn generation_is_deterministic_and_order_free() {
        let cfg = SynthConfig { num_videos: 6, ..Default::default() };
        let tax = toy();
        let all = generate_synthetic(&cfg, &tax).unwrap();
        assert_eq!(all, generate_synthetic(&cfg, &tax).unwrap());
        let cents = centroids(&cfg, &tax);
        assert_eq!(generate_record(&cfg, &tax, &cents, 4).unwrap(), all[4]);
    }

    #[test]
    fn truths_are_closed_and_scenes_valid() {
        let cfg = SynthConfig { num_videos: 50, scenes_max: 4, ..Default::default() };
        let tax = toy();
        for r in generate_synthetic(&cfg, &tax).unwrap() {
            assert!(tax.is_closed(&r.truth));
            crate::coherence::validate_scene_starts(&r.scene_starts, r.frames()).unwrap();
            assert!((cfg.frames_min..=cfg.frames_max).contains(&r.frames()));
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { sigma: -1.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { frames_min: 5, frames_max: 4, ..Default::default() }.validate().is_err());
        let flat = Taxonomy::from_parents(&[(None, "only")]).unwrap();
        assert!(generate_synthetic(&SynthConfig::default(), &flat).is_err());
    }
}
