//! Seeded stand-in for a frozen backbone applied to a labeled video dataset.
//!
//! Every class `c` owns a unit direction `u_c`. A video draws a base vector
//! `z ~ sigma_z * N(0, I)`, and a clip whose temporal center sits at fraction
//! `m` of the video gets `z + (m - 0.5) * s * u_c + sigma_eps * N(0, I)`.
//! A single clip therefore says little about its class, while the drift of a
//! video's clips along time recovers `u_c`.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` consumed in a fixed
//! order: class directions, then training videos class by class, then
//! evaluation videos class by class.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ClipRecord, CropBox, FeatureStore, StoreError, VideoDims, VideoRecord};

pub const VIDEO_HEIGHT: u32 = 224;
pub const VIDEO_WIDTH: u32 = 224;
pub const VIDEO_FRAMES: u32 = 160;
pub const CLIP_FRAMES: u32 = 16;
/// Side of the three fixed spatial evaluation crops.
const EVAL_CROP: u32 = 168;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub train_videos_per_class: usize,
    pub eval_videos_per_class: usize,
    pub feature_dim: usize,
    pub clips_per_train_video: usize,
    /// Temporal positions times three spatial crops; 15 gives the 5x3 grid.
    pub clips_per_eval_video: usize,
    pub base_scale: f64,
    pub drift_scale: f64,
    pub noise_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 10,
            train_videos_per_class: 200,
            eval_videos_per_class: 50,
            feature_dim: 64,
            clips_per_train_video: 16,
            clips_per_eval_video: 15,
            base_scale: 1.0,
            drift_scale: 1.0,
            noise_scale: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.num_classes == 0
            || self.train_videos_per_class == 0
            || self.eval_videos_per_class == 0
            || self.feature_dim == 0
            || self.clips_per_train_video == 0
            || self.clips_per_eval_video == 0
        {
            return Err(StoreError::Spec("all counts must be positive"));
        }
        if !self.clips_per_eval_video.is_multiple_of(3) {
            return Err(StoreError::Spec(
                "clips_per_eval_video must be a multiple of 3 (temporal x 3 spatial crops)",
            ));
        }
        let scales = [self.base_scale, self.drift_scale, self.noise_scale];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(StoreError::Spec("scales must be finite and non-negative"));
        }
        Ok(())
    }
}

fn dims() -> VideoDims {
    VideoDims {
        height: VIDEO_HEIGHT,
        width: VIDEO_WIDTH,
        frames: VIDEO_FRAMES,
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn clip_feature(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    base: &[f64],
    direction: &[f64],
    coords: &CropBox,
) -> Vec<f32> {
    let m = (coords.q as f64 + coords.t as f64 / 2.0) / VIDEO_FRAMES as f64;
    let drift = (m - 0.5) * spec.drift_scale;
    base.iter()
        .zip(direction)
        .map(|(&z, &u)| {
            let noise: f64 = rng.sample(StandardNormal);
            (z + drift * u + spec.noise_scale * noise) as f32
        })
        .collect()
}

fn random_crop(rng: &mut ChaCha8Rng) -> CropBox {
    let q = rng.gen_range(0..=VIDEO_FRAMES - CLIP_FRAMES);
    let h = rng.gen_range(VIDEO_HEIGHT / 2..=VIDEO_HEIGHT);
    let w = rng.gen_range(VIDEO_WIDTH / 2..=VIDEO_WIDTH);
    let x = rng.gen_range(0..=VIDEO_HEIGHT - h);
    let y = rng.gen_range(0..=VIDEO_WIDTH - w);
    CropBox {
        x: x as f32,
        y: y as f32,
        q: q as f32,
        h: h as f32,
        w: w as f32,
        t: CLIP_FRAMES as f32,
    }
}

/// Uniform temporal positions, each with left, center and right crops.
pub(crate) fn eval_grid(clips: usize) -> Vec<CropBox> {
    let temporal = clips / 3;
    let span = (VIDEO_FRAMES - CLIP_FRAMES) as f64;
    let x = ((VIDEO_HEIGHT - EVAL_CROP) / 2) as f32;
    let free = VIDEO_WIDTH - EVAL_CROP;
    let mut out = Vec::with_capacity(clips);
    for k in 0..temporal {
        let q = if temporal == 1 {
            num_traits::Float::round(span / 2.0)
        } else {
            num_traits::Float::round(k as f64 * span / (temporal - 1) as f64)
        };
        for y in [0, free / 2, free] {
            out.push(CropBox {
                x,
                y: y as f32,
                q: q as f32,
                h: EVAL_CROP as f32,
                w: EVAL_CROP as f32,
                t: CLIP_FRAMES as f32,
            });
        }
    }
    out
}

/// Returns `(train, eval)` stores; a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FeatureStore, FeatureStore), StoreError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;
    let directions: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let v = normal_vec(&mut rng, d, 1.0);
            if let Ok(u) = crate::numerics::l2_normalize(&v) {
                break u;
            }
        })
        .collect();

    let mut train = Vec::with_capacity(spec.num_classes * spec.train_videos_per_class);
    for (c, u) in directions.iter().enumerate() {
        for i in 0..spec.train_videos_per_class {
            let z = normal_vec(&mut rng, d, spec.base_scale);
            let clips = (0..spec.clips_per_train_video)
                .map(|_| {
                    let coords = random_crop(&mut rng);
                    let feature = clip_feature(&mut rng, spec, &z, u, &coords);
                    ClipRecord { coords, feature }
                })
                .collect();
            train.push(VideoRecord {
                id: format!("train-c{c}-{i}"),
                label: Some(c as u32),
                dims: dims(),
                clips,
            });
        }
    }

    let grid = eval_grid(spec.clips_per_eval_video);
    let mut eval = Vec::with_capacity(spec.num_classes * spec.eval_videos_per_class);
    for (c, u) in directions.iter().enumerate() {
        for i in 0..spec.eval_videos_per_class {
            let z = normal_vec(&mut rng, d, spec.base_scale);
            let clips = grid
                .iter()
                .map(|coords| ClipRecord {
                    coords: *coords,
                    feature: clip_feature(&mut rng, spec, &z, u, coords),
                })
                .collect();
            eval.push(VideoRecord {
                id: format!("eval-c{c}-{i}"),
                label: Some(c as u32),
                dims: dims(),
                clips,
            });
        }
    }
    Ok((FeatureStore::new(d, train)?, FeatureStore::new(d, eval)?))
}
