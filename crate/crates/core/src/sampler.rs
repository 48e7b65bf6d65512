//! Training batch assembly: two disjoint views of `K` stored clips per video,
//! a random masked subset per view, and packed features/coordinates.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::numerics::{Real, Tensor};
use crate::store::{FeatureStore, VideoRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("video {id:?} has {available} clips, two views of {per_view} need {}", 2 * per_view)]
    TooFewClips {
        id: String,
        available: usize,
        per_view: usize,
    },
    #[error("batch spec: {0}")]
    Spec(&'static str),
    #[error("video index {0} out of range")]
    Index(usize),
}

/// Two disjoint index lists into a video's clips.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewPair {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Masked positions (ascending) within each view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub clips_per_view: usize,
    pub mask_ratio: f64,
}

impl BatchSpec {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.batch_size < 2 {
            return Err(SamplerError::Spec("batch size must be at least 2"));
        }
        if self.clips_per_view == 0 {
            return Err(SamplerError::Spec("clips per view must be at least 1"));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(SamplerError::Spec("mask ratio must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// `max(1, round(ratio * k))`, rounding half away from zero.
pub fn mask_count(k: usize, ratio: f64) -> usize {
    let n = num_traits::Float::round(ratio * k as f64) as usize;
    n.clamp(1, k.max(1))
}

/// Uniform random disjoint split of a video's clips into two views of `k`.
pub fn split_views<R: Rng + ?Sized>(video: &VideoRecord, k: usize, rng: &mut R) -> Result<ViewPair, SamplerError> {
    let n = video.clips.len();
    if k == 0 || 2 * k > n {
        return Err(SamplerError::TooFewClips {
            id: video.id.clone(),
            available: n,
            per_view: k,
        });
    }
    let picked = index::sample(rng, n, 2 * k).into_vec();
    Ok(ViewPair {
        first: picked[..k].to_vec(),
        second: picked[k..].to_vec(),
    })
}

/// Independent uniformly random masked subsets for the two views.
pub fn choose_masks<R: Rng + ?Sized>(k: usize, ratio: f64, rng: &mut R) -> MaskPlan {
    let m = mask_count(k, ratio);
    let mut draw = || {
        let mut v = index::sample(rng, k, m).into_vec();
        v.sort_unstable();
        v
    };
    let first = draw();
    let second = draw();
    MaskPlan { first, second }
}

/// Shuffled epoch order chunked into batches; a trailing batch smaller than
/// two videos is dropped.
pub fn epoch_batches<R: Rng + ?Sized>(count: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Clip sets packed for the predictor: `sets` consecutive groups of
/// `set_len` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SetInput<T> {
    /// `[sets * set_len, D]` backbone features.
    pub features: Tensor<T>,
    /// `[sets * set_len, 6]` normalized crop coordinates.
    pub coords: Tensor<T>,
    /// One flag per row; masked rows are replaced by the MSK token.
    pub masked: Vec<bool>,
    pub set_len: usize,
}

impl<T: Real> SetInput<T> {
    pub fn sets(&self) -> usize {
        self.masked.len() / self.set_len
    }

    /// Packs whole videos, every clip in stored order, with no masking.
    pub fn from_videos(videos: &[&VideoRecord], feature_dim: usize) -> Option<Self> {
        let set_len = videos.first()?.clips.len();
        if videos.iter().any(|v| v.clips.len() != set_len) {
            return None;
        }
        let rows: Vec<(&VideoRecord, usize)> = videos.iter().flat_map(|v| (0..set_len).map(move |i| (*v, i))).collect();
        Some(pack_rows(&rows, feature_dim, vec![false; rows.len()], set_len))
    }
}

fn pack_rows<T: Real>(rows: &[(&VideoRecord, usize)], d: usize, masked: Vec<bool>, set_len: usize) -> SetInput<T> {
    let mut features = Vec::with_capacity(rows.len() * d);
    let mut coords = Vec::with_capacity(rows.len() * 6);
    for &(v, i) in rows {
        let clip = &v.clips[i];
        features.extend(clip.feature.iter().map(|&x| T::lit(x as f64)));
        coords.extend(clip.coords.normalized(v.dims).iter().map(|&x| T::lit(x)));
    }
    SetInput {
        features: Tensor::new(vec![rows.len(), d], features).expect("packed shape"),
        coords: Tensor::new(vec![rows.len(), 6], coords).expect("packed shape"),
        masked,
        set_len,
    }
}

/// A packed training batch. Sets are view-major: set `j * B + b` is view `j`
/// of the `b`-th video.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedBatch<T> {
    pub input: SetInput<T>,
    pub batch_size: usize,
    pub video_indices: Vec<usize>,
    pub views: Vec<ViewPair>,
    pub masks: Vec<MaskPlan>,
}

impl<T> PackedBatch<T> {
    /// Row index (into the packed clip rows) of every masked position, in
    /// row order.
    pub fn masked_rows(&self) -> Vec<usize> {
        self.input
            .masked
            .iter()
            .enumerate()
            .filter_map(|(r, &m)| m.then_some(r))
            .collect()
    }
}

/// Splits, masks and packs the given videos. RNG draws happen per video in
/// order: view split, then the two masks.
pub fn assemble_batch<T: Real, R: Rng + ?Sized>(
    store: &FeatureStore,
    video_indices: &[usize],
    spec: &BatchSpec,
    rng: &mut R,
) -> Result<PackedBatch<T>, SamplerError> {
    spec.validate()?;
    let k = spec.clips_per_view;
    let b = video_indices.len();
    let mut views = Vec::with_capacity(b);
    let mut masks = Vec::with_capacity(b);
    for &vi in video_indices {
        let video = store.videos.get(vi).ok_or(SamplerError::Index(vi))?;
        views.push(split_views(video, k, rng)?);
        masks.push(choose_masks(k, spec.mask_ratio, rng));
    }
    let mut rows = Vec::with_capacity(2 * b * k);
    let mut masked = vec![false; 2 * b * k];
    for view in 0..2 {
        for (slot, &vi) in video_indices.iter().enumerate() {
            let video = &store.videos[vi];
            let (idx, mask) = if view == 0 {
                (&views[slot].first, &masks[slot].first)
            } else {
                (&views[slot].second, &masks[slot].second)
            };
            let base = (view * b + slot) * k;
            for &p in mask {
                masked[base + p] = true;
            }
            rows.extend(idx.iter().map(|&i| (video, i)));
        }
    }
    Ok(PackedBatch {
        input: pack_rows(&rows, store.feature_dim, masked, k),
        batch_size: b,
        video_indices: video_indices.to_vec(),
        views,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{generate_synthetic, SyntheticSpec};
    use alloc::collections::BTreeSet;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> FeatureStore {
        let spec = SyntheticSpec {
            num_classes: 2,
            train_videos_per_class: 3,
            eval_videos_per_class: 1,
            feature_dim: 4,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn mask_counts() {
        assert_eq!(mask_count(8, 0.25), 2);
        assert_eq!(mask_count(16, 0.25), 4);
        assert_eq!(mask_count(4, 0.1), 1);
        assert_eq!(mask_count(2, 0.25), 1);
        assert_eq!(mask_count(6, 0.25), 2); // 1.5 rounds away from zero
    }

    #[test]
    fn split_examples() {
        let s = store();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = split_views(&s.videos[0], 8, &mut rng).unwrap();
        let all: BTreeSet<usize> = v.first.iter().chain(&v.second).copied().collect();
        assert_eq!(all.len(), 16);
        let mut two = s.videos[0].clone();
        two.clips.truncate(2);
        let v = split_views(&two, 1, &mut rng).unwrap();
        assert!((v.first == [0] && v.second == [1]) || (v.first == [1] && v.second == [0]));
        let mut four = s.videos[0].clone();
        four.clips.truncate(4);
        assert!(matches!(
            split_views(&four, 3, &mut rng),
            Err(SamplerError::TooFewClips {
                available: 4,
                per_view: 3,
                ..
            })
        ));
    }

    #[test]
    fn batch_shapes_and_coords() {
        let s = store();
        let spec = BatchSpec {
            batch_size: 3,
            clips_per_view: 4,
            mask_ratio: 0.25,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b: PackedBatch<f32> = assemble_batch(&s, &[0, 2, 5], &spec, &mut rng).unwrap();
        assert_eq!(b.input.features.shape(), &[24, 4]);
        assert_eq!(b.input.coords.shape(), &[24, 6]);
        assert_eq!(b.masked_rows().len(), 6);
        for r in 0..24 {
            let c = b.input.coords.row(r);
            assert!(c.iter().all(|&x| (0.0..=1.0).contains(&x)));
            for k in 0..3 {
                assert!(c[k + 3] > c[k]);
            }
        }
        // the second view of video slot 1 starts at set 3 + 1
        let expect = &s.videos[2].clips[b.views[1].second[0]].feature;
        assert_eq!(b.input.features.row(4 * 4), &expect[..]);
        let again: PackedBatch<f32> = assemble_batch(&s, &[0, 2, 5], &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again, b);
    }

    #[test]
    fn trailing_singleton_batch_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batches = epoch_batches(9, 4, &mut rng);
        assert_eq!(batches.len(), 2);
        let batches = epoch_batches(10, 4, &mut rng);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
    }

    proptest! {
        #[test]
        fn masks_have_exact_size(k in 1usize..20, ratio in 0.01f64..0.99, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let plan = choose_masks(k, ratio, &mut rng);
            let m = mask_count(k, ratio);
            prop_assert!(m >= 1);
            for view in [&plan.first, &plan.second] {
                prop_assert_eq!(view.len(), m);
                prop_assert!(view.iter().all(|&p| p < k));
                prop_assert!(view.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
