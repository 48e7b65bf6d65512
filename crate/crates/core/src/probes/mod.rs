//! Frozen-representation evaluation: extraction over every clip of a video,
//! k-NN retrieval, per-clip softmax heads with prediction averaging,
//! predictor fine-tuning and class-balanced low-shot subsampling.

mod finetune;
mod head;
mod knn;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ModelError, ModelParams};
use crate::numerics::Tensor;
use crate::sampler::SetInput;
use crate::store::{FeatureStore, VideoRecord};

pub use finetune::{ft_probe, FtInit};
pub use head::{linear_probe, mlp_probe, HeadMode};
pub use knn::{knn_classify, knn_probe, Vote};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("video {0:?} has no label")]
    Unlabeled(String),
    #[error("videos have differing clip counts ({first} and {other})")]
    ClipCounts { first: usize, other: usize },
    #[error("empty store")]
    Empty,
    #[error("invalid probe config: {0}")]
    Config(&'static str),
    #[error("representations lack {0}; extract them with a model")]
    MissingModelOutputs(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] crate::trainer::OptimError),
}

/// Representations of one video: raw clip features, refined clip tokens and
/// the summary token.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRepr {
    pub id: String,
    pub label: Option<u32>,
    /// `[clips, D]`.
    pub raw: Tensor<f32>,
    /// `[clips, d_h]` when a model was applied.
    pub refined: Option<Tensor<f32>>,
    pub cls: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReprSet {
    pub videos: Vec<VideoRepr>,
}

impl ReprSet {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub(crate) fn labels(&self) -> Result<Vec<u32>, ProbeError> {
        self.videos
            .iter()
            .map(|v| v.label.ok_or_else(|| ProbeError::Unlabeled(v.id.clone())))
            .collect()
    }
}

fn uniform_clips(store: &FeatureStore) -> Result<usize, ProbeError> {
    let first = store.videos.first().ok_or(ProbeError::Empty)?.clips.len();
    if let Some(v) = store.videos.iter().find(|v| v.clips.len() != first) {
        return Err(ProbeError::ClipCounts {
            first,
            other: v.clips.len(),
        });
    }
    Ok(first)
}

fn raw_tensor(v: &VideoRecord, d: usize) -> Tensor<f32> {
    let data = v.clips.iter().flat_map(|c| c.feature.iter().copied()).collect();
    Tensor::new(alloc::vec![v.clips.len(), d], data).expect("clip features")
}

/// Raw clip features only.
pub fn extract_raw(store: &FeatureStore) -> Result<ReprSet, ProbeError> {
    uniform_clips(store)?;
    Ok(ReprSet {
        videos: store
            .videos
            .iter()
            .map(|v| VideoRepr {
                id: v.id.clone(),
                label: v.label,
                raw: raw_tensor(v, store.feature_dim),
                refined: None,
                cls: None,
            })
            .collect(),
    })
}

/// Videos encoded per forward pass; sets are independent, so this only
/// bounds memory.
const EXTRACT_CHUNK: usize = 64;

/// Feeds all clips of each video jointly through the predictor with nothing
/// masked.
pub fn extract_representations(store: &FeatureStore, model: &ModelParams<f32>) -> Result<ReprSet, ProbeError> {
    let mut out = extract_raw(store)?;
    let clips = uniform_clips(store)?;
    let h = model.config.hidden_dim;
    for (chunk, reprs) in store
        .videos
        .chunks(EXTRACT_CHUNK)
        .zip(out.videos.chunks_mut(EXTRACT_CHUNK))
    {
        let refs: Vec<&VideoRecord> = chunk.iter().collect();
        let input = SetInput::from_videos(&refs, store.feature_dim).expect("uniform clip counts");
        let (tokens, summary) = model.encode(&input)?;
        for (i, r) in reprs.iter_mut().enumerate() {
            let rows = tokens.data()[i * clips * h..(i + 1) * clips * h].to_vec();
            r.refined = Some(Tensor::new(alloc::vec![clips, h], rows).expect("token rows"));
            r.cls = Some(summary.row(i).to_vec());
        }
    }
    Ok(out)
}

/// Keeps `max(1, round(fraction * n_c))` videos of every class `c`, drawn
/// uniformly without replacement; kept videos stay in store order.
pub fn lowshot_subsample(store: &FeatureStore, fraction: f64, seed: u64) -> Result<FeatureStore, ProbeError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ProbeError::Config("low-shot fraction must lie in (0, 1]"));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, v) in store.videos.iter().enumerate() {
        let label = v.label.ok_or_else(|| ProbeError::Unlabeled(v.id.clone()))?;
        by_class.entry(label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for members in by_class.values() {
        let n = members.len();
        let take = (num_traits::Float::round(fraction * n as f64) as usize).clamp(1, n);
        keep.extend(index::sample(&mut rng, n, take).into_iter().map(|j| members[j]));
    }
    keep.sort_unstable();
    Ok(FeatureStore {
        feature_dim: store.feature_dim,
        videos: keep.into_iter().map(|i| store.videos[i].clone()).collect(),
    })
}

/// Which per-video vector a k-NN probe compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selector {
    Cls,
    MeanRaw,
    MeanRefined,
}

impl Selector {
    pub fn name(self) -> &'static str {
        match self {
            Selector::Cls => "cls",
            Selector::MeanRaw => "mean-raw",
            Selector::MeanRefined => "mean-refined",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub k: usize,
    pub knn_temperature: f64,
    /// Plain majority vote instead of `exp(sim / temperature)` weights.
    pub knn_majority: bool,
    pub selector: Selector,
    pub lrs: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub optimizers: Vec<OptimizerKind>,
    pub epochs: usize,
    pub bn_no_affine: bool,
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            k: 20,
            knn_temperature: 0.07,
            knn_majority: false,
            selector: Selector::Cls,
            lrs: alloc::vec![1e-3, 3e-3, 1e-2],
            weight_decays: alloc::vec![0.0, 1e-4],
            batch_sizes: alloc::vec![64, 256],
            optimizers: alloc::vec![OptimizerKind::Adam, OptimizerKind::SgdMomentum],
            epochs: 20,
            bn_no_affine: true,
            mlp_hidden: 256,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.k == 0 {
            return Err(ProbeError::Config("k must be at least 1"));
        }
        if self.knn_temperature.is_nan() || self.knn_temperature <= 0.0 {
            return Err(ProbeError::Config("k-NN temperature must be positive"));
        }
        if self.lrs.is_empty()
            || self.weight_decays.is_empty()
            || self.batch_sizes.is_empty()
            || self.optimizers.is_empty()
        {
            return Err(ProbeError::Config("every grid axis needs at least one value"));
        }
        if self.lrs.iter().any(|&l| l <= 0.0 || !l.is_finite())
            || self.weight_decays.iter().any(|&w| w < 0.0 || !w.is_finite())
            || self.batch_sizes.contains(&0)
        {
            return Err(ProbeError::Config(
                "grid values must be positive (weight decay non-negative)",
            ));
        }
        Ok(())
    }

    /// Grid points ordered by lr, then weight decay, then batch size, then
    /// optimizer, all ascending; the first best point wins ties.
    pub fn grid(&self) -> Vec<GridPoint> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let mut batches = self.batch_sizes.clone();
        batches.sort_unstable();
        batches.dedup();
        let mut opts = self.optimizers.clone();
        opts.sort_unstable();
        opts.dedup();
        let mut out = Vec::new();
        for &lr in &sorted(&self.lrs) {
            for &weight_decay in &sorted(&self.weight_decays) {
                for &batch_size in &batches {
                    for &optimizer in &opts {
                        out.push(GridPoint {
                            lr,
                            weight_decay,
                            batch_size,
                            optimizer,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRow {
    pub point: Option<GridPoint>,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub kind: &'static str,
    pub feature: &'static str,
    pub rows: Vec<ProbeRow>,
    pub best: usize,
}

impl ProbeReport {
    pub fn best_row(&self) -> &ProbeRow {
        &self.rows[self.best]
    }

    pub fn eval_accuracy(&self) -> f64 {
        self.best_row().eval_accuracy
    }

    pub(crate) fn from_rows(kind: &'static str, feature: &'static str, rows: Vec<ProbeRow>) -> Self {
        let mut best = 0;
        for (i, r) in rows.iter().enumerate() {
            if r.eval_accuracy > rows[best].eval_accuracy {
                best = i;
            }
        }
        Self {
            kind,
            feature,
            rows,
            best,
        }
    }
}

/// Index of the largest value; the smallest index wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn class_count(a: &[u32], b: &[u32]) -> usize {
    a.iter().chain(b).copied().max().map_or(0, |m| m as usize + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::store::{generate_synthetic, SyntheticSpec};

    fn stores() -> (FeatureStore, FeatureStore) {
        generate_synthetic(&SyntheticSpec {
            num_classes: 3,
            train_videos_per_class: 10,
            eval_videos_per_class: 2,
            feature_dim: 4,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn lowshot_counts() {
        let (train, eval) = stores();
        let sub = lowshot_subsample(&train, 0.1, 0).unwrap();
        assert_eq!(sub.len(), 3);
        let sub = lowshot_subsample(&train, 0.25, 0).unwrap();
        assert_eq!(sub.len(), 9); // 2.5 rounds up
        assert_eq!(lowshot_subsample(&train, 1.0, 5).unwrap(), train);
        let small = lowshot_subsample(&eval, 0.1, 1).unwrap();
        assert_eq!(small.len(), 3);
        assert_ne!(
            lowshot_subsample(&train, 0.3, 1).unwrap(),
            lowshot_subsample(&train, 0.3, 2).unwrap()
        );
        let mut unlabeled = train.clone();
        unlabeled.videos[4].label = None;
        assert!(matches!(
            lowshot_subsample(&unlabeled, 0.5, 0),
            Err(ProbeError::Unlabeled(_))
        ));
        assert!(lowshot_subsample(&train, 0.0, 0).is_err());
    }

    #[test]
    fn extraction_shapes_and_clip_order() {
        let (_, eval) = stores();
        let cfg = ModelConfig {
            hidden_dim: 8,
            heads: 2,
            proj_dim: 4,
            layers: 1,
            ..ModelConfig::new(4)
        };
        let model = ModelParams::<f32>::init(&cfg, 0).unwrap();
        let r = extract_representations(&eval, &model).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(r.videos[0].raw.shape(), &[15, 4]);
        assert_eq!(r.videos[0].refined.as_ref().unwrap().shape(), &[15, 8]);
        assert_eq!(r.videos[0].cls.as_ref().unwrap().len(), 8);

        let mut shuffled = eval.clone();
        for v in &mut shuffled.videos {
            v.clips.reverse();
        }
        let s = extract_representations(&shuffled, &model).unwrap();
        assert_eq!(s.videos[3].cls, r.videos[3].cls);

        let mut ragged = eval.clone();
        ragged.videos[1].clips.pop();
        assert!(matches!(
            extract_representations(&ragged, &model),
            Err(ProbeError::ClipCounts { first: 15, other: 14 })
        ));
    }

    #[test]
    fn grid_order_and_validation() {
        let cfg = ProbeConfig {
            lrs: alloc::vec![1e-2, 1e-3],
            weight_decays: alloc::vec![1e-4, 0.0],
            batch_sizes: alloc::vec![64],
            optimizers: alloc::vec![OptimizerKind::SgdMomentum, OptimizerKind::Adam],
            ..ProbeConfig::default()
        };
        let g = cfg.grid();
        assert_eq!(g.len(), 8);
        assert_eq!(
            (g[0].lr, g[0].weight_decay, g[0].optimizer),
            (1e-3, 0.0, OptimizerKind::Adam)
        );
        assert_eq!((g[7].lr, g[7].weight_decay), (1e-2, 1e-4));
        assert_eq!(ProbeConfig::default().grid().len(), 24);
        assert!(ProbeConfig {
            lrs: alloc::vec![],
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(ProbeConfig { k: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn best_row_prefers_earliest_on_ties() {
        let row = |a| ProbeRow {
            point: None,
            train_accuracy: 0.0,
            eval_accuracy: a,
        };
        let r = ProbeReport::from_rows("x", "y", alloc::vec![row(0.2), row(0.5), row(0.5)]);
        assert_eq!(r.best, 1);
    }
}
