use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{argmax, class_count, GridPoint, OptimizerKind, ProbeConfig, ProbeError, ProbeReport, ProbeRow, ReprSet};
use crate::numerics::{Graph, ParameterSet, Tensor, Var};
use crate::trainer::{adam_step, cosine_lr, AdamConfig, AdamState, OptimError};

/// What a linear probe sees per clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// Refined clip token concatenated with the summary token.
    Scale,
    /// Raw clip feature.
    Baseline,
}

impl HeadMode {
    pub fn name(self) -> &'static str {
        match self {
            HeadMode::Scale => "refined+cls",
            HeadMode::Baseline => "raw",
        }
    }
}

/// Per-clip rows of a set of videos, grouped by video.
pub(super) struct ClipData {
    pub features: Vec<f32>,
    pub dim: usize,
    pub clip_video: Vec<usize>,
    pub video_labels: Vec<u32>,
}

impl ClipData {
    pub fn clips(&self) -> usize {
        self.clip_video.len()
    }

    pub fn clip_label(&self, i: usize) -> usize {
        self.video_labels[self.clip_video[i]] as usize
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn build(set: &ReprSet, mode: HeadMode) -> Result<Self, ProbeError> {
        let video_labels = set.labels()?;
        if set.is_empty() {
            return Err(ProbeError::Empty);
        }
        let mut features = Vec::new();
        let mut clip_video = Vec::new();
        let mut dim = 0;
        for (vi, v) in set.videos.iter().enumerate() {
            match mode {
                HeadMode::Baseline => {
                    dim = v.raw.cols();
                    features.extend_from_slice(v.raw.data());
                    clip_video.extend(core::iter::repeat_n(vi, v.raw.rows()));
                }
                HeadMode::Scale => {
                    let refined = v
                        .refined
                        .as_ref()
                        .ok_or(ProbeError::MissingModelOutputs("refined clip tokens"))?;
                    let cls = v
                        .cls
                        .as_ref()
                        .ok_or(ProbeError::MissingModelOutputs("summary tokens"))?;
                    dim = refined.cols() + cls.len();
                    for i in 0..refined.rows() {
                        features.extend_from_slice(refined.row(i));
                        features.extend_from_slice(cls);
                        clip_video.push(vi);
                    }
                }
            }
        }
        Ok(Self {
            features,
            dim,
            clip_video,
            video_labels,
        })
    }
}

/// Feature standardization by running mean and variance, updated from every
/// training minibatch with momentum 0.1 and applied without scale or shift.
#[derive(Clone, Debug)]
pub(super) struct RunningNorm {
    mean: Vec<f64>,
    var: Vec<f64>,
}

const NORM_MOMENTUM: f64 = 0.1;
const NORM_EPS: f64 = 1e-5;

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn update(&mut self, rows: &[f32]) {
        let dim = self.mean.len();
        let n = (rows.len() / dim) as f64;
        for j in 0..dim {
            let col = rows.iter().skip(j).step_by(dim).map(|&x| x as f64);
            let mean = col.clone().sum::<f64>() / n;
            let var = col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            self.mean[j] += NORM_MOMENTUM * (mean - self.mean[j]);
            self.var[j] += NORM_MOMENTUM * (var - self.var[j]);
        }
    }

    pub fn apply(&self, rows: &mut [f32]) {
        let dim = self.mean.len();
        for row in rows.chunks_mut(dim) {
            for ((x, m), v) in row.iter_mut().zip(&self.mean).zip(&self.var) {
                *x = ((*x as f64 - m) / Float::sqrt(v + NORM_EPS)) as f32;
            }
        }
    }
}

/// Stack of affine layers with GELU between them.
pub(super) struct Mlp {
    pub params: ParameterSet<f32>,
}

impl Mlp {
    pub fn new(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParameterSet::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, out) = (pair[0], pair[1]);
            let bound = 1.0 / Float::sqrt(fan_in as f32);
            let dist = Uniform::new_inclusive(-bound, bound);
            let w = (0..fan_in * out).map(|_| dist.sample(rng)).collect();
            params.push(
                format!("probe.{i}.weight"),
                Tensor::new(vec![fan_in, out], w).expect("shape"),
            );
            params.push(format!("probe.{i}.bias"), Tensor::zeros(&[out]));
        }
        Self { params }
    }

    pub fn forward(g: &mut Graph<f32>, vars: &[Var], mut x: Var) -> Var {
        let layers = vars.len() / 2;
        for l in 0..layers {
            if l > 0 {
                x = g.gelu(x);
            }
            x = g.linear(x, vars[2 * l], vars[2 * l + 1]);
        }
        x
    }

    pub fn logits(&self, rows: Vec<f32>, dim: usize) -> Tensor<f32> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let n = rows.len() / dim;
        let x = g.constant(Tensor::new(vec![n, dim], rows).expect("rows"));
        let out = Self::forward(&mut g, &vars, x);
        g.value(out).clone()
    }
}

/// Adam with decoupled decay, or SGD with momentum 0.9 and L2 decay added to
/// the gradient.
pub(super) enum Optimizer {
    Adam(AdamState<f32>, AdamConfig),
    Sgd(Vec<Tensor<f32>>, f64),
}

const SGD_MOMENTUM: f32 = 0.9;

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, params: &ParameterSet<f32>) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(
                AdamState::zeros_like(params),
                AdamConfig {
                    weight_decay,
                    ..AdamConfig::default()
                },
            ),
            OptimizerKind::SgdMomentum => Optimizer::Sgd(
                params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
                weight_decay,
            ),
        }
    }

    /// `step` counts from 1.
    pub fn step(&mut self, params: &mut ParameterSet<f32>, step: u64, lr: f64) -> Result<(), OptimError> {
        match self {
            Optimizer::Adam(state, cfg) => adam_step(params, state, step, lr, cfg),
            Optimizer::Sgd(velocity, wd) => {
                if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
                    return Err(OptimError::NonFinite(p.name.clone()));
                }
                let (wd, lr) = (*wd as f32, lr as f32);
                for (p, v) in params.iter_mut().zip(velocity.iter_mut()) {
                    let grad = p.grad.data().to_vec();
                    for ((x, g), vi) in p.value.data_mut().iter_mut().zip(grad).zip(v.data_mut()) {
                        *vi = SGD_MOMENTUM * *vi + g + wd * *x;
                        *x -= lr * *vi;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Rows of logits per clip turned into per-video predictions by averaging the
/// clip softmax distributions; returns the fraction of correct videos.
pub(super) fn ensemble_accuracy(logits: &Tensor<f32>, clip_video: &[usize], video_labels: &[u32]) -> f64 {
    let classes = logits.cols();
    let mut mean = vec![vec![0.0f64; classes]; video_labels.len()];
    for (i, &v) in clip_video.iter().enumerate() {
        let row: Vec<f64> = logits.row(i).iter().map(|&x| x as f64).collect();
        let lse = crate::numerics::ops::log_sum_exp(&row);
        for (m, z) in mean[v].iter_mut().zip(row) {
            *m += Float::exp(z - lse);
        }
    }
    let correct = mean
        .iter()
        .zip(video_labels)
        .filter(|(m, &y)| argmax(m) == y as usize)
        .count();
    correct as f64 / video_labels.len() as f64
}

/// Clip rows scored per chunk to bound graph size.
const EVAL_CHUNK: usize = 4096;

fn evaluate(head: &Mlp, data: &ClipData, norm: Option<&RunningNorm>, classes: usize) -> f64 {
    let mut all = Vec::with_capacity(data.clips() * classes);
    for start in (0..data.clips()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.clips());
        let mut rows = data.features[start * data.dim..end * data.dim].to_vec();
        if let Some(n) = norm {
            n.apply(&mut rows);
        }
        all.extend_from_slice(head.logits(rows, data.dim).data());
    }
    let logits = Tensor::new(vec![data.clips(), classes], all).expect("logits");
    ensemble_accuracy(&logits, &data.clip_video, &data.video_labels)
}

fn train_head(
    train: &ClipData,
    eval: &ClipData,
    hidden: &[usize],
    classes: usize,
    point: GridPoint,
    cfg: &ProbeConfig,
) -> Result<ProbeRow, ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut widths = vec![train.dim];
    widths.extend_from_slice(hidden);
    widths.push(classes);
    let mut head = Mlp::new(&widths, &mut rng);
    let mut opt = Optimizer::new(point.optimizer, point.weight_decay, &head.params);
    let mut norm = cfg.bn_no_affine.then(|| RunningNorm::new(train.dim));

    let n = train.clips();
    let total = (cfg.epochs * n.div_ceil(point.batch_size)) as u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(point.batch_size) {
            let mut rows = Vec::with_capacity(batch.len() * train.dim);
            for &i in batch {
                rows.extend_from_slice(train.row(i));
            }
            if let Some(n) = norm.as_mut() {
                n.update(&rows);
                n.apply(&mut rows);
            }
            let targets: Vec<usize> = batch.iter().map(|&i| train.clip_label(i)).collect();
            let mut g = Graph::new();
            let vars = head.params.bind(&mut g);
            let x = g.constant(Tensor::new(vec![batch.len(), train.dim], rows).expect("rows"));
            let logits = Mlp::forward(&mut g, &vars, x);
            let ce = g.cross_entropy(logits, &targets);
            let loss = g.scale(ce, 1.0 / batch.len() as f32);
            let grads = g.backward(loss);
            head.params.zero_grad();
            head.params.accumulate(&grads, &vars);
            let lr = cosine_lr(step, total, point.lr, 0.0);
            step += 1;
            opt.step(&mut head.params, step, lr)?;
        }
    }
    Ok(ProbeRow {
        point: Some(point),
        train_accuracy: evaluate(&head, train, norm.as_ref(), classes),
        eval_accuracy: evaluate(&head, eval, norm.as_ref(), classes),
    })
}

fn grid_search(
    kind: &'static str,
    feature: &'static str,
    train: &ClipData,
    eval: &ClipData,
    hidden: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    cfg.validate()?;
    if train.dim != eval.dim {
        return Err(ProbeError::Config("train and eval representations differ in width"));
    }
    let classes = class_count(&train.video_labels, &eval.video_labels);
    let rows = cfg
        .grid()
        .into_iter()
        .map(|p| train_head(train, eval, hidden, classes, p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProbeReport::from_rows(kind, feature, rows))
}

/// Softmax regression on per-clip vectors, predictions averaged over the
/// clips of each video, searched over the configured grid.
pub fn linear_probe(
    train: &ReprSet,
    eval: &ReprSet,
    mode: HeadMode,
    cfg: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    let (t, e) = (ClipData::build(train, mode)?, ClipData::build(eval, mode)?);
    grid_search("linear", mode.name(), &t, &e, &[], cfg)
}

/// Three affine layers with GELU on raw clip features.
pub fn mlp_probe(train: &ReprSet, eval: &ReprSet, cfg: &ProbeConfig) -> Result<ProbeReport, ProbeError> {
    if cfg.mlp_hidden == 0 {
        return Err(ProbeError::Config("MLP hidden width must be positive"));
    }
    let (t, e) = (
        ClipData::build(train, HeadMode::Baseline)?,
        ClipData::build(eval, HeadMode::Baseline)?,
    );
    grid_search("mlp", HeadMode::Baseline.name(), &t, &e, &[cfg.mlp_hidden; 2], cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_norm_tracks_batches() {
        let mut n = RunningNorm::new(2);
        let rows = [1.0f32, 10.0, 3.0, 10.0];
        n.update(&rows);
        assert!((n.mean[0] - 0.2).abs() < 1e-12);
        assert!((n.mean[1] - 1.0).abs() < 1e-12);
        assert!((n.var[0] - (0.9 + 0.1)).abs() < 1e-12);
        assert!((n.var[1] - 0.9).abs() < 1e-12);
        for _ in 0..400 {
            n.update(&rows);
        }
        let mut r = rows;
        n.apply(&mut r);
        assert!((r[0] + 1.0).abs() < 1e-4 && (r[2] - 1.0).abs() < 1e-4);
        assert!(r[1].abs() < 1e-3);
    }

    #[test]
    fn ensemble_averages_probabilities() {
        // Video 0: one confident wrong clip, two mild right clips.
        let logits = Tensor::from_rows(&[[5.0f32, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 2.0]]).unwrap();
        let acc = ensemble_accuracy(&logits, &[0, 0, 0, 1], &[1, 1]);
        assert_eq!(acc, 0.5);
        let acc = ensemble_accuracy(&logits, &[0, 1, 1, 1], &[0, 1]);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn sgd_momentum_reference() {
        let mut params = ParameterSet::new();
        params.push("w", Tensor::from_rows(&[[1.0f32, -2.0]]).unwrap());
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum, 0.5, &params);
        let mut x = [1.0f32, -2.0];
        let mut v = [0.0f32; 2];
        for s in 1..=3 {
            params.get_mut(0).grad = Tensor::from_rows(&[[0.1f32, 0.3]]).unwrap();
            opt.step(&mut params, s, 0.1).unwrap();
            for j in 0..2 {
                let g = [0.1f32, 0.3][j];
                v[j] = 0.9 * v[j] + g + 0.5 * x[j];
                x[j] -= 0.1 * v[j];
            }
            assert_eq!(params.get(0).value.data(), &x);
        }
    }

    /// Three Gaussian clusters around scaled basis vectors.
    fn clustered(videos_per_class: usize, seed: u64, prefix: &str) -> ReprSet {
        use crate::probes::VideoRepr;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut videos = Vec::new();
        for c in 0..3u32 {
            for i in 0..videos_per_class {
                let data = (0..4 * 8)
                    .map(|j| {
                        let centre = if j % 8 == c as usize { 2.0 } else { 0.0 };
                        centre + rng.sample::<f32, _>(rand_distr::StandardNormal)
                    })
                    .collect();
                videos.push(VideoRepr {
                    id: format!("{prefix}{c}-{i}"),
                    label: Some(c),
                    raw: Tensor::new(vec![4, 8], data).unwrap(),
                    refined: None,
                    cls: None,
                });
            }
        }
        ReprSet { videos }
    }

    fn small() -> (ReprSet, ReprSet) {
        (clustered(20, 1, "t"), clustered(6, 2, "e"))
    }

    fn quick() -> ProbeConfig {
        ProbeConfig {
            lrs: vec![3e-2],
            weight_decays: vec![0.0],
            batch_sizes: vec![64],
            optimizers: vec![OptimizerKind::Adam],
            epochs: 30,
            mlp_hidden: 16,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn separable_classes_are_learned() {
        let (t, e) = small();
        let r = linear_probe(&t, &e, HeadMode::Baseline, &quick()).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.eval_accuracy() > 0.9, "{}", r.eval_accuracy());
        let r = mlp_probe(&t, &e, &quick()).unwrap();
        assert!(r.eval_accuracy() > 0.9, "{}", r.eval_accuracy());
        assert_eq!(r, mlp_probe(&t, &e, &quick()).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (t, e) = small();
        assert!(matches!(
            mlp_probe(
                &t,
                &e,
                &ProbeConfig {
                    mlp_hidden: 0,
                    ..quick()
                }
            ),
            Err(ProbeError::Config(_))
        ));
        assert!(matches!(
            linear_probe(&t, &e, HeadMode::Baseline, &ProbeConfig { lrs: vec![], ..quick() }),
            Err(ProbeError::Config(_))
        ));
        assert!(matches!(
            linear_probe(&t, &e, HeadMode::Scale, &quick()),
            Err(ProbeError::MissingModelOutputs(_))
        ));
    }
}
