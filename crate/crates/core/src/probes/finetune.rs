use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::head::{ensemble_accuracy, Mlp, Optimizer};
use super::{class_count, uniform_clips, GridPoint, ProbeConfig, ProbeError, ProbeReport, ProbeRow};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{Graph, Tensor};
use crate::sampler::SetInput;
use crate::store::{FeatureStore, VideoRecord};
use crate::trainer::cosine_lr;

/// Starting weights of a fine-tuned predictor.
#[derive(Clone, Copy, Debug)]
pub enum FtInit<'a> {
    Pretrained(&'a ModelParams<f32>),
    /// Fresh weights drawn from the probe seed.
    Random,
}

fn same_architecture(a: &ModelConfig, b: &ModelConfig) -> bool {
    (a.input_dim, a.hidden_dim, a.layers, a.heads, a.proj_dim)
        == (b.input_dim, b.hidden_dim, b.layers, b.heads, b.proj_dim)
}

fn labels(store: &FeatureStore) -> Result<Vec<u32>, ProbeError> {
    store
        .videos
        .iter()
        .map(|v| v.label.ok_or_else(|| ProbeError::Unlabeled(v.id.clone())))
        .collect()
}

struct Tuned {
    model: ModelParams<f32>,
    head: Mlp,
}

const EVAL_VIDEOS: usize = 64;

impl Tuned {
    fn accuracy(&self, store: &FeatureStore, labels: &[u32], classes: usize) -> Result<f64, ProbeError> {
        let k = uniform_clips(store)?;
        let mut all = Vec::new();
        for chunk in store.videos.chunks(EVAL_VIDEOS) {
            let refs: Vec<&VideoRecord> = chunk.iter().collect();
            let input = SetInput::from_videos(&refs, store.feature_dim).expect("uniform clip counts");
            let mut g = Graph::new();
            let bound = self.model.bind_frozen(&mut g);
            let head = self.head.params.bind_frozen(&mut g);
            let enc = bound.encode_sets(&mut g, &input)?;
            let logits = clip_logits(&mut g, &head, enc.clips, enc.summary, chunk.len(), k);
            all.extend_from_slice(g.value(logits).data());
        }
        let clip_video: Vec<usize> = (0..store.len() * k).map(|i| i / k).collect();
        let logits = Tensor::new(vec![clip_video.len(), classes], all).expect("logits");
        Ok(ensemble_accuracy(&logits, &clip_video, labels))
    }
}

/// Logits of `concat(refined_i, cls)` for every clip of `videos` sets of `k`.
fn clip_logits(
    g: &mut Graph<f32>,
    head: &[crate::numerics::Var],
    clips: crate::numerics::Var,
    summary: crate::numerics::Var,
    videos: usize,
    k: usize,
) -> crate::numerics::Var {
    let owner: Vec<usize> = (0..videos * k).map(|i| i / k).collect();
    let cls = g.gather(summary, &owner);
    let x = g.concat_cols(&[clips, cls]);
    Mlp::forward(g, head, x)
}

fn tune(
    train: &FeatureStore,
    eval: &FeatureStore,
    start: &ModelParams<f32>,
    classes: usize,
    point: GridPoint,
    cfg: &ProbeConfig,
) -> Result<ProbeRow, ProbeError> {
    let train_labels = labels(train)?;
    let eval_labels = labels(eval)?;
    let k = uniform_clips(train)?;
    uniform_clips(eval)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = start.config.hidden_dim;
    let mut t = Tuned {
        model: start.clone(),
        head: Mlp::new(&[2 * h, classes], &mut rng),
    };
    let mut model_opt = Optimizer::new(point.optimizer, point.weight_decay, &t.model.params);
    let mut head_opt = Optimizer::new(point.optimizer, point.weight_decay, &t.head.params);

    let n = train.len();
    let total = (cfg.epochs * n.div_ceil(point.batch_size)) as u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(point.batch_size) {
            let refs: Vec<&VideoRecord> = batch.iter().map(|&i| &train.videos[i]).collect();
            let input = SetInput::from_videos(&refs, train.feature_dim).expect("uniform clip counts");
            let targets: Vec<usize> = batch
                .iter()
                .flat_map(|&i| core::iter::repeat_n(train_labels[i] as usize, k))
                .collect();
            let mut g = Graph::new();
            let bound = t.model.bind(&mut g);
            let head = t.head.params.bind(&mut g);
            let enc = bound.encode_sets(&mut g, &input)?;
            let logits = clip_logits(&mut g, &head, enc.clips, enc.summary, batch.len(), k);
            let ce = g.cross_entropy(logits, &targets);
            let loss = g.scale(ce, 1.0 / targets.len() as f32);
            let grads = g.backward(loss);
            let model_vars = bound.vars().to_vec();
            t.model.params.zero_grad();
            t.model.params.accumulate(&grads, &model_vars);
            t.head.params.zero_grad();
            t.head.params.accumulate(&grads, &head);
            let lr = cosine_lr(step, total, point.lr, 0.0);
            step += 1;
            model_opt.step(&mut t.model.params, step, lr)?;
            head_opt.step(&mut t.head.params, step, lr)?;
        }
    }
    Ok(ProbeRow {
        point: Some(point),
        train_accuracy: t.accuracy(train, &train_labels, classes)?,
        eval_accuracy: t.accuracy(eval, &eval_labels, classes)?,
    })
}

/// Trains the predictor end to end together with a linear head on
/// `concat(refined_i, cls)`, predictions averaged over clips.
pub fn ft_probe(
    train: &FeatureStore,
    eval: &FeatureStore,
    model: &ModelConfig,
    init: FtInit<'_>,
    cfg: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    cfg.validate()?;
    model.validate()?;
    if model.input_dim != train.feature_dim || model.input_dim != eval.feature_dim {
        return Err(ProbeError::Config(
            "model input width differs from the store feature width",
        ));
    }
    let (start, feature) = match init {
        FtInit::Pretrained(p) => {
            if !same_architecture(&p.config, model) {
                return Err(ProbeError::Config(
                    "checkpoint architecture differs from the model config",
                ));
            }
            (p.clone(), "pretrained")
        }
        FtInit::Random => (ModelParams::init(model, cfg.seed)?, "random"),
    };
    if train.is_empty() || eval.is_empty() {
        return Err(ProbeError::Empty);
    }
    let classes = class_count(&labels(train)?, &labels(eval)?);
    let rows = cfg
        .grid()
        .into_iter()
        .map(|p| tune(train, eval, &start, classes, p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProbeReport::from_rows("ft", feature, rows))
}
