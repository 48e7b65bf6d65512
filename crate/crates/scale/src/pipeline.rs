//! Training, probing and sweeping as library calls; the command line is a
//! thin layer over these.

use scale_core::model::ModelParams;
use scale_core::probes::{
    extract_raw, extract_representations, ft_probe, knn_probe, linear_probe, lowshot_subsample, mlp_probe, FtInit,
    HeadMode, ProbeError, ProbeReport, ReprSet, Selector,
};
use scale_core::store::FeatureStore;
use scale_core::trainer::{Checkpoint, EpochLog, TrainError, Trainer};

use crate::config::{ConfigError, RunConfig};
use crate::io::IoError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl PipelineError {
    /// Process exit status: 2 for usage and configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Usage(_) => 2,
            PipelineError::Train(TrainError::Config(_)) => 2,
            _ => 1,
        }
    }
}

/// Trains from scratch, calling `on_epoch` after every epoch.
pub fn train(
    store: &FeatureStore,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&Trainer<'_>, &EpochLog) -> Result<(), PipelineError>,
) -> Result<Checkpoint, PipelineError> {
    cfg.validate()?;
    let mut trainer = Trainer::new(store, &cfg.model_for(store.feature_dim), &cfg.train)?;
    trainer.run(|t, e| on_epoch(t, e))?;
    Ok(trainer.checkpoint())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    Knn,
    Linear,
    Mlp,
    Ft,
}

impl std::str::FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "knn" => Ok(ProbeKind::Knn),
            "linear" => Ok(ProbeKind::Linear),
            "mlp" => Ok(ProbeKind::Mlp),
            "ft" => Ok(ProbeKind::Ft),
            _ => Err(format!("unknown probe kind {s:?} (knn, linear, mlp or ft)")),
        }
    }
}

fn need<'a>(ckpt: Option<&'a Checkpoint>, what: &str) -> Result<&'a Checkpoint, PipelineError> {
    ckpt.ok_or_else(|| PipelineError::Usage(format!("{what} needs a checkpoint (--ckpt)")))
}

fn representations(store: &FeatureStore, model: Option<&ModelParams<f32>>) -> Result<ReprSet, ProbeError> {
    match model {
        Some(m) => extract_representations(store, m),
        None => extract_raw(store),
    }
}

/// Runs one probe. With `lowshot` the train store is subsampled per class
/// first; the eval store is always used whole. `random_init` only affects
/// the fine-tuning probe.
pub fn probe(
    kind: ProbeKind,
    train: &FeatureStore,
    eval: &FeatureStore,
    ckpt: Option<&Checkpoint>,
    cfg: &RunConfig,
    lowshot: Option<f64>,
    random_init: bool,
) -> Result<ProbeReport, PipelineError> {
    cfg.validate()?;
    let subsampled;
    let train = match lowshot {
        Some(f) => {
            subsampled = lowshot_subsample(train, f, cfg.probe.seed)?;
            &subsampled
        }
        None => train,
    };
    let p = &cfg.probe;
    Ok(match kind {
        ProbeKind::Knn => {
            let model = match p.selector {
                Selector::MeanRaw => None,
                _ => Some(&need(ckpt, "a k-NN probe on model outputs")?.model),
            };
            knn_probe(&representations(train, model)?, &representations(eval, model)?, p)?
        }
        ProbeKind::Linear => {
            let model = match cfg.linear_input {
                HeadMode::Baseline => None,
                HeadMode::Scale => Some(&need(ckpt, "a linear probe on model outputs")?.model),
            };
            linear_probe(
                &representations(train, model)?,
                &representations(eval, model)?,
                cfg.linear_input,
                p,
            )?
        }
        ProbeKind::Mlp => mlp_probe(&extract_raw(train)?, &extract_raw(eval)?, p)?,
        ProbeKind::Ft => {
            if random_init {
                ft_probe(train, eval, &cfg.model_for(train.feature_dim), FtInit::Random, p)?
            } else {
                let c = need(ckpt, "fine-tuning from pretrained weights")?;
                ft_probe(
                    train,
                    eval,
                    &cfg.model_for(train.feature_dim),
                    FtInit::Pretrained(&c.model),
                    p,
                )?
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Mask,
    Layers,
    Hidden,
    Views,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Mask => "mask_ratio",
            Axis::Layers => "layers",
            Axis::Hidden => "hidden_dim",
            Axis::Views => "clips_per_view",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: &str) -> Result<(), ConfigError> {
        let key = match self {
            Axis::Mask => "model.mask_ratio",
            Axis::Layers => "model.layers",
            Axis::Hidden => "model.hidden_dim",
            Axis::Views => "model.clips_per_view",
        };
        cfg.set(key, value)
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mask" => Ok(Axis::Mask),
            "layers" => Ok(Axis::Layers),
            "hidden" => Ok(Axis::Hidden),
            "views" => Ok(Axis::Views),
            _ => Err(format!("unknown sweep axis {s:?} (mask, layers, hidden or views)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub values: Vec<String>,
    pub final_total: f64,
    pub knn_accuracy: f64,
    pub linear_accuracy: f64,
}

/// Every combination of the axis values, in row-major order of `axes`.
pub fn combinations(axes: &[(Axis, Vec<String>)]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![vec![]], |acc, (_, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

/// Trains one model per combination and scores it with the CLS k-NN probe
/// and the configured linear probe. Every combination starts from the same
/// seeds.
pub fn sweep(
    axes: &[(Axis, Vec<String>)],
    train_store: &FeatureStore,
    eval_store: &FeatureStore,
    base: &RunConfig,
    mut progress: impl FnMut(&str),
) -> Result<Vec<SweepRow>, PipelineError> {
    if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
        return Err(PipelineError::Usage("sweep needs at least one axis with values".into()));
    }
    let mut rows = Vec::new();
    for values in combinations(axes) {
        let mut cfg = base.clone();
        for ((axis, _), v) in axes.iter().zip(&values) {
            axis.apply(&mut cfg, v)?;
        }
        cfg.probe.selector = Selector::Cls;
        cfg.validate()?;
        let label = axes
            .iter()
            .zip(&values)
            .map(|((a, _), v)| format!("{}={v}", a.name()))
            .collect::<Vec<_>>()
            .join(" ");
        progress(&format!("training {label}"));
        let ckpt = train(train_store, &cfg, |_, _| Ok(()))?;
        let final_total = ckpt.log.last().map_or(f64::NAN, |e| e.total);
        let knn = probe(ProbeKind::Knn, train_store, eval_store, Some(&ckpt), &cfg, None, false)?;
        let linear = probe(
            ProbeKind::Linear,
            train_store,
            eval_store,
            Some(&ckpt),
            &cfg,
            None,
            false,
        )?;
        progress(&format!(
            "{label}: final loss {final_total:.4}, knn {:.4}, linear {:.4}",
            knn.eval_accuracy(),
            linear.eval_accuracy()
        ));
        rows.push(SweepRow {
            values,
            final_total,
            knn_accuracy: knn.eval_accuracy(),
            linear_accuracy: linear.eval_accuracy(),
        });
    }
    Ok(rows)
}
