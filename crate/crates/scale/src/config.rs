//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys are namespaced by section (`synth.`, `model.`, `train.`, `probe.`)
//! and every key must be known. List values are comma-separated.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use scale_core::losses::Reduction;
use scale_core::model::ModelConfig;
use scale_core::probes::{HeadMode, OptimizerKind, ProbeConfig, Selector};
use scale_core::store::SyntheticSpec;
use scale_core::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    Duplicate { line: usize, key: String },
    #[error("{key}: cannot parse {value:?} ({expected})")]
    Value {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every tunable of a run. The model input width is not a key; it always
/// comes from the feature store.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub synth: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    /// Per-clip input of the linear probe.
    pub linear_input: HeadMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        Self {
            model: ModelConfig::new(synth.feature_dim),
            synth,
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            linear_input: HeadMode::Scale,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|v| parse(key, v.trim(), expected)).collect()
}

fn parse_switch(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            value: value.into(),
            expected: "on or off",
        }),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_selector(value: &str) -> Option<Selector> {
    [Selector::Cls, Selector::MeanRaw, Selector::MeanRefined]
        .into_iter()
        .find(|s| s.name() == value)
}

pub fn parse_optimizer(value: &str) -> Option<OptimizerKind> {
    [OptimizerKind::Adam, OptimizerKind::SgdMomentum]
        .into_iter()
        .find(|o| o.name() == value)
}

pub fn parse_head_mode(value: &str) -> Option<HeadMode> {
    match value {
        "scale" => Some(HeadMode::Scale),
        "baseline" => Some(HeadMode::Baseline),
        _ => None,
    }
}

impl RunConfig {
    /// Sets one key; the key set here is exactly the one [`Self::entries`] lists.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |expected| ConfigError::Value {
            key: key.into(),
            value: value.into(),
            expected,
        };
        let (s, m, t, p) = (&mut self.synth, &mut self.model, &mut self.train, &mut self.probe);
        match key {
            "synth.seed" => s.seed = parse(key, value, "integer")?,
            "synth.num_classes" => s.num_classes = parse(key, value, "integer")?,
            "synth.train_videos_per_class" => s.train_videos_per_class = parse(key, value, "integer")?,
            "synth.eval_videos_per_class" => s.eval_videos_per_class = parse(key, value, "integer")?,
            "synth.feature_dim" => s.feature_dim = parse(key, value, "integer")?,
            "synth.clips_per_train_video" => s.clips_per_train_video = parse(key, value, "integer")?,
            "synth.clips_per_eval_video" => s.clips_per_eval_video = parse(key, value, "integer")?,
            "synth.base_scale" => s.base_scale = parse(key, value, "number")?,
            "synth.drift_scale" => s.drift_scale = parse(key, value, "number")?,
            "synth.noise_scale" => s.noise_scale = parse(key, value, "number")?,
            "model.hidden_dim" => m.hidden_dim = parse(key, value, "integer")?,
            "model.layers" => m.layers = parse(key, value, "integer")?,
            "model.heads" => m.heads = parse(key, value, "integer")?,
            "model.proj_dim" => m.proj_dim = parse(key, value, "integer")?,
            "model.clips_per_view" => m.clips_per_view = parse(key, value, "integer")?,
            "model.mask_ratio" => m.mask_ratio = parse(key, value, "number")?,
            "model.temperature" => m.temperature = parse(key, value, "number")?,
            "train.epochs" => t.epochs = parse(key, value, "integer")?,
            "train.batch_size" => t.batch_size = parse(key, value, "integer")?,
            "train.lr_max" => t.lr_max = parse(key, value, "number")?,
            "train.lr_min" => t.lr_min = parse(key, value, "number")?,
            "train.beta1" => t.adam.beta1 = parse(key, value, "number")?,
            "train.beta2" => t.adam.beta2 = parse(key, value, "number")?,
            "train.eps" => t.adam.eps = parse(key, value, "number")?,
            "train.weight_decay" => t.adam.weight_decay = parse(key, value, "number")?,
            "train.seed" => t.seed = parse(key, value, "integer")?,
            "train.mcm_loss" => t.losses.mcm = parse_switch(key, value)?,
            "train.set_loss" => t.losses.set = parse_switch(key, value)?,
            "train.mcm_reduction" => {
                t.losses.mcm_reduction = match value {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    _ => return Err(bad("mean or sum")),
                }
            }
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value, "integer")?,
            "probe.k" => p.k = parse(key, value, "integer")?,
            "probe.knn_temperature" => p.knn_temperature = parse(key, value, "number")?,
            "probe.knn_vote" => {
                p.knn_majority = match value {
                    "weighted" => false,
                    "majority" => true,
                    _ => return Err(bad("weighted or majority")),
                }
            }
            "probe.feature" => {
                p.selector = parse_selector(value).ok_or_else(|| bad("cls, mean-raw or mean-refined"))?
            }
            "probe.linear_input" => {
                self.linear_input = parse_head_mode(value).ok_or_else(|| bad("scale or baseline"))?
            }
            "probe.lr" => p.lrs = parse_list(key, value, "comma-separated numbers")?,
            "probe.weight_decay" => p.weight_decays = parse_list(key, value, "comma-separated numbers")?,
            "probe.batch_size" => p.batch_sizes = parse_list(key, value, "comma-separated integers")?,
            "probe.optimizer" => {
                p.optimizers = value
                    .split(',')
                    .map(|v| parse_optimizer(v.trim()).ok_or_else(|| bad("comma-separated adam or sgd")))
                    .collect::<Result<_, _>>()?
            }
            "probe.epochs" => p.epochs = parse(key, value, "integer")?,
            "probe.bn_no_affine" => p.bn_no_affine = parse_switch(key, value)?,
            "probe.mlp_hidden" => p.mlp_hidden = parse(key, value, "integer")?,
            "probe.seed" => p.seed = parse(key, value, "integer")?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Every key with its effective value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (s, m, t, p) = (&self.synth, &self.model, &self.train, &self.probe);
        vec![
            ("synth.seed", s.seed.to_string()),
            ("synth.num_classes", s.num_classes.to_string()),
            ("synth.train_videos_per_class", s.train_videos_per_class.to_string()),
            ("synth.eval_videos_per_class", s.eval_videos_per_class.to_string()),
            ("synth.feature_dim", s.feature_dim.to_string()),
            ("synth.clips_per_train_video", s.clips_per_train_video.to_string()),
            ("synth.clips_per_eval_video", s.clips_per_eval_video.to_string()),
            ("synth.base_scale", s.base_scale.to_string()),
            ("synth.drift_scale", s.drift_scale.to_string()),
            ("synth.noise_scale", s.noise_scale.to_string()),
            ("model.hidden_dim", m.hidden_dim.to_string()),
            ("model.layers", m.layers.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.proj_dim", m.proj_dim.to_string()),
            ("model.clips_per_view", m.clips_per_view.to_string()),
            ("model.mask_ratio", m.mask_ratio.to_string()),
            ("model.temperature", m.temperature.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr_max", t.lr_max.to_string()),
            ("train.lr_min", t.lr_min.to_string()),
            ("train.beta1", t.adam.beta1.to_string()),
            ("train.beta2", t.adam.beta2.to_string()),
            ("train.eps", t.adam.eps.to_string()),
            ("train.weight_decay", t.adam.weight_decay.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.mcm_loss", switch(t.losses.mcm).into()),
            ("train.set_loss", switch(t.losses.set).into()),
            (
                "train.mcm_reduction",
                match t.losses.mcm_reduction {
                    Reduction::Mean => "mean",
                    Reduction::Sum => "sum",
                }
                .into(),
            ),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("probe.k", p.k.to_string()),
            ("probe.knn_temperature", p.knn_temperature.to_string()),
            (
                "probe.knn_vote",
                if p.knn_majority { "majority" } else { "weighted" }.into(),
            ),
            ("probe.feature", p.selector.name().into()),
            (
                "probe.linear_input",
                match self.linear_input {
                    HeadMode::Scale => "scale",
                    HeadMode::Baseline => "baseline",
                }
                .into(),
            ),
            ("probe.lr", join(&p.lrs)),
            ("probe.weight_decay", join(&p.weight_decays)),
            ("probe.batch_size", join(&p.batch_sizes)),
            (
                "probe.optimizer",
                p.optimizers.iter().map(|o| o.name()).collect::<Vec<_>>().join(","),
            ),
            ("probe.epochs", p.epochs.to_string()),
            ("probe.bn_no_affine", switch(p.bn_no_affine).into()),
            ("probe.mlp_hidden", p.mlp_hidden.to_string()),
            ("probe.seed", p.seed.to_string()),
        ]
    }

    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            cfg.set(key, value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
                other => other,
            })?;
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
        }
        Ok(cfg)
    }

    /// `key = value` lines accepted back by [`Self::parse`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Model settings for a store of `input_dim`-wide features.
    pub fn model_for(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.synth.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.probe.validate().map_err(|e| invalid(&e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("probe.lr", "0.5, 0.25").unwrap();
        cfg.set("train.mcm_loss", "off").unwrap();
        cfg.set("model.mask_ratio", "0.35").unwrap();
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.render(), cfg.render());
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_listed_key_is_settable() {
        let cfg = RunConfig::default();
        let mut other = RunConfig::default();
        for (k, v) in cfg.entries() {
            other.set(k, &v).unwrap();
        }
        assert_eq!(other, cfg);
        let keys: BTreeSet<_> = cfg.entries().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys.len(), cfg.entries().len());
    }

    #[test]
    fn comments_and_errors() {
        let text = "# header\n\ntrain.epochs = 3  # short\nmodel.layers=1\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!((cfg.train.epochs, cfg.model.layers), (3, 1));
        assert_eq!(
            RunConfig::parse("train.epochs = 3\ntrain.epoch = 4"),
            Err(ConfigError::UnknownKey {
                line: 2,
                key: "train.epoch".into()
            })
        );
        assert!(matches!(
            RunConfig::parse("train.epochs"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            RunConfig::parse("train.epochs = x"),
            Err(ConfigError::Value { .. })
        ));
        assert!(matches!(
            RunConfig::parse("model.layers = 1\nmodel.layers = 2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("probe.optimizer = adam,rmsprop"),
            Err(ConfigError::Value { .. })
        ));
    }

    #[test]
    fn both_losses_off_is_invalid() {
        let cfg = RunConfig::parse("train.mcm_loss = off\ntrain.set_loss = off").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        assert!(RunConfig::default().validate().is_ok());
    }
}
