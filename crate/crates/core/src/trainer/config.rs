use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use super::AdamConfig;
use crate::loss::{Normalization, DEFAULT_THRESHOLD};
use crate::model::{ModelConfig, Variant};
use crate::pipeline::AugmentConfig;
use crate::{Error, Result};

/// Run configuration. Every field has a `key = value` spelling, see
/// [`TrainConfig::set`] and [`TrainConfig::entries`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: String,
    /// Architecture; `n_classes` is replaced by the merged class count.
    pub model: ModelConfig,
    pub variant: Variant,
    pub lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_tolerance: f64,
    pub min_lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub threshold: f64,
    pub normalization: Normalization,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "full".into(),
            model: ModelConfig::full(),
            variant: Variant::Scatter,
            lr: 0.003,
            plateau_patience: 12,
            plateau_factor: 0.1,
            plateau_tolerance: 1e-6,
            min_lr: 1e-6,
            max_epochs: 256,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            normalization: Normalization::PerRecord,
            augment: AugmentConfig::default(),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    let (lo, hi) = value
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("{key}: expected lo..hi, got {value:?}")))?;
    Ok((parse(key, lo)?, parse(key, hi)?))
}

fn range(r: (f64, f64)) -> String {
    format!("{}..{}", r.0, r.1)
}

pub fn normalization_name(n: Normalization) -> &'static str {
    match n {
        Normalization::PerRecord => "per_record",
        Normalization::Pooled => "pooled",
    }
}

pub fn parse_normalization(s: &str) -> Result<Normalization> {
    match s.trim() {
        "per_record" => Ok(Normalization::PerRecord),
        "pooled" => Ok(Normalization::Pooled),
        other => Err(Error::Config(format!("unknown normalization {other:?} (per_record|pooled)"))),
    }
}

impl TrainConfig {
    /// Defaults with the architecture of `preset`.
    pub fn with_preset(preset: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.set("preset", preset)?;
        Ok(cfg)
    }

    /// The architecture for `n_classes` merged classes.
    pub fn model_config(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            n_classes,
            ..self.model.clone()
        }
    }

    /// Sets one key. `preset` replaces the whole architecture, so
    /// [`TrainConfig::apply`] handles it before any other key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let a = &mut self.augment;
        match key.trim() {
            "preset" => {
                self.model = ModelConfig::preset(v)?;
                self.preset = v.into();
            }
            "variant" => self.variant = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "plateau_patience" => self.plateau_patience = parse(key, v)?,
            "plateau_factor" => self.plateau_factor = parse(key, v)?,
            "plateau_tolerance" => self.plateau_tolerance = parse(key, v)?,
            "min_lr" => self.min_lr = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "beta1" => self.adam.beta1 = parse(key, v)?,
            "beta2" => self.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.adam.eps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "normalization" => self.normalization = parse_normalization(v)?,
            "window" => m.window = parse(key, v)?,
            "attention_heads" => m.attention_heads = parse(key, v)?,
            "positional_encoding" => m.positional_encoding = parse(key, v)?,
            "pool_len" => m.pool_len = parse(key, v)?,
            "hidden" => m.hidden = parse(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "bn_eps" => m.bn_eps = parse(key, v)?,
            "bn_momentum" => m.bn_momentum = parse(key, v)?,
            "augment" => {
                *a = if parse(key, v)? {
                    AugmentConfig::default()
                } else {
                    AugmentConfig::none()
                }
            }
            "aug.p_power" => a.p_power = parse(key, v)?,
            "aug.power_freq" => a.power_freq = parse_range(key, v)?,
            "aug.power_amp" => a.power_amp = parse_range(key, v)?,
            "aug.p_noise" => a.p_noise = parse(key, v)?,
            "aug.noise_std" => a.noise_std = parse(key, v)?,
            "aug.p_drift" => a.p_drift = parse(key, v)?,
            "aug.drift_freq" => a.drift_freq = parse_range(key, v)?,
            "aug.drift_amp" => a.drift_amp = parse_range(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `pairs` in order, except that `preset` goes first.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<()> {
        let (presets, rest): (Vec<_>, Vec<_>) = pairs.iter().partition(|(k, _)| k.as_ref().trim() == "preset");
        for (k, v) in presets.into_iter().chain(rest) {
            self.set(k.as_ref(), v.as_ref())?;
        }
        Ok(())
    }

    /// Every setting as `key = value` pairs; applying them to a default
    /// configuration reproduces `self`.
    pub fn entries(&self) -> Vec<(String, String)> {
        let (m, a) = (&self.model, &self.augment);
        let pairs: [(&str, String); 31] = [
            ("preset", self.preset.clone()),
            ("variant", self.variant.name().into()),
            ("lr", self.lr.to_string()),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("plateau_factor", self.plateau_factor.to_string()),
            ("plateau_tolerance", self.plateau_tolerance.to_string()),
            ("min_lr", self.min_lr.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("threshold", self.threshold.to_string()),
            ("normalization", normalization_name(self.normalization).into()),
            ("window", m.window.to_string()),
            ("attention_heads", m.attention_heads.to_string()),
            ("positional_encoding", m.positional_encoding.to_string()),
            ("pool_len", m.pool_len.to_string()),
            ("hidden", m.hidden.to_string()),
            ("dropout", m.dropout.to_string()),
            ("bn_eps", m.bn_eps.to_string()),
            ("bn_momentum", m.bn_momentum.to_string()),
            ("aug.p_power", a.p_power.to_string()),
            ("aug.power_freq", range(a.power_freq)),
            ("aug.power_amp", range(a.power_amp)),
            ("aug.p_noise", a.p_noise.to_string()),
            ("aug.noise_std", a.noise_std.to_string()),
            ("aug.p_drift", a.p_drift.to_string()),
            ("aug.drift_freq", range(a.drift_freq)),
            ("aug.drift_amp", range(a.drift_amp)),
        ];
        pairs.into_iter().map(|(k, v)| (k.into(), v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 || self.batch_size == 0 {
            return bad("plateau_patience and batch_size must be positive");
        }
        if !(self.min_lr >= 0.0) || !(self.plateau_tolerance >= 0.0) {
            return bad("min_lr and plateau_tolerance must be nonnegative");
        }
        let b = (self.adam.beta1, self.adam.beta2);
        if !((0.0..1.0).contains(&b.0) && (0.0..1.0).contains(&b.1) && self.adam.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        self.model.validate()?;
        self.augment.validate()
    }
}
