//! Experiment configuration: one flat TOML table plus `key=value` overrides.
//!
//! Every key is optional and falls back to [`ExperimentConfig::default`];
//! unknown keys are rejected. Overrides are parsed as TOML values (bare
//! words become strings) and type-checked by deserialising the merged table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{default_gamma, CacheOptions};
use crate::model::{ClassifierKind, GrlSchedule, ModelConfig, TrainConfig};
use crate::synthetic::SyntheticDomainSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Lamda,
    Random,
    Margin,
    Entropy,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Lamda => "lamda",
            SamplerKind::Random => "random",
            SamplerKind::Margin => "margin",
            SamplerKind::Entropy => "entropy",
        }
    }
}

/// Which label distribution source mini-batches are matched to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    /// Uniform sampling over the source set.
    Off,
    /// The estimate built from oracle labels and pseudo-labels.
    Estimate,
    /// The true target distribution, as a reference upper bound.
    Oracle,
}

/// Per-round budget: an integer is a count, a float a fraction of the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Count(u64),
    Fraction(f64),
}

impl Budget {
    pub fn per_round(self, pool: usize) -> usize {
        match self {
            Budget::Count(n) => n as usize,
            Budget::Fraction(f) => ((f * pool as f64).round() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

/// RBF bandwidth: `"auto"` is `1 / feature_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "GammaRepr", into = "GammaRepr")]
pub enum Gamma {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Tag(AutoTag),
    Value(f64),
}

impl From<GammaRepr> for Gamma {
    fn from(r: GammaRepr) -> Self {
        match r {
            GammaRepr::Tag(AutoTag::Auto) => Gamma::Auto,
            GammaRepr::Value(v) => Gamma::Value(v),
        }
    }
}

impl From<Gamma> for GammaRepr {
    fn from(g: Gamma) -> Self {
        match g {
            Gamma::Auto => GammaRepr::Tag(AutoTag::Auto),
            Gamma::Value(v) => GammaRepr::Value(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,

    pub classes: usize,
    pub input_dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// Ratio of the most to the least frequent class in each domain.
    pub imbalance: f64,
    pub centroid_radius: f64,
    pub class_std: f64,
    pub rotation_deg: f64,
    pub shift: f64,
    /// Fraction of target points held out for evaluation.
    pub test_fraction: f64,

    pub hidden: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub disc_hidden: usize,
    pub classifier: ClassifierKind,
    pub tau: f64,

    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grl_schedule: GrlSchedule,
    pub adversarial: bool,

    pub rounds: usize,
    pub budget: Budget,
    pub delta: f64,
    pub gamma: Gamma,
    pub sampler: SamplerKind,
    pub matching: Matching,
    pub chunk_rows: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 8,
            input_dim: 8,
            n_source: 2000,
            n_target: 2000,
            imbalance: 15.0,
            centroid_radius: 2.5,
            class_std: 1.0,
            rotation_deg: 30.0,
            shift: 1.0,
            test_fraction: 0.2,
            hidden: 32,
            feature_dim: 16,
            embed_dim: 8,
            disc_hidden: 32,
            classifier: ClassifierKind::Cosine,
            tau: 0.1,
            pretrain_epochs: 10,
            epochs: 5,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            grl_schedule: GrlSchedule::Sigmoid,
            adversarial: true,
            rounds: 5,
            budget: Budget::Fraction(0.02),
            delta: 0.8,
            gamma: Gamma::Auto,
            sampler: SamplerKind::Lamda,
            matching: Matching::Estimate,
            chunk_rows: 1024,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies `key=value` overrides. Keys must exist; values must have the
    /// key's type.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
            let key = key.trim();
            if !table.contains_key(key) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            table.insert(key.to_string(), parse_value(value.trim()));
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes < 2 {
            return bad(format!("classes must be at least 2, got {}", self.classes));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must be in [0, 1], got {}", self.delta));
        }
        match self.budget {
            Budget::Count(0) => return bad("budget must be positive".into()),
            Budget::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                return bad(format!("budget fraction must be in (0, 1], got {f}"))
            }
            _ => {}
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if self.chunk_rows == 0 {
            return bad("chunk_rows must be positive".into());
        }
        self.pool_size()?;
        self.model_config().validate()?;
        self.train_config(self.epochs, self.adversarial).validate()?;
        self.domain_spec().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Number of target points available for sampling.
    pub fn pool_size(&self) -> Result<usize> {
        let test = (self.n_target as f64 * self.test_fraction).round() as usize;
        if test == 0 || test >= self.n_target {
            return Err(Error::Config(format!(
                "test_fraction {} leaves no test or no pool points out of {}",
                self.test_fraction, self.n_target
            )));
        }
        Ok(self.n_target - test)
    }

    pub fn budget_per_round(&self) -> usize {
        self.budget.per_round(self.pool_size().unwrap_or(0))
    }

    pub fn gamma_value(&self) -> f64 {
        match self.gamma {
            Gamma::Auto => default_gamma(self.feature_dim),
            Gamma::Value(g) => g,
        }
    }

    pub fn cache_options(&self) -> CacheOptions {
        CacheOptions {
            chunk_rows: self.chunk_rows,
        }
    }

    pub fn domain_spec(&self) -> Result<SyntheticDomainSpec> {
        SyntheticDomainSpec::rsut(
            self.classes,
            self.imbalance,
            self.input_dim,
            self.centroid_radius,
            self.class_std,
            self.rotation_deg,
            self.shift,
            self.n_source,
            self.n_target,
            self.seed,
        )
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.input_dim,
            hidden: self.hidden,
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            classes: self.classes,
            disc_hidden: self.disc_hidden,
            classifier: self.classifier,
            tau: self.tau,
        }
    }

    pub fn train_config(&self, epochs: usize, adversarial: bool) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: self.grl_schedule,
            adversarial,
        }
    }

    /// The settings that determine the generated data and the pretrained
    /// model. Runs with equal signatures can share both.
    pub fn pretrain_signature(&self) -> String {
        let mut base = self.clone();
        base.epochs = 0;
        base.grl_schedule = GrlSchedule::Sigmoid;
        base.adversarial = false;
        base.rounds = 0;
        base.budget = Budget::Count(1);
        base.delta = 0.0;
        base.gamma = Gamma::Auto;
        base.sampler = SamplerKind::Lamda;
        base.matching = Matching::Off;
        base.chunk_rows = 1;
        base.to_toml_string()
    }
}

fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}
