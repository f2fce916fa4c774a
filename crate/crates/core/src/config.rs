//! Flat key-value run configuration.
//!
//! One TOML table holds both the training and the reward settings, using
//! their field names directly. `epsilon` and `beta` feed both halves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grpo::{NormalizationMode, SurrogateMode, TrainConfig};
use crate::rewards::RewardWeights;

/// Every key a config file may set; absent keys keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "G", skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_per_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate_mode: Option<SurrogateMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization_mode: Option<NormalizationMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_i: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mpv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies the set keys over the defaults.
    pub fn resolve(&self) -> RunConfig {
        let mut t = TrainConfig::default();
        let mut w = RewardWeights::default();
        macro_rules! set {
            ($src:ident => $($dst:expr),+) => {
                if let Some(v) = self.$src {
                    $($dst = v;)+
                }
            };
        }
        set!(g => t.g);
        set!(epsilon => t.epsilon, w.epsilon);
        set!(beta => t.beta, w.beta);
        set!(learning_rate => t.learning_rate);
        set!(iterations => t.iterations);
        set!(prompts_per_iter => t.prompts_per_iter);
        set!(max_len => t.max_len);
        set!(seed => t.seed);
        set!(surrogate_mode => t.surrogate_mode);
        set!(normalization_mode => t.normalization_mode);
        set!(threads => t.threads);
        set!(w_c => w.w_c);
        set!(w_i => w.w_i);
        set!(w1 => w.w1);
        set!(w2 => w.w2);
        set!(w3 => w.w3);
        set!(w4 => w.w4);
        set!(mpv => w.mpv);
        set!(n => w.n);
        RunConfig {
            train: t,
            weights: w,
        }
    }
}

/// Fully resolved training and reward settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub weights: RewardWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        ConfigFile::default().resolve()
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.train.validate()
    }

    /// Every resolved value as a flat config, suitable for echoing.
    pub fn snapshot(&self) -> ConfigFile {
        let (t, w) = (&self.train, &self.weights);
        ConfigFile {
            g: Some(t.g),
            epsilon: Some(t.epsilon),
            beta: Some(t.beta),
            learning_rate: Some(t.learning_rate),
            iterations: Some(t.iterations),
            prompts_per_iter: Some(t.prompts_per_iter),
            max_len: Some(t.max_len),
            seed: Some(t.seed),
            surrogate_mode: Some(t.surrogate_mode),
            normalization_mode: Some(t.normalization_mode),
            threads: Some(t.threads),
            w_c: Some(w.w_c),
            w_i: Some(w.w_i),
            w1: Some(w.w1),
            w2: Some(w.w2),
            w3: Some(w.w3),
            w4: Some(w.w4),
            mpv: Some(w.mpv),
            n: Some(w.n),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.snapshot()).expect("flat config always serializes")
    }
}
