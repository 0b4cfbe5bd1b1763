//! Run configuration file.
//!
//! ```toml
//! [data]
//! path = "series.csv"
//! split = [0.7, 0.1, 0.2]
//!
//! [model]
//! input_len = 96
//! horizon = 24
//!
//! [train]
//! max_epochs = 20
//! seed = 1
//!
//! [output]
//! dir = "runs/synthetic"
//! ```
//!
//! Every key except `data.path` has a default. Relative paths are taken
//! relative to the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use dtaf::data::SplitRatios;
use dtaf::train::TrainOptions;
use dtaf::ModelConfig;
use dtaf_tensor::AdamWConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    /// Train, validation and test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Z-score every channel with training-split statistics.
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn default_split() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub input_len: usize,
    pub horizon: usize,
    /// Horizons of a sweep; `[horizon]` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub experts: usize,
    pub expert_depth: usize,
    pub topk: usize,
    pub pool_kernel: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            input_len: m.input_len,
            horizon: m.horizon,
            horizons: None,
            patch_len: m.patch_len,
            stride: m.stride,
            d_model: m.d_model,
            experts: m.experts,
            expert_depth: m.expert_depth,
            topk: m.topk,
            pool_kernel: m.pool_kernel,
            dropout: m.dropout,
            alpha: m.alpha,
            beta: m.beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Seeds of a sweep; `[seed]` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Gradient-norm ceiling, 0 disables clipping.
    pub clip_norm: f64,
    pub train_stride: usize,
    pub eval_stride: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            seeds: None,
            lr: t.optimizer.lr,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            eps: t.optimizer.eps,
            weight_decay: t.optimizer.weight_decay,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            train_stride: t.train_stride,
            eval_stride: t.eval_stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

/// The hashed part of a config: everything but the output location.
#[derive(Serialize)]
struct Canonical<'a> {
    data: &'a DataSection,
    model: &'a ModelSection,
    train: &'a TrainSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::User(format!("config: {}", e.message())))
    }

    /// Reads, resolves and validates the config at `path`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::User(m) => CliError::User(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.path = base.join(&cfg.data.path);
        cfg.output.dir = base.join(&cfg.output.dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |section: &str, e: dtaf::DtafError| CliError::User(format!("[{section}] {e}"));
        self.model_config().validate().map_err(|e| field("model", e))?;
        for &h in self.horizons() {
            ModelConfig {
                horizon: h,
                ..self.model_config()
            }
            .validate()
            .map_err(|e| field("model", e))?;
        }
        if self.horizons().is_empty() {
            return Err(CliError::User("[model] horizons must not be empty".into()));
        }
        if self.seeds().is_empty() {
            return Err(CliError::User("[train] seeds must not be empty".into()));
        }
        self.train_options().validate().map_err(|e| field("train", e))?;
        let [a, b, c] = self.data.split;
        if [a, b, c].iter().any(|r| !(r.is_finite() && *r > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(CliError::User(format!(
                "[data] split must be three positive fractions summing to 1, got {:?}",
                self.data.split
            )));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            input_len: m.input_len,
            horizon: m.horizon,
            patch_len: m.patch_len,
            stride: m.stride,
            d_model: m.d_model,
            experts: m.experts,
            expert_depth: m.expert_depth,
            topk: m.topk,
            pool_kernel: m.pool_kernel,
            dropout: m.dropout,
            alpha: m.alpha,
            beta: m.beta,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.train;
        TrainOptions {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            optimizer: AdamWConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                weight_decay: t.weight_decay,
            },
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
            train_stride: t.train_stride,
            eval_stride: t.eval_stride,
        }
    }

    pub fn split(&self) -> SplitRatios {
        let [train, val, test] = self.data.split;
        SplitRatios { train, val, test }
    }

    pub fn horizons(&self) -> &[usize] {
        self.model
            .horizons
            .as_deref()
            .unwrap_or(std::slice::from_ref(&self.model.horizon))
    }

    pub fn seeds(&self) -> &[u64] {
        self.train
            .seeds
            .as_deref()
            .unwrap_or(std::slice::from_ref(&self.train.seed))
    }

    /// Replaces the seed and any seed list.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.train.seeds = None;
    }

    /// SHA-256 of the canonical TOML rendering, excluding `[output]`.
    pub fn hash(&self) -> String {
        let canonical = Canonical {
            data: &self.data,
            model: &self.model,
            train: &self.train,
        };
        let text = toml::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\npath = \"x.csv\"\n";

    #[test]
    fn defaults_follow_the_library() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.model_config(), ModelConfig::default());
        assert_eq!(cfg.train_options(), TrainOptions::default());
        assert_eq!(cfg.horizons(), &[96]);
        assert_eq!(cfg.seeds(), &[0]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[data]\npath = \"x\"\n[model]\ntop_k = 3\n").unwrap_err();
        assert!(err.to_string().contains("top_k"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let cfg = RunConfig::parse("[data]\npath = \"x\"\n[model]\ntopk = 99\n").unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("[model]") && err.contains("topk"), "{err}");
        let cfg = RunConfig::parse("[data]\npath = \"x\"\nsplit = [0.5, 0.5, 0.5]\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("split"));
    }

    #[test]
    fn hash_ignores_output_and_tracks_seed() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.override_seed(3);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = RunConfig::parse(
            "[data]\npath = \"x\"\n[model]\nhorizons = [24, 48]\n[train]\nseeds = [1, 2]\n",
        )
        .unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(cfg.horizons(), &[24, 48]);
    }
}
