use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::net::ModelConfig;

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    /// The learning rate halves every `lr_halve_fraction * iterations` steps.
    pub lr_halve_fraction: f64,
    pub patch_size: usize,
    pub log_every: u64,
    /// Validation interval in iterations; validation also runs at the end.
    pub val_every: u64,
    pub checkpoint_every: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 4,
            iterations: 2000,
            seed: 0,
            lr_halve_fraction: 0.4,
            patch_size: 64,
            log_every: 10,
            val_every: 500,
            checkpoint_every: 500,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_halve_fraction > 0.0 && self.lr_halve_fraction.is_finite()) {
            return Err(Error::Config("lr_halve_fraction must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        self.weights.validate()
    }

    /// Iterations between learning-rate halvings.
    pub fn halve_every(&self) -> u64 {
        ((self.lr_halve_fraction * self.iterations as f64).ceil() as u64).max(1)
    }

    /// Learning rate used for the update at (zero-based) `iteration`.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let halvings = (iteration / self.halve_every()).min(1024) as i32;
        self.lr * 0.5f64.powi(halvings)
    }
}

/// Everything a training run needs, as read from a `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_manifest: PathBuf,
    pub val_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

impl RunConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let (mut train_manifest, mut val_manifest, mut output_dir) = (None, None, None);
        let resolve = |v: &str| {
            let p = Path::new(v);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::Config(format!("line {}: expected `key = value`", lineno + 1))
                })?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: `{key}` set twice",
                    lineno + 1
                )));
            }
            if model.set(key, value)? {
                continue;
            }
            match key {
                "lr" => train.lr = parse_num(key, value)?,
                "batch_size" => train.batch_size = parse_num(key, value)?,
                "iterations" => train.iterations = parse_num(key, value)?,
                "seed" => train.seed = parse_num(key, value)?,
                "lr_halve_fraction" => train.lr_halve_fraction = parse_num(key, value)?,
                "patch_size" => train.patch_size = parse_num(key, value)?,
                "log_every" => train.log_every = parse_num(key, value)?,
                "val_every" => train.val_every = parse_num(key, value)?,
                "checkpoint_every" => train.checkpoint_every = parse_num(key, value)?,
                "lambda_detail" => train.weights.detail = parse_num(key, value)?,
                "lambda_structure" => train.weights.structure = parse_num(key, value)?,
                "lambda_reconstruction" => train.weights.reconstruction = parse_num(key, value)?,
                "train_manifest" => train_manifest = Some(resolve(value)),
                "val_manifest" => val_manifest = Some(resolve(value)),
                "output_dir" => output_dir = Some(resolve(value)),
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{key}`",
                        lineno + 1
                    )));
                }
            }
        }
        let config = RunConfig {
            model,
            train,
            train_manifest: train_manifest
                .ok_or_else(|| Error::Config("train_manifest is required".into()))?,
            val_manifest,
            output_dir: output_dir.ok_or_else(|| Error::Config("output_dir is required".into()))?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.train.patch_size < self.model.min_spatial() {
            return Err(Error::Config(format!(
                "patch_size {} is below the network minimum {}",
                self.train.patch_size,
                self.model.min_spatial()
            )));
        }
        Ok(())
    }

    /// Every effective setting, defaults included, in file syntax.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut pairs: Vec<(String, String)> = self
            .model
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let mut push = |k: &str, v: String| pairs.push((k.to_string(), v));
        push("lr", t.lr.to_string());
        push("batch_size", t.batch_size.to_string());
        push("iterations", t.iterations.to_string());
        push("seed", t.seed.to_string());
        push("lr_halve_fraction", t.lr_halve_fraction.to_string());
        push("patch_size", t.patch_size.to_string());
        push("log_every", t.log_every.to_string());
        push("val_every", t.val_every.to_string());
        push("checkpoint_every", t.checkpoint_every.to_string());
        push("lambda_detail", t.weights.detail.to_string());
        push("lambda_structure", t.weights.structure.to_string());
        push(
            "lambda_reconstruction",
            t.weights.reconstruction.to_string(),
        );
        push("train_manifest", self.train_manifest.display().to_string());
        if let Some(v) = &self.val_manifest {
            push("val_manifest", v.display().to_string());
        }
        push("output_dir", self.output_dir.display().to_string());
        pairs
    }
}
