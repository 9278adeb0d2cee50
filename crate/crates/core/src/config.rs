//! Training configuration, loadable from flat `key = value` files with
//! `--set key=value` style overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintConfig;
use crate::detector::MaskShape;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub d_model: usize,
    pub mask_shape: MaskShape,
    pub constraints: ConstraintConfig,
    /// Global-norm gradient clipping; 0 disables it.
    pub clip_norm: f64,
    pub clusters_per_batch: usize,
    pub samples_per_cluster: usize,
    /// Train a copy of the encoder in the full branch instead of freezing it.
    pub full_train_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0004,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            d_model: 32,
            mask_shape: MaskShape::default(),
            constraints: ConstraintConfig::default(),
            clip_norm: 0.0,
            clusters_per_batch: 8,
            samples_per_cluster: 4,
            full_train_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.d_model == 0 {
            return Err(Error::Config("batch_size/epochs/d_model must be positive".into()));
        }
        if self.constraints.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value for {what}: {value}"));
        let f = || value.parse::<f64>().map_err(|_| bad(key));
        let u = || value.parse::<usize>().map_err(|_| bad(key));
        match key {
            "learning_rate" => self.learning_rate = f()?,
            "batch_size" => self.batch_size = u()?,
            "epochs" => self.epochs = u()?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "d_model" => self.d_model = u()?,
            "mask_shape" => {
                self.mask_shape = match value {
                    "plateau" => match self.mask_shape {
                        MaskShape::Plateau { steepness } => MaskShape::Plateau { steepness },
                        _ => MaskShape::default(),
                    },
                    "gaussian" => MaskShape::Gaussian,
                    _ => return Err(bad(key)),
                }
            }
            "mask_steepness" => {
                let k = f()?;
                self.mask_shape = match self.mask_shape {
                    MaskShape::Gaussian => MaskShape::Gaussian,
                    _ => MaskShape::Plateau { steepness: k },
                };
                if matches!(self.mask_shape, MaskShape::Gaussian) {
                    return Err(Error::Config(
                        "mask_steepness set while mask_shape = gaussian".into(),
                    ));
                }
            }
            "alpha" => self.constraints.alpha = f()?,
            "beta" => self.constraints.beta = f()?,
            "tau" => self.constraints.tau = f()?,
            "lambda" => self.constraints.lambda = f()?,
            "raun_weight" => self.constraints.raun_weight = f()?,
            "theta" => self.constraints.theta = f()?,
            "gamma" => self.constraints.gamma = f()?,
            "mean_reduction" => {
                self.constraints.mean_reduction = value.parse().map_err(|_| bad(key))?
            }
            "clip_norm" => self.clip_norm = f()?,
            "clusters_per_batch" => self.clusters_per_batch = u()?,
            "samples_per_cluster" => self.samples_per_cluster = u()?,
            "full_train_encoder" => {
                self.full_train_encoder = value.parse().map_err(|_| bad(key))?
            }
            _ => return Err(Error::Config(format!("unknown config key: {key}"))),
        }
        Ok(())
    }

    pub fn clip(&self) -> Option<f64> {
        if self.clip_norm > 0.0 {
            Some(self.clip_norm)
        } else {
            None
        }
    }
}
