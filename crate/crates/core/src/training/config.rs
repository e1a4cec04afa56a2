use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Normalization;
use crate::error::{Error, Result};

/// Spatial size of a training crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSize {
    pub height: usize,
    pub width: usize,
}

impl fmt::Display for CropSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl FromStr for CropSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X', '×'])
            .ok_or_else(|| Error::parse("crop_size", format!("expected HxW, got {s:?}")))?;
        let dim = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::parse("crop_size", format!("bad dimension {v:?}")))
        };
        Ok(Self {
            height: dim(h)?,
            width: dim(w)?,
        })
    }
}

/// Optimiser, schedule and model choices for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub crop_size: Option<CropSize>,
    /// Backbone preset used when no initial checkpoint is given.
    pub arch: String,
    pub output_stride: usize,
    /// Use stored BN statistics and keep BN scale and shift fixed.
    pub freeze_batch_norm: bool,
    /// Converted checkpoint to start from instead of a fresh backbone.
    pub init_checkpoint: Option<PathBuf>,
    pub normalization: Normalization,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 500,
            batch_size: 1,
            seed: 0,
            checkpoint_every: 100,
            crop_size: None,
            arch: "tiny".into(),
            output_stride: 8,
            freeze_batch_norm: false,
            init_checkpoint: None,
            normalization: Normalization::default(),
        }
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(key, format!("cannot parse {value:?}")))
}

fn triple(key: &str, value: &str) -> Result<[f32; 3]> {
    let parts = value
        .split(',')
        .map(|v| number::<f32>(key, v.trim()))
        .collect::<Result<Vec<_>>>()?;
    parts
        .try_into()
        .map_err(|_| Error::parse(key, "expected three comma-separated values"))
}

fn join(v: [f32; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        if !matches!(self.output_stride, 8 | 32) {
            return Err(Error::invalid(format!(
                "output stride {} is not supported (8 or 32)",
                self.output_stride
            )));
        }
        if self.normalization.std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::invalid("normalization std must be positive"));
        }
        Ok(())
    }

    /// Override one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let optional = |v: &str| !(v.is_empty() || v.eq_ignore_ascii_case("none"));
        match key {
            "learning_rate" => self.learning_rate = number(key, value)?,
            "beta1" => self.beta1 = number(key, value)?,
            "beta2" => self.beta2 = number(key, value)?,
            "epsilon" => self.epsilon = number(key, value)?,
            "max_iterations" => self.max_iterations = number(key, value)?,
            "batch_size" => self.batch_size = number(key, value)?,
            "seed" => self.seed = number(key, value)?,
            "checkpoint_every" => self.checkpoint_every = number(key, value)?,
            "crop_size" => self.crop_size = optional(value).then(|| value.parse()).transpose()?,
            "arch" => self.arch = value.to_string(),
            "output_stride" => self.output_stride = number(key, value)?,
            "freeze_batch_norm" => {
                self.freeze_batch_norm = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(Error::parse(key, format!("expected true or false, got {value:?}"))),
                }
            }
            "init_checkpoint" => self.init_checkpoint = optional(value).then(|| PathBuf::from(value)),
            "normalization_mean" => self.normalization.mean = triple(key, value)?,
            "normalization_std" => self.normalization.std = triple(key, value)?,
            _ => return Err(Error::parse("config", format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (number, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("config", format!("line {}: expected key = value", number + 1)))?;
            config.set(key.trim(), value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `(key, value)` pairs in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("max_iterations", self.max_iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("crop_size", self.crop_size.map_or_else(|| "none".into(), |c| c.to_string())),
            ("arch", self.arch.clone()),
            ("output_stride", self.output_stride.to_string()),
            ("freeze_batch_norm", self.freeze_batch_norm.to_string()),
            (
                "init_checkpoint",
                self.init_checkpoint
                    .as_ref()
                    .map_or_else(|| "none".into(), |p| p.display().to_string()),
            ),
            ("normalization_mean", join(self.normalization.mean)),
            ("normalization_std", join(self.normalization.std)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
