//! Run configuration: built-in defaults, optionally overridden by a JSON
//! file, then by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::DEFAULT_KERNEL;

pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const VOCAB_ENV: &str = "NAMER_VOCAB";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Edge pruning threshold.
    pub epsilon: f64,
    /// Side of the square matching window.
    pub km: usize,
    /// Weight of the graph-decoder loss in the combined objective.
    pub lambda: f64,
    pub alpha_l2r: f64,
    pub alpha_r2l: f64,
    pub vocab_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            km: DEFAULT_KERNEL,
            lambda: DEFAULT_LAMBDA,
            alpha_l2r: DEFAULT_ALPHA,
            alpha_r2l: DEFAULT_ALPHA,
            vocab_path: None,
            seed: 0,
        }
    }
}

/// Flag values; `None` leaves the configured value in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub km: Option<usize>,
    pub lambda: Option<f64>,
    pub alpha_l2r: Option<f64>,
    pub alpha_r2l: Option<f64>,
    pub vocab_path: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: Config = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        if let Some(v) = o.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = o.km {
            self.km = v;
        }
        if let Some(v) = o.lambda {
            self.lambda = v;
        }
        if let Some(v) = o.alpha_l2r {
            self.alpha_l2r = v;
        }
        if let Some(v) = o.alpha_r2l {
            self.alpha_r2l = v;
        }
        if let Some(v) = &o.vocab_path {
            self.vocab_path = Some(v.clone());
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        self.validate()?;
        Ok(self)
    }

    /// Explicit path, else the `NAMER_VOCAB` environment variable.
    pub fn vocab_path(&self) -> Option<PathBuf> {
        self.vocab_path
            .clone()
            .or_else(|| std::env::var_os(VOCAB_ENV).map(PathBuf::from))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=2.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 2]", self.epsilon));
        }
        if self.km == 0 || self.km.is_multiple_of(2) {
            return bad(format!("km {} must be odd", self.km));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        for (name, a) in [("alpha_l2r", self.alpha_l2r), ("alpha_r2l", self.alpha_r2l)] {
            if !(a >= 0.0 && a.is_finite()) {
                return bad(format!("{name} {a} must be non-negative"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!((c.epsilon, c.km, c.lambda), (0.5, 5, 0.5));
        assert_eq!((c.alpha_l2r, c.alpha_r2l), (1.0, 1.0));
        assert_eq!(Config::from_json("{}").unwrap(), c);
    }

    #[test]
    fn file_then_flags() {
        let c = Config::from_json(r#"{"epsilon": 0.3, "km": 7}"#).unwrap();
        assert_eq!((c.epsilon, c.km, c.lambda), (0.3, 7, 0.5));
        let c = c
            .apply(&Overrides {
                km: Some(3),
                alpha_r2l: Some(0.0),
                ..Default::default()
            })
            .unwrap();
        assert_eq!((c.epsilon, c.km, c.alpha_r2l), (0.3, 3, 0.0));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_json(r#"{"km": 4}"#).is_err());
        assert!(Config::from_json(r#"{"epsilon": 2.5}"#).is_err());
        assert!(Config::from_json(r#"{"epsilon": "x"}"#).is_err());
        assert!(Config::from_json(r#"{"typo": 1}"#).is_err());
        let o = Overrides {
            lambda: Some(-1.0),
            ..Default::default()
        };
        assert!(Config::default().apply(&o).is_err());
    }
}
