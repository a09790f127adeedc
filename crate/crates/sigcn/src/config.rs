//! Runtime configuration: hyperparameters of the matching / graph /
//! association stages plus the decoder and training knobs. Loaded from
//! JSON; missing fields fall back to the defaults below, and CLI flags
//! override file values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Salience threshold on normalized activation maps.
    pub t: f64,
    /// Support prototype count == graph-kernel rows.
    pub k: usize,
    /// Side of the pooled support instance (s×s spatial grid).
    pub s: usize,
    /// Weight of the support message in instance association.
    pub alpha: f64,
    /// Weight of the peer-query message in instance association.
    pub beta: f64,
    /// Region-matching grid side r (r×r regions).
    pub region_grid: usize,
    /// Feature channels C.
    pub channels: usize,
    /// Feature map height.
    pub height: usize,
    /// Feature map width.
    pub width: usize,
    /// Dilation rates of the 3×3 decoder pyramid branches.
    pub aspp_rates: Vec<usize>,
    /// SGD learning rate.
    pub lr: f64,
    /// Seed for parameter init and generator defaults.
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            t: 0.7,
            k: 5,
            s: 10,
            alpha: 0.5,
            beta: 0.5,
            region_grid: 4,
            channels: 8,
            height: 16,
            width: 16,
            aspp_rates: vec![1, 2, 4],
            lr: 0.05,
            seed: 0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.t) {
            return bad(format!("t must be in [0,1], got {}", self.t));
        }
        if self.k < 1 || self.s < 1 || self.region_grid < 1 {
            return bad(format!(
                "k, s and region_grid must be >= 1 (k={}, s={}, region_grid={})",
                self.k, self.s, self.region_grid
            ));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad(format!(
                "alpha and beta must be >= 0, got {} and {}",
                self.alpha, self.beta
            ));
        }
        if self.channels < 1 {
            return bad("channels must be >= 1".into());
        }
        if self.height < 2 || self.width < 2 {
            return bad(format!(
                "height and width must be >= 2, got {}x{}",
                self.height, self.width
            ));
        }
        if self.aspp_rates.is_empty() || self.aspp_rates.iter().any(|&r| r == 0) {
            return bad(format!(
                "aspp_rates must be non-empty positive, got {:?}",
                self.aspp_rates
            ));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_threshold() {
        let cfg = Config {
            t: 1.5,
            ..Config::default()
        };
        assert_eq!(cfg.validate().unwrap_err().category(), "config");
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: Config = serde_json::from_str(r#"{"t": 0.5, "channels": 4}"#).unwrap();
        assert_eq!(cfg.t, 0.5);
        assert_eq!(cfg.channels, 4);
        assert_eq!(cfg.k, Config::default().k);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let r: std::result::Result<Config, _> =
            serde_json::from_str(r#"{"threshold": 0.5}"#);
        assert!(r.is_err());
    }
}
