//! Run configuration: cost constants plus engine and planner knobs, loadable
//! from a flat `key=value` file.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::cost::CostConstants;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}:{line}: expected key=value, got `{text}`")]
    Malformed {
        file: String,
        line: usize,
        text: String,
    },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for {key}: `{value}`")]
    InvalidValue { key: String, value: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
}

/// Engine-wide configuration shared by the runtime, operators and planner.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub cost: CostConstants,
    /// Merge a fact's messages sharing one key and kind into one record.
    pub packing: bool,
    /// Ship guard-tuple references instead of projections; the boolean
    /// combination job then re-reads the guard to materialize tuples.
    pub tuple_id: bool,
    /// Fraction of each input sampled when estimating map output volumes.
    pub sample_rate: f64,
    /// Seed for sampling decisions.
    pub sample_seed: u64,
    /// Re-estimate sizes and re-plan remaining stages after each stage runs.
    pub dynamic_replan: bool,
    /// Worker pool size; 0 means all available parallelism.
    pub threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            cost: CostConstants::default(),
            packing: true,
            tuple_id: false,
            sample_rate: 1.0,
            sample_seed: 1,
            dynamic_replan: false,
            threads: 1,
        }
    }
}

impl Config {
    pub fn worker_threads(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let parse_f64 = || value.parse::<f64>().map_err(|_| bad());
        let parse_bool = || match value {
            "true" | "1" | "on" | "yes" => Ok(true),
            "false" | "0" | "off" | "no" => Ok(false),
            _ => Err(bad()),
        };
        match key {
            "l_r" => self.cost.l_r = parse_f64()?,
            "l_w" => self.cost.l_w = parse_f64()?,
            "h_r" => self.cost.h_r = parse_f64()?,
            "h_w" => self.cost.h_w = parse_f64()?,
            "t" => self.cost.t = parse_f64()?,
            "cost_h" => self.cost.cost_h = parse_f64()?,
            "merge_factor" | "d" => self.cost.merge_factor = parse_f64()?,
            "buf_map" => self.cost.buf_map = parse_f64()?,
            "buf_red" => self.cost.buf_red = parse_f64()?,
            "split_size" => self.cost.split_size = parse_f64()?,
            "reducer_chunk" => self.cost.reducer_chunk = parse_f64()?,
            "meta_bytes_per_record" => self.cost.meta_bytes_per_record = parse_f64()?,
            "packing" => self.packing = parse_bool()?,
            "tuple_id" => self.tuple_id = parse_bool()?,
            "sample_rate" => {
                let v = parse_f64()?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(bad());
                }
                self.sample_rate = v;
            }
            "sample_seed" => self.sample_seed = value.parse().map_err(|_| bad())?,
            "dynamic_replan" => self.dynamic_replan = parse_bool()?,
            "threads" => self.threads = value.parse().map_err(|_| bad())?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a flat key=value file. `#` and `--` start comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            let line = line.split("--").next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    file: path.display().to_string(),
                    line: idx + 1,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        self.cost.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_known_keys() {
        let mut cfg = Config::default();
        cfg.set("cost_h", "0").unwrap();
        cfg.set("packing", "off").unwrap();
        cfg.set("tuple_id", "true").unwrap();
        cfg.set("threads", "8").unwrap();
        assert_eq!(cfg.cost.cost_h, 0.0);
        assert!(!cfg.packing);
        assert!(cfg.tuple_id);
        assert_eq!(cfg.worker_threads(), 8);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut cfg = Config::default();
        assert!(matches!(cfg.set("nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(cfg.set("sample_rate", "0").is_err());
        assert!(cfg.set("h_r", "abc").is_err());
    }
}
