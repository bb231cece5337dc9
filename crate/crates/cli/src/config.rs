//! Experiment configuration: a flat key-value text file with two named
//! presets. Unknown keys are rejected; every key has a documented default
//! (the paper-desk preset). Command-line flags override file values.

use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError {
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperDesk,
    PaperFull,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "paper-desk" => Ok(Preset::PaperDesk),
            "paper-full" => Ok(Preset::PaperFull),
            other => Err(err(format!(
                "unknown preset {other:?}; expected paper-desk or paper-full"
            ))),
        }
    }
}

/// Every tunable of the pipeline. The desk preset shrinks the grid so the
/// full three-model experiment runs in minutes; paper-full keeps the
/// reference 100x100 geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub pool_count: usize,
    pub grid_side: usize,
    pub horizon: usize,
    pub n_p: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub dt: f64,
    pub nd: usize,
    pub ns: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sample_count: usize,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::PaperDesk => Self {
                pool_count: 200,
                grid_side: 20,
                horizon: 4,
                n_p: 4,
                sigma1: 0.25,
                sigma2: 0.0,
                dt: 0.01,
                nd: 25,
                ns: 200,
                epochs: 200,
                batch_size: 10,
                learning_rate: 1e-3,
                sample_count: 500,
                seeds: vec![7, 11, 13],
            },
            Preset::PaperFull => Self {
                pool_count: 500,
                grid_side: 100,
                horizon: 4,
                n_p: 4,
                sigma1: 0.25,
                sigma2: 0.0,
                dt: 0.01,
                nd: 50,
                ns: 200,
                epochs: 200,
                batch_size: 10,
                learning_rate: 1e-3,
                sample_count: 500,
                seeds: vec![7, 11, 13],
            },
        }
    }

    /// One `key` assignment; rejects unknown keys and unparsable values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value
                .trim()
                .parse()
                .map_err(|_| err(format!("key {key:?} holds unparsable value {value:?}")))
        }
        match key {
            "pool_count" => self.pool_count = parse(key, value)?,
            "grid_side" => self.grid_side = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "n_p" => self.n_p = parse(key, value)?,
            "sigma1" => self.sigma1 = parse(key, value)?,
            "sigma2" => self.sigma2 = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "nd" => self.nd = parse(key, value)?,
            "ns" => self.ns = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "sample_count" => self.sample_count = parse(key, value)?,
            "seeds" => {
                let seeds: Result<Vec<u64>, _> =
                    value.split(',').map(|tok| tok.trim().parse()).collect();
                self.seeds = seeds
                    .map_err(|_| err(format!("key \"seeds\" holds unparsable value {value:?}")))?;
                if self.seeds.is_empty() {
                    return Err(err("key \"seeds\" must list at least one seed"));
                }
            }
            other => return Err(err(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a config file: `key = value` lines, `#` comments, blank lines.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                err(format!(
                    "config line {} is not `key = value`: {line:?}",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Checks needed by pool generation alone.
    pub fn validate_pool(&self) -> Result<(), ConfigError> {
        if self.pool_count == 0 || self.horizon == 0 || self.n_p == 0 || self.grid_side == 0 {
            return Err(err("pool_count, grid_side, horizon, and n_p must be positive"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_pool()?;
        if self.nd > self.pool_count {
            return Err(err(format!(
                "nd ({}) cannot exceed pool_count ({})",
                self.nd, self.pool_count
            )));
        }
        if self.batch_size == 0 {
            return Err(err("batch_size must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(err("learning_rate must be positive"));
        }
        Ok(())
    }

    /// Key reference for `--help`.
    pub fn key_docs() -> &'static str {
        "Config file keys (defaults are the paper-desk preset):\n\
         \x20 pool_count     data points generated in the pool        [200]\n\
         \x20 grid_side      observation grid side length             [20]\n\
         \x20 horizon        time steps per datum                     [4]\n\
         \x20 n_p            spatial basis functions                  [4]\n\
         \x20 sigma1         process noise std                        [0.25]\n\
         \x20 sigma2         measurement noise std                    [0]\n\
         \x20 dt             integration step (must divide 1)         [0.01]\n\
         \x20 nd             training subset size                     [25]\n\
         \x20 ns             support dataset size                     [200]\n\
         \x20 epochs         training epochs                          [200]\n\
         \x20 batch_size     mini-batch size                          [10]\n\
         \x20 learning_rate  Adam learning rate                       [0.001]\n\
         \x20 sample_count   generated samples per model              [500]\n\
         \x20 seeds          comma-separated experiment seeds         [7,11,13]"
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::PaperDesk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn presets_differ_in_scale() {
        let desk = ExperimentConfig::preset(Preset::PaperDesk);
        let full = ExperimentConfig::preset(Preset::PaperFull);
        assert_eq!(desk.grid_side, 20);
        assert_eq!(full.grid_side, 100);
        assert_eq!(full.pool_count, 500);
        assert_eq!(desk.batch_size, 10);
        assert_eq!(desk.learning_rate, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("grdi_side", "10").is_err());
        assert!(cfg.set("grid_side", "ten").is_err());
        assert!(cfg.set("grid_side", "10").is_ok());
        assert_eq!(cfg.grid_side, 10);
    }

    #[test]
    fn config_file_roundtrip_with_comments() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# shrink everything").unwrap();
        writeln!(file, "grid_side = 8").unwrap();
        writeln!(file).unwrap();
        writeln!(file, "seeds = 1, 2, 3").unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.apply_file(file.path()).unwrap();
        assert_eq!(cfg.grid_side, 8);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn validation_catches_inconsistencies() {
        let mut cfg = ExperimentConfig::default();
        cfg.nd = cfg.pool_count + 1;
        assert!(cfg.validate().is_err());
        cfg.nd = 10;
        assert!(cfg.validate().is_ok());
    }
}
