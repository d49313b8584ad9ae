//! Experiment configuration: a flat key=value text file with CLI-flag
//! overrides (flags win). All seeds are explicit; nothing defaults to
//! wall-clock state.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{Distance, KnnConfig, SvdConfig};
use crate::error::{Error, Result};
use crate::eval::VictimKind;
use crate::io::DataFormat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefenseKind {
    Bic,
    Knn,
    Svd,
    None,
}

impl DefenseKind {
    pub fn parse(s: &str) -> Result<DefenseKind> {
        match s {
            "bic" => Ok(DefenseKind::Bic),
            "knn" => Ok(DefenseKind::Knn),
            "svd" => Ok(DefenseKind::Svd),
            "none" => Ok(DefenseKind::None),
            other => Err(Error::Config(format!("unknown defense `{other}`"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DefenseKind::Bic => "bic",
            DefenseKind::Knn => "knn",
            DefenseKind::Svd => "svd",
            DefenseKind::None => "none",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub format: DataFormat,
    pub train_frac: f64,
    pub test_frac: f64,
    /// 0 means no injection; 1..=W runs the multiclass attack schema.
    pub attack_index: usize,
    pub attack_budget: usize,
    pub defense: DefenseKind,
    pub victim: VictimKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub m_max: usize,
    pub knn: KnnConfig,
    pub svd: SvdConfig,
    /// Retrain the victim after every committed sanitizer step and
    /// record per-step accuracy in the trace. Expensive; off by default.
    pub step_accuracy: bool,
}

impl ExperimentConfig {
    fn defaults() -> ExperimentConfig {
        ExperimentConfig {
            dataset: PathBuf::new(),
            format: DataFormat::Csv,
            train_frac: 0.5,
            test_frac: 0.25,
            attack_index: 0,
            attack_budget: 0,
            defense: DefenseKind::Bic,
            victim: VictimKind::Logistic,
            seed: 0,
            out_dir: PathBuf::from("out"),
            m_max: crate::mixtures::M_MAX_INITIAL,
            knn: KnnConfig::default(),
            svd: SvdConfig::default(),
            step_accuracy: false,
        }
    }

    /// Parses a config file: one `key = value` per line, `#` comments.
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::defaults();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Applies one setting; used for both file lines and flag overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "format" => self.format = DataFormat::parse(value)?,
            "train_frac" => self.train_frac = num(key, value)?,
            "test_frac" => self.test_frac = num(key, value)?,
            "attack_index" => self.attack_index = num(key, value)?,
            "attack_budget" => self.attack_budget = num(key, value)?,
            "defense" => self.defense = DefenseKind::parse(value)?,
            "victim" => self.victim = VictimKind::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "m_max" => self.m_max = num(key, value)?,
            "knn_k" => self.knn.k = num(key, value)?,
            "knn_distance" => {
                self.knn.distance = match value {
                    "euclidean" => Distance::Euclidean,
                    "cosine" => Distance::Cosine,
                    other => {
                        return Err(Error::Config(format!("unknown distance `{other}`")))
                    }
                }
            }
            "svd_epsilon" => self.svd.epsilon = num(key, value)?,
            "svd_beta" => self.svd.beta = num(key, value)?,
            "step_accuracy" => self.step_accuracy = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("no dataset path configured".into()));
        }
        if !self.dataset.exists() {
            return Err(Error::Config(format!(
                "dataset `{}` does not exist",
                self.dataset.display()
            )));
        }
        if self.m_max < 1 {
            return Err(Error::Config("m_max must be >= 1".into()));
        }
        if self.attack_index > 0 && self.attack_budget == 0 {
            return Err(Error::Config(
                "attack_index set but attack_budget is 0".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_file_with_comments() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "# experiment\ndataset = data.csv\nformat = csv\nseed = 42\ndefense = knn # baseline\nknn_k = 5"
        )
        .unwrap();
        let cfg = ExperimentConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.dataset, PathBuf::from("data.csv"));
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.defense, DefenseKind::Knn);
        assert_eq!(cfg.knn.k, 5);
        // Untouched keys keep defaults.
        assert_eq!(cfg.train_frac, 0.5);
    }

    #[test]
    fn override_wins() {
        let mut cfg = ExperimentConfig::defaults();
        cfg.set("seed", "7").unwrap();
        cfg.set("seed", "9").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn bad_key_and_value_name_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "dataset = d.csv\nbogus = 1").unwrap();
        let err = ExperimentConfig::from_file(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");

        let mut f2 = tempfile::NamedTempFile::new().unwrap();
        writeln!(f2, "seed = notanumber").unwrap();
        assert!(ExperimentConfig::from_file(f2.path()).is_err());
    }

    #[test]
    fn validation_catches_missing_dataset_and_budget() {
        let mut cfg = ExperimentConfig::defaults();
        assert!(cfg.validate().is_err());
        cfg.dataset = PathBuf::from("/definitely/not/here.csv");
        assert!(cfg.validate().is_err());
        let f = tempfile::NamedTempFile::new().unwrap();
        cfg.dataset = f.path().to_path_buf();
        cfg.attack_index = 1;
        assert!(cfg.validate().is_err());
        cfg.attack_budget = 10;
        assert!(cfg.validate().is_ok());
    }
}
