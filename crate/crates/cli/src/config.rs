//! Flag/file configuration merging: flags win over the config file, which
//! wins over the built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use semcal_core::seqmodel;

use crate::CliError;

pub const DEFAULT_SIGMA: f64 = semcal_core::calibmetrics::DEFAULT_SIGMA;
pub const DEFAULT_SAMPLES: usize = 50;
pub const DEFAULT_QUESTIONS: usize = 500;
pub const DEFAULT_SIM_VOCAB: usize = 3;
pub const DEFAULT_SIM_LENGTH: usize = 3;
pub const DEFAULT_FIXTURES: usize = 100;
pub const DEFAULT_FIXTURE_VOCAB: usize = 5;
pub const DEFAULT_FIXTURE_LENGTH: usize = 4;

/// Optional values read from `--config <file>` (JSON, all keys optional).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub group_by: Option<String>,
    pub strict: Option<bool>,
    pub max_vocab: Option<usize>,
    pub max_length: Option<usize>,
    pub questions: Option<usize>,
    pub samples: Option<usize>,
    pub bias: Option<f64>,
    pub fixtures: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}

pub fn validate_sigma(sigma: f64) -> Result<f64, CliError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(CliError::Usage(format!("sigma must be positive, got {sigma}")));
    }
    Ok(sigma)
}

/// Reject sizes outside the enumeration guard before any work happens.
pub fn validate_sizes(vocab: usize, length: usize) -> Result<(), CliError> {
    if vocab < 2 {
        return Err(CliError::Usage(format!(
            "max-vocab must be at least 2, got {vocab}"
        )));
    }
    if length == 0 {
        return Err(CliError::Usage("max-length must be at least 1".to_string()));
    }
    seqmodel::num_sequences(vocab, length)
        .map(|_| ())
        .map_err(|e| CliError::Usage(format!("size cap rejected: {e}")))
}

pub fn validate_count(value: usize, what: &str) -> Result<usize, CliError> {
    if value == 0 {
        return Err(CliError::Usage(format!("{what} must be at least 1")));
    }
    Ok(value)
}

/// Whether reports are grouped by dataset tag or pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    None,
    DatasetTag,
}

impl GroupBy {
    pub fn parse(raw: &str) -> Result<Self, CliError> {
        match raw {
            "none" => Ok(GroupBy::None),
            "dataset_tag" => Ok(GroupBy::DatasetTag),
            other => Err(CliError::Usage(format!(
                "group-by must be 'none' or 'dataset_tag', got '{other}'"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_validation() {
        assert!(validate_sigma(0.05).is_ok());
        assert!(validate_sigma(0.0).is_err());
        assert!(validate_sigma(-1.0).is_err());
        assert!(validate_sigma(f64::NAN).is_err());
    }

    #[test]
    fn size_guard_is_enforced() {
        assert!(validate_sizes(3, 3).is_ok());
        assert!(validate_sizes(2, 20).is_ok());
        assert!(validate_sizes(2, 21).is_err());
        assert!(validate_sizes(1, 3).is_err());
    }

    #[test]
    fn group_by_parsing() {
        assert_eq!(GroupBy::parse("none").unwrap(), GroupBy::None);
        assert_eq!(GroupBy::parse("dataset_tag").unwrap(), GroupBy::DatasetTag);
        assert!(GroupBy::parse("question").is_err());
    }

    #[test]
    fn missing_config_file_is_default() {
        let cfg = FileConfig::load(None).unwrap();
        assert!(cfg.seed.is_none());
    }
}
