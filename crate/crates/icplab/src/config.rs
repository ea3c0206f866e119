//! On-disk experiment configuration: a TOML file whose optional fields
//! resolve onto the [`ExperimentConfig`] defaults.
//!
//! Only `protocol` and `grid` are required. Unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{ExperimentConfig, ExperimentError, RecordPartitions, DEFAULT_EPSILONS};
use crate::mlp::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("configuration field {field}: {reason}")]
    Field { field: String, reason: String },
    #[error("invalid configuration: {reason}")]
    Invalid { reason: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    protocol: String,
    grid: Vec<usize>,
    epsilons: Option<Vec<f64>>,
    repetitions: Option<usize>,
    master_seed: Option<u64>,
    per_class: Option<usize>,
    test_size: Option<usize>,
    overlap: Option<usize>,
    pool: Option<usize>,
    fixed_balanced_pool: Option<bool>,
    continuous_features: Option<usize>,
    hidden: Option<Vec<usize>>,
    workers: Option<usize>,
    record_partitions: Option<String>,
    train: Option<FileTrain>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTrain {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
}

/// Parses TOML text into a fully resolved configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let protocol = file
        .protocol
        .parse()
        .map_err(|reason| ConfigError::Field {
            field: "protocol".into(),
            reason,
        })?;
    let record_partitions = match file.record_partitions {
        Some(s) => s.parse().map_err(|reason| ConfigError::Field {
            field: "record_partitions".into(),
            reason,
        })?,
        None => RecordPartitions::First,
    };
    let defaults = ExperimentConfig::default();
    let train_defaults = TrainConfig::default();
    let train = match file.train {
        Some(t) => TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(train_defaults.learning_rate),
            batch_size: t.batch_size.unwrap_or(train_defaults.batch_size),
            epochs: t.epochs.unwrap_or(train_defaults.epochs),
            seed: 0,
        },
        None => train_defaults,
    };
    Ok(ExperimentConfig {
        protocol,
        grid: file.grid,
        epsilons: file.epsilons.unwrap_or_else(|| DEFAULT_EPSILONS.to_vec()),
        repetitions: file.repetitions.unwrap_or(defaults.repetitions),
        master_seed: file.master_seed.unwrap_or(defaults.master_seed),
        per_class: file.per_class.unwrap_or(defaults.per_class),
        test_size: file.test_size.unwrap_or(defaults.test_size),
        overlap: file.overlap.unwrap_or(defaults.overlap),
        pool: file.pool.unwrap_or(defaults.pool),
        fixed_balanced_pool: file.fixed_balanced_pool.unwrap_or(false),
        continuous_features: file
            .continuous_features
            .unwrap_or(defaults.continuous_features),
        hidden: file.hidden.unwrap_or_else(|| defaults.hidden.clone()),
        workers: file.workers.unwrap_or(defaults.workers),
        record_partitions,
        train,
    })
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Runs the semantic checks against a dataset with `n_classes` labels.
pub fn check_semantics(config: &ExperimentConfig, n_classes: usize) -> Result<(), ConfigError> {
    config.validate(n_classes).map_err(|e| match e {
        ExperimentError::Config { reason } => ConfigError::Invalid { reason },
        other => ConfigError::Invalid {
            reason: other.to_string(),
        },
    })
}

#[derive(Serialize)]
struct EchoTrain {
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
}

#[derive(Serialize)]
struct EchoConfig<'a> {
    protocol: String,
    grid: &'a [usize],
    epsilons: &'a [f64],
    repetitions: usize,
    master_seed: u64,
    per_class: usize,
    test_size: usize,
    overlap: usize,
    pool: usize,
    fixed_balanced_pool: bool,
    continuous_features: usize,
    hidden: &'a [usize],
    workers: usize,
    record_partitions: String,
    train: EchoTrain,
}

/// Renders a resolved configuration back to TOML. The output parses to the
/// same configuration, so a run's settings can be replayed from its echo.
pub fn echo_config(config: &ExperimentConfig) -> String {
    let echo = EchoConfig {
        protocol: config.protocol.to_string(),
        grid: &config.grid,
        epsilons: &config.epsilons,
        repetitions: config.repetitions,
        master_seed: config.master_seed,
        per_class: config.per_class,
        test_size: config.test_size,
        overlap: config.overlap,
        pool: config.pool,
        fixed_balanced_pool: config.fixed_balanced_pool,
        continuous_features: config.continuous_features,
        hidden: &config.hidden,
        workers: config.workers,
        record_partitions: config.record_partitions.to_string(),
        train: EchoTrain {
            learning_rate: config.train.learning_rate,
            batch_size: config.train.batch_size,
            epochs: config.train.epochs,
        },
    };
    toml::to_string(&echo).expect("configuration serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Protocol;

    #[test]
    fn minimal_file_fills_in_every_default() {
        let config = parse_config("protocol = \"A\"\ngrid = [500, 1000]\n").unwrap();
        let expected = ExperimentConfig {
            protocol: Protocol::A,
            grid: vec![500, 1000],
            ..ExperimentConfig::default()
        };
        assert_eq!(config, expected);
    }

    #[test]
    fn every_field_can_be_overridden() {
        let text = r#"
            protocol = "C"
            grid = [0, 250]
            epsilons = [0.2]
            repetitions = 10
            master_seed = 7
            per_class = 100
            test_size = 50
            overlap = 5
            pool = 300
            fixed_balanced_pool = true
            continuous_features = 4
            hidden = [16]
            workers = 2
            record_partitions = "all"

            [train]
            learning_rate = 0.01
            batch_size = 16
            epochs = 5
        "#;
        let config = parse_config(text).unwrap();
        assert_eq!(config.protocol, Protocol::C);
        assert_eq!(config.grid, vec![0, 250]);
        assert_eq!(config.epsilons, vec![0.2]);
        assert_eq!(config.repetitions, 10);
        assert_eq!(config.master_seed, 7);
        assert_eq!(config.per_class, 100);
        assert_eq!(config.test_size, 50);
        assert_eq!(config.overlap, 5);
        assert_eq!(config.pool, 300);
        assert!(config.fixed_balanced_pool);
        assert_eq!(config.continuous_features, 4);
        assert_eq!(config.hidden, vec![16]);
        assert_eq!(config.workers, 2);
        assert_eq!(config.record_partitions, RecordPartitions::All);
        assert_eq!(config.train.learning_rate, 0.01);
        assert_eq!(config.train.batch_size, 16);
        assert_eq!(config.train.epochs, 5);
    }

    #[test]
    fn partial_train_table_keeps_other_training_defaults() {
        let config = parse_config("protocol = \"A\"\ngrid = [10]\n\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(config.train.epochs, 5);
        assert_eq!(config.train.learning_rate, 0.05);
        assert_eq!(config.train.batch_size, 32);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = parse_config("protocol = \"A\"\ngrid = [10]\nbogus = 1\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Parse(m) if m.contains("bogus")));

        let err =
            parse_config("protocol = \"A\"\ngrid = [10]\n\n[train]\nseed = 3\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Parse(m) if m.contains("seed")));
    }

    #[test]
    fn missing_required_fields_are_named() {
        let err = parse_config("grid = [10]\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Parse(m) if m.contains("protocol")));

        let err = parse_config("protocol = \"A\"\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Parse(m) if m.contains("grid")));
    }

    #[test]
    fn invalid_enum_strings_name_their_field() {
        let err = parse_config("protocol = \"D\"\ngrid = [10]\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Field { field, .. } if field == "protocol"));

        let err = parse_config(
            "protocol = \"A\"\ngrid = [10]\nrecord_partitions = \"sometimes\"\n",
        )
        .unwrap_err();
        assert!(matches!(&err, ConfigError::Field { field, .. } if field == "record_partitions"));
    }

    #[test]
    fn semantic_check_names_the_offending_value() {
        let config = parse_config("protocol = \"A\"\ngrid = [30000]\n").unwrap();
        let err = check_semantics(&config, 7).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { reason } if reason.contains("train_size")));

        let config = parse_config("protocol = \"A\"\ngrid = [500]\n").unwrap();
        check_semantics(&config, 7).unwrap();
    }

    #[test]
    fn echo_round_trips_to_the_same_configuration() {
        let config = ExperimentConfig {
            protocol: Protocol::B,
            grid: vec![250, 500],
            epsilons: vec![0.4, 0.2, 0.05],
            repetitions: 3,
            master_seed: 11,
            per_class: 40,
            test_size: 30,
            overlap: 25,
            pool: 100,
            fixed_balanced_pool: true,
            continuous_features: 3,
            hidden: vec![9, 5],
            workers: 1,
            record_partitions: RecordPartitions::None,
            train: TrainConfig {
                learning_rate: 0.125,
                batch_size: 4,
                epochs: 2,
                seed: 0,
            },
        };
        let echoed = echo_config(&config);
        let parsed = parse_config(&echoed).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn load_reports_the_missing_path() {
        let err = load_config(Path::new("/nonexistent/icplab.toml")).unwrap_err();
        assert!(matches!(&err, ConfigError::Io { path, .. } if path.ends_with("icplab.toml")));
    }
}
