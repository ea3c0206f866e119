//! Repetition scheduling and the per-repetition pipeline: draw a balanced
//! pool, split it into roles, scale, train, calibrate, predict, measure.
//!
//! Also owns the raw and aggregate result tables and their CSV forms. Every
//! repetition is seeded from `(master_seed, protocol, grid value, repetition
//! index)` alone, so extending the grid or adding repetitions never changes
//! rows that already exist.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{balance_undersample, fit_scaler, DataError, Dataset};
use crate::icp::{calibrate, predict_batch, IcpError};
use crate::metrics::{aggregate, aggregate_two_sd, run_metrics, MetricsError};
use crate::mlp::{train_sgd, MlpError, TrainConfig};
use crate::partition::{
    split_disjoint, split_equal_with_overlap, split_shared_pool, Partition, PartitionError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {reason}")]
    Config { reason: String },
    #[error("experiment setup: {source}")]
    Setup {
        #[from]
        source: StageError,
    },
    #[error("grid value {grid}, repetition {repetition}: {source}")]
    Repetition {
        grid: usize,
        repetition: usize,
        source: StageError,
    },
    #[error("raw results are incomplete: missing {missing}")]
    Incomplete { missing: String },
    #[error("aggregation needs at least 2 repetitions per cell, found {found}")]
    TooFewRepetitions { found: usize },
    #[error("results line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("no result rows to aggregate")]
    EmptyResults,
    #[error("inconsistent results: {reason}")]
    Inconsistent { reason: String },
}

/// A failure inside one stage of the pipeline.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Train(#[from] MlpError),
    #[error(transparent)]
    Predict(#[from] IcpError),
    #[error(transparent)]
    Measure(#[from] MetricsError),
}

/// Which of the three data-splitting regimes a study uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// Disjoint training and calibration sets; calibration takes everything
    /// left over, and the grid varies the training-set size.
    A,
    /// Equal-size training and calibration sets with a fixed overlap; the
    /// grid varies the common set size.
    B,
    /// A working pool split evenly between training and calibration around a
    /// shared block; the grid varies the shared-block size.
    C,
}

impl Protocol {
    /// What the grid values mean under this protocol.
    pub fn grid_name(&self) -> &'static str {
        match self {
            Protocol::A => "train_size",
            Protocol::B => "set_size",
            Protocol::C => "shared",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Protocol::A => 1,
            Protocol::B => 2,
            Protocol::C => 3,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::A => "A",
            Protocol::B => "B",
            Protocol::C => "C",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Protocol::A),
            "B" | "b" => Ok(Protocol::B),
            "C" | "c" => Ok(Protocol::C),
            other => Err(format!("unknown protocol {other:?}, expected A, B, or C")),
        }
    }
}

/// How many of the drawn index partitions to keep alongside the results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordPartitions {
    None,
    First,
    All,
}

impl fmt::Display for RecordPartitions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordPartitions::None => "none",
            RecordPartitions::First => "first",
            RecordPartitions::All => "all",
        })
    }
}

impl FromStr for RecordPartitions {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(RecordPartitions::None),
            "first" => Ok(RecordPartitions::First),
            "all" => Ok(RecordPartitions::All),
            other => Err(format!(
                "unknown partition-recording mode {other:?}, expected none, first, or all"
            )),
        }
    }
}

/// Significance levels studied by default, largest first.
pub const DEFAULT_EPSILONS: [f64; 8] = [0.8, 0.6, 0.4, 0.2, 0.1, 0.05, 0.025, 0.01];

/// Everything one study needs: the protocol, its grid, and the shared
/// pipeline settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    /// Grid of the protocol's varying quantity; see [`Protocol::grid_name`].
    pub grid: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub repetitions: usize,
    pub master_seed: u64,
    /// Examples drawn per class when balancing the raw data.
    pub per_class: usize,
    pub test_size: usize,
    /// Overlap between training and calibration sets (protocol B only).
    pub overlap: usize,
    /// Working-pool size (protocol C only).
    pub pool: usize,
    /// Draw the balanced pool once from the master seed instead of fresh
    /// per repetition.
    pub fixed_balanced_pool: bool,
    /// How many leading feature columns are continuous and get rescaled.
    pub continuous_features: usize,
    pub hidden: Vec<usize>,
    /// Worker threads; 0 means one per available core.
    pub workers: usize,
    pub record_partitions: RecordPartitions,
    /// Per-repetition training settings; the seed field is ignored and
    /// replaced by a repetition-derived seed.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: Protocol::A,
            grid: Vec::new(),
            epsilons: DEFAULT_EPSILONS.to_vec(),
            repetitions: 200,
            master_seed: 42,
            per_class: 2747,
            test_size: 5329,
            overlap: 250,
            pool: 2000,
            fixed_balanced_pool: false,
            continuous_features: 10,
            hidden: vec![108, 12],
            workers: 0,
            record_partitions: RecordPartitions::First,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Checks every field against a dataset with `n_classes` labels.
    /// Infeasible grid points are reported with their index and the sizes
    /// that fail to fit.
    pub fn validate(&self, n_classes: usize) -> Result<(), ExperimentError> {
        let fail = |reason: String| Err(ExperimentError::Config { reason });
        if n_classes == 0 {
            return fail("dataset has no classes".into());
        }
        if self.grid.is_empty() {
            return fail("grid must list at least one value".into());
        }
        if self.epsilons.is_empty() {
            return fail("epsilons must list at least one value".into());
        }
        for (i, &e) in self.epsilons.iter().enumerate() {
            if !e.is_finite() || e <= 0.0 || e >= 1.0 {
                return fail(format!("epsilons[{i}] = {e} is outside (0, 1)"));
            }
            if self.epsilons[..i].iter().any(|p| p.to_bits() == e.to_bits()) {
                return fail(format!("epsilons[{i}] repeats the value {e}"));
            }
        }
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1".into());
        }
        if self.per_class == 0 {
            return fail("per_class must be at least 1".into());
        }
        if self.test_size == 0 {
            return fail("test_size must be at least 1".into());
        }
        for (i, &h) in self.hidden.iter().enumerate() {
            if h == 0 {
                return fail(format!("hidden[{i}] must be nonzero"));
            }
        }
        if !self.train.learning_rate.is_finite() || self.train.learning_rate <= 0.0 {
            return fail(format!(
                "train.learning_rate = {} must be a positive finite number",
                self.train.learning_rate
            ));
        }
        if self.train.batch_size == 0 {
            return fail("train.batch_size must be at least 1".into());
        }
        if self.train.epochs == 0 {
            return fail("train.epochs must be at least 1".into());
        }

        let n = self.per_class * n_classes;
        match self.protocol {
            Protocol::A => {
                for (i, &g) in self.grid.iter().enumerate() {
                    if g == 0 {
                        return fail(format!("grid[{i}] train_size must be nonzero"));
                    }
                    let needed = self.test_size + g + 1;
                    if needed > n {
                        return fail(format!(
                            "grid[{i}] train_size {g} needs {needed} examples \
                             (test_size + train_size + 1), balanced pool has {n}"
                        ));
                    }
                }
            }
            Protocol::B => {
                for (i, &g) in self.grid.iter().enumerate() {
                    if g == 0 {
                        return fail(format!("grid[{i}] set_size must be nonzero"));
                    }
                    if self.overlap > g {
                        return fail(format!(
                            "grid[{i}] set_size {g} is smaller than overlap {}",
                            self.overlap
                        ));
                    }
                    let needed = self.test_size + 2 * g - self.overlap;
                    if needed > n {
                        return fail(format!(
                            "grid[{i}] set_size {g} needs {needed} examples \
                             (test_size + 2 * set_size - overlap), balanced pool has {n}"
                        ));
                    }
                }
            }
            Protocol::C => {
                if self.pool == 0 {
                    return fail("pool must be nonzero".into());
                }
                let needed = self.test_size + self.pool;
                if needed > n {
                    return fail(format!(
                        "pool {} needs {needed} examples (test_size + pool), \
                         balanced pool has {n}",
                        self.pool
                    ));
                }
                for (i, &g) in self.grid.iter().enumerate() {
                    if g > self.pool {
                        return fail(format!(
                            "grid[{i}] shared {g} exceeds pool {}",
                            self.pool
                        ));
                    }
                    if !(self.pool - g).is_multiple_of(2) {
                        return fail(format!(
                            "grid[{i}] shared {g} leaves an odd remainder of pool {}",
                            self.pool
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of one repetition, derived from its coordinates alone.
pub fn child_seed(master_seed: u64, protocol: Protocol, grid_value: usize, repetition: usize) -> u64 {
    let mut h = splitmix(master_seed ^ 0x9e37_79b9_7f4a_7c15);
    h = splitmix(h ^ protocol.tag());
    h = splitmix(h ^ grid_value as u64);
    h = splitmix(h ^ repetition as u64);
    h
}

const POOL_SEED_SALT: u64 = 0x706f_6f6c;

/// One measured pipeline outcome at one significance level.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub protocol: Protocol,
    pub grid: usize,
    pub epsilon: f64,
    pub repetition: usize,
    pub cal_count: usize,
    pub coverage: f64,
    pub bias: f64,
    pub diff: f64,
    pub width: f64,
    pub mean_alpha: f64,
}

pub const RAW_HEADER: &str =
    "protocol,grid,epsilon,repetition,cal_count,coverage,bias,diff,width,mean_alpha";

/// All raw rows of one study, ordered by grid value, then repetition, then
/// significance level as configured.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<RawRow>,
}

fn parse_field<T: FromStr>(raw: &str, line: usize, field: &str) -> Result<T, ExperimentError>
where
    T::Err: fmt::Display,
{
    raw.parse().map_err(|e| ExperimentError::Csv {
        line,
        reason: format!("field {field}: cannot parse {raw:?}: {e}"),
    })
}

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(RAW_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.protocol,
                r.grid,
                r.epsilon,
                r.repetition,
                r.cal_count,
                r.coverage,
                r.bias,
                r.diff,
                r.width,
                r.mean_alpha
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ExperimentError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end_matches('\r') == RAW_HEADER => {}
            Some((_, h)) => {
                return Err(ExperimentError::Csv {
                    line: 1,
                    reason: format!("expected header {RAW_HEADER:?}, found {h:?}"),
                })
            }
            None => {
                return Err(ExperimentError::Csv {
                    line: 1,
                    reason: "empty file".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 10 {
                return Err(ExperimentError::Csv {
                    line,
                    reason: format!("expected 10 fields, found {}", fields.len()),
                });
            }
            rows.push(RawRow {
                protocol: parse_field(fields[0], line, "protocol")?,
                grid: parse_field(fields[1], line, "grid")?,
                epsilon: parse_field(fields[2], line, "epsilon")?,
                repetition: parse_field(fields[3], line, "repetition")?,
                cal_count: parse_field(fields[4], line, "cal_count")?,
                coverage: parse_field(fields[5], line, "coverage")?,
                bias: parse_field(fields[6], line, "bias")?,
                diff: parse_field(fields[7], line, "diff")?,
                width: parse_field(fields[8], line, "width")?,
                mean_alpha: parse_field(fields[9], line, "mean_alpha")?,
            });
        }
        Ok(ResultsTable { rows })
    }
}

/// An index partition kept for inspection, tagged with its coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedPartition {
    pub grid: usize,
    pub repetition: usize,
    pub partition: Partition,
}

/// Raw rows plus whatever partitions the configuration asked to keep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub table: ResultsTable,
    pub partitions: Vec<RecordedPartition>,
}

struct JobOutput {
    rows: Vec<RawRow>,
    partition: Option<RecordedPartition>,
}

fn run_single(
    config: &ExperimentConfig,
    data: &Dataset,
    fixed_pool: Option<&Dataset>,
    grid_value: usize,
    repetition: usize,
) -> Result<JobOutput, ExperimentError> {
    let seed = child_seed(config.master_seed, config.protocol, grid_value, repetition);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stage = (|| -> Result<JobOutput, StageError> {
        let drawn;
        let pool: &Dataset = match fixed_pool {
            Some(p) => p,
            None => {
                drawn = balance_undersample(data, config.per_class, &mut rng)?;
                &drawn
            }
        };
        let partition = match config.protocol {
            Protocol::A => split_disjoint(pool.len(), config.test_size, grid_value, &mut rng)?,
            Protocol::B => split_equal_with_overlap(
                pool.len(),
                config.test_size,
                grid_value,
                config.overlap,
                &mut rng,
            )?,
            Protocol::C => split_shared_pool(
                pool.len(),
                config.test_size,
                config.pool,
                grid_value,
                &mut rng,
            )?,
        };

        let train_raw = pool.subset(&partition.train);
        let scaler = fit_scaler(&train_raw, config.continuous_features)?;
        let train = scaler.apply(&train_raw)?;
        let cal = scaler.apply(&pool.subset(&partition.calibration))?;
        let test = scaler.apply(&pool.subset(&partition.test))?;

        let mut sizes = Vec::with_capacity(config.hidden.len() + 2);
        sizes.push(train.feature_len());
        sizes.extend_from_slice(&config.hidden);
        sizes.push(train.n_classes());

        let train_config = TrainConfig {
            seed: rng.gen(),
            ..config.train.clone()
        };
        let model = train_sgd(&train, &sizes, &train_config)?;
        let alphas = calibrate(&model, &cal)?;
        let table = predict_batch(&alphas, &model, &test, &config.epsilons)?;
        let labels: Vec<usize> = (0..test.len()).map(|i| test.label_of(i)).collect();
        let mean_alpha = alphas.mean();

        let mut rows = Vec::with_capacity(config.epsilons.len());
        for (ei, &epsilon) in config.epsilons.iter().enumerate() {
            let sets = table.column(ei);
            let m = run_metrics(&sets, &labels, epsilon)?;
            rows.push(RawRow {
                protocol: config.protocol,
                grid: grid_value,
                epsilon,
                repetition,
                cal_count: alphas.count(),
                coverage: m.coverage,
                bias: m.bias,
                diff: m.diff,
                width: m.width,
                mean_alpha,
            });
        }

        let record = match config.record_partitions {
            RecordPartitions::None => false,
            RecordPartitions::First => repetition == 0,
            RecordPartitions::All => true,
        };
        Ok(JobOutput {
            rows,
            partition: record.then_some(RecordedPartition {
                grid: grid_value,
                repetition,
                partition,
            }),
        })
    })();
    stage.map_err(|source| ExperimentError::Repetition {
        grid: grid_value,
        repetition,
        source,
    })
}

/// Runs every (grid value, repetition) job and collects the rows in a fixed
/// order regardless of worker count.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &Dataset,
) -> Result<ExperimentRun, ExperimentError> {
    config.validate(data.n_classes())?;
    if config.continuous_features > data.feature_len() {
        return Err(ExperimentError::Config {
            reason: format!(
                "continuous_features {} exceeds the {} feature columns in the data",
                config.continuous_features,
                data.feature_len()
            ),
        });
    }

    let fixed_pool = if config.fixed_balanced_pool {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.master_seed ^ POOL_SEED_SALT));
        Some(
            balance_undersample(data, config.per_class, &mut rng)
                .map_err(|e| ExperimentError::Setup { source: e.into() })?,
        )
    } else {
        None
    };

    let jobs: Vec<(usize, usize)> = config
        .grid
        .iter()
        .flat_map(|&g| (0..config.repetitions).map(move |rep| (g, rep)))
        .collect();

    let worker_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::Config {
            reason: format!("worker pool: {e}"),
        })?;
    let outputs: Vec<JobOutput> = worker_pool.install(|| {
        jobs.par_iter()
            .map(|&(g, rep)| run_single(config, data, fixed_pool.as_ref(), g, rep))
            .collect::<Result<_, _>>()
    })?;

    let mut rows = Vec::with_capacity(jobs.len() * config.epsilons.len());
    let mut partitions = Vec::new();
    for out in outputs {
        rows.extend(out.rows);
        if let Some(p) = out.partition {
            partitions.push(p);
        }
    }
    Ok(ExperimentRun {
        table: ResultsTable { rows },
        partitions,
    })
}

/// Which per-run measure an aggregate row summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Bias,
    Diff,
    Width,
    MeanAlpha,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Bias => "bias",
            Statistic::Diff => "diff",
            Statistic::Width => "width",
            Statistic::MeanAlpha => "mean_alpha",
        })
    }
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bias" => Ok(Statistic::Bias),
            "diff" => Ok(Statistic::Diff),
            "width" => Ok(Statistic::Width),
            "mean_alpha" => Ok(Statistic::MeanAlpha),
            other => Err(format!(
                "unknown statistic {other:?}, expected bias, diff, width, or mean_alpha"
            )),
        }
    }
}

/// Which interval convention an aggregate row uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiFormula {
    /// `mean +- 1.96 s / sqrt(n_runs)`.
    Se95,
    /// `mean +- 2 s`.
    Sd2,
}

impl fmt::Display for CiFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiFormula::Se95 => "se95",
            CiFormula::Sd2 => "sd2",
        })
    }
}

impl FromStr for CiFormula {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "se95" => Ok(CiFormula::Se95),
            "sd2" => Ok(CiFormula::Sd2),
            other => Err(format!("unknown ci_formula {other:?}, expected se95 or sd2")),
        }
    }
}

/// One summarized cell: a statistic at one (grid value, epsilon) coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub protocol: Protocol,
    pub grid: usize,
    pub epsilon: f64,
    pub statistic: Statistic,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_runs: usize,
    pub ci_formula: CiFormula,
}

pub const AGGREGATE_HEADER: &str =
    "protocol,grid,epsilon,statistic,mean,ci_low,ci_high,n_runs,ci_formula";

/// Summarizes a complete raw table: bias, diff, and width with 95% intervals
/// on the mean, plus mean calibration score under both interval conventions.
///
/// The table must hold every repetition `0..R` for every (grid, epsilon)
/// cell; gaps are reported by coordinate.
pub fn aggregate_rows(table: &ResultsTable) -> Result<Vec<AggregateRow>, ExperimentError> {
    if table.rows.is_empty() {
        return Err(ExperimentError::EmptyResults);
    }
    let protocol = table.rows[0].protocol;
    if table.rows.iter().any(|r| r.protocol != protocol) {
        return Err(ExperimentError::Inconsistent {
            reason: "rows mix more than one protocol".into(),
        });
    }

    struct Cell {
        grid: usize,
        epsilon: f64,
        reps: Vec<usize>,
        bias: Vec<f64>,
        diff: Vec<f64>,
        width: Vec<f64>,
        mean_alpha: Vec<f64>,
    }
    let mut order: Vec<(usize, u64)> = Vec::new();
    let mut cells: HashMap<(usize, u64), Cell> = HashMap::new();
    for row in &table.rows {
        let key = (row.grid, row.epsilon.to_bits());
        let cell = cells.entry(key).or_insert_with(|| {
            order.push(key);
            Cell {
                grid: row.grid,
                epsilon: row.epsilon,
                reps: Vec::new(),
                bias: Vec::new(),
                diff: Vec::new(),
                width: Vec::new(),
                mean_alpha: Vec::new(),
            }
        });
        if cell.reps.contains(&row.repetition) {
            return Err(ExperimentError::Inconsistent {
                reason: format!(
                    "repetition {} appears twice for grid={} epsilon={}",
                    row.repetition, row.grid, row.epsilon
                ),
            });
        }
        cell.reps.push(row.repetition);
        cell.bias.push(row.bias);
        cell.diff.push(row.diff);
        cell.width.push(row.width);
        cell.mean_alpha.push(row.mean_alpha);
    }

    let reps = cells.values().map(|c| c.reps.len()).max().unwrap_or(0);
    let mut missing = Vec::new();
    for &key in &order {
        let cell = &cells[&key];
        for rep in 0..reps {
            if !cell.reps.contains(&rep) {
                missing.push(format!(
                    "grid={} epsilon={} repetition={rep}",
                    cell.grid, cell.epsilon
                ));
            }
        }
    }
    if !missing.is_empty() {
        let shown = missing.iter().take(8).cloned().collect::<Vec<_>>().join(", ");
        let suffix = if missing.len() > 8 {
            format!(" and {} more", missing.len() - 8)
        } else {
            String::new()
        };
        return Err(ExperimentError::Incomplete {
            missing: format!("{shown}{suffix}"),
        });
    }
    if reps < 2 {
        return Err(ExperimentError::TooFewRepetitions { found: reps });
    }

    let summarize = |values: &[f64]| {
        aggregate(values).map_err(|e| ExperimentError::Inconsistent {
            reason: e.to_string(),
        })
    };
    let mut out = Vec::with_capacity(order.len() * 5);
    for key in order {
        let cell = &cells[&key];
        let mut push = |statistic: Statistic,
                        agg: crate::metrics::Aggregate,
                        ci_formula: CiFormula| {
            out.push(AggregateRow {
                protocol,
                grid: cell.grid,
                epsilon: cell.epsilon,
                statistic,
                mean: agg.mean,
                ci_low: agg.ci_low,
                ci_high: agg.ci_high,
                n_runs: agg.n_runs,
                ci_formula,
            });
        };
        push(Statistic::Bias, summarize(&cell.bias)?, CiFormula::Se95);
        push(Statistic::Diff, summarize(&cell.diff)?, CiFormula::Se95);
        push(Statistic::Width, summarize(&cell.width)?, CiFormula::Se95);
        push(
            Statistic::MeanAlpha,
            summarize(&cell.mean_alpha)?,
            CiFormula::Se95,
        );
        push(
            Statistic::MeanAlpha,
            aggregate_two_sd(&cell.mean_alpha).map_err(|e| ExperimentError::Inconsistent {
                reason: e.to_string(),
            })?,
            CiFormula::Sd2,
        );
    }
    Ok(out)
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.protocol,
            r.grid,
            r.epsilon,
            r.statistic,
            r.mean,
            r.ci_low,
            r.ci_high,
            r.n_runs,
            r.ci_formula
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn aggregate_from_csv(text: &str) -> Result<Vec<AggregateRow>, ExperimentError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == AGGREGATE_HEADER => {}
        Some((_, h)) => {
            return Err(ExperimentError::Csv {
                line: 1,
                reason: format!("expected header {AGGREGATE_HEADER:?}, found {h:?}"),
            })
        }
        None => {
            return Err(ExperimentError::Csv {
                line: 1,
                reason: "empty file".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 9 {
            return Err(ExperimentError::Csv {
                line,
                reason: format!("expected 9 fields, found {}", fields.len()),
            });
        }
        rows.push(AggregateRow {
            protocol: parse_field(fields[0], line, "protocol")?,
            grid: parse_field(fields[1], line, "grid")?,
            epsilon: parse_field(fields[2], line, "epsilon")?,
            statistic: parse_field(fields[3], line, "statistic")?,
            mean: parse_field(fields[4], line, "mean")?,
            ci_low: parse_field(fields[5], line, "ci_low")?,
            ci_high: parse_field(fields[6], line, "ci_high")?,
            n_runs: parse_field(fields[7], line, "n_runs")?,
            ci_formula: parse_field(fields[8], line, "ci_formula")?,
        });
    }
    Ok(rows)
}

/// Mean calibration score against shared-block size under protocol C, with
/// a two-standard-deviation spread band per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapPoint {
    pub shared: usize,
    pub mean_alpha: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub n_runs: usize,
}

pub fn conformity_overlap_study(
    config: &ExperimentConfig,
    data: &Dataset,
) -> Result<Vec<OverlapPoint>, ExperimentError> {
    if config.protocol != Protocol::C {
        return Err(ExperimentError::Config {
            reason: "the overlap study requires the shared-pool protocol".into(),
        });
    }
    let run = run_experiment(config, data)?;
    let first_eps = config.epsilons[0];
    let mut points = Vec::with_capacity(config.grid.len());
    for &shared in &config.grid {
        let values: Vec<f64> = run
            .table
            .rows
            .iter()
            .filter(|r| r.grid == shared && r.epsilon.to_bits() == first_eps.to_bits())
            .map(|r| r.mean_alpha)
            .collect();
        let agg = aggregate_two_sd(&values).map_err(|e| match e {
            MetricsError::TooFewValues { got } => ExperimentError::TooFewRepetitions { found: got },
            other => ExperimentError::Inconsistent {
                reason: other.to_string(),
            },
        })?;
        points.push(OverlapPoint {
            shared,
            mean_alpha: agg.mean,
            band_low: agg.ci_low,
            band_high: agg.ci_high,
            n_runs: agg.n_runs,
        });
    }
    Ok(points)
}
