//! Per-run prediction quality measures and their aggregation across
//! repeated runs.
//!
//! Coverage is the fraction of test examples whose true label landed in the
//! prediction set; bias is coverage minus the target `1 - epsilon`; diff is
//! the absolute bias; width is the mean prediction-set size. Aggregation
//! offers two interval conventions, both reported explicitly downstream:
//! `mean +- 1.96 s / sqrt(R)` (a 95% interval on the mean) and
//! `mean +- 2 s` (a spread band).

use thiserror::Error;

use crate::icp::{CalibrationScores, PredictionSet};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no prediction sets supplied")]
    Empty,
    #[error("{labels} labels supplied for {sets} prediction sets")]
    LengthMismatch { sets: usize, labels: usize },
    #[error("aggregation needs at least 2 values, got {got}")]
    TooFewValues { got: usize },
    #[error("aggregation input contains a non-finite value")]
    NonFinite,
}

/// Quality of one run at one significance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub coverage: f64,
    pub bias: f64,
    pub diff: f64,
    pub width: f64,
}

/// Fraction of examples whose true label is in the corresponding set.
pub fn coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64, MetricsError> {
    if sets.is_empty() {
        return Err(MetricsError::Empty);
    }
    if sets.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            sets: sets.len(),
            labels: labels.len(),
        });
    }
    let hits = sets
        .iter()
        .zip(labels)
        .filter(|(set, &label)| set.members.contains(label))
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Signed deviation from the target coverage, and its absolute value.
pub fn bias_diff(coverage: f64, epsilon: f64) -> (f64, f64) {
    let bias = coverage - (1.0 - epsilon);
    (bias, bias.abs())
}

/// Mean prediction-set size.
pub fn width(sets: &[PredictionSet]) -> Result<f64, MetricsError> {
    if sets.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total: usize = sets.iter().map(|s| s.members.len()).sum();
    Ok(total as f64 / sets.len() as f64)
}

/// Coverage, bias, diff, and width of one run in a single pass.
pub fn run_metrics(
    sets: &[PredictionSet],
    labels: &[usize],
    epsilon: f64,
) -> Result<RunMetrics, MetricsError> {
    let coverage = coverage(sets, labels)?;
    let (bias, diff) = bias_diff(coverage, epsilon);
    let width = width(sets)?;
    Ok(RunMetrics {
        coverage,
        bias,
        diff,
        width,
    })
}

/// A mean with a symmetric interval around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_runs: usize,
}

fn mean_and_sd(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFewValues { got: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// `mean +- 1.96 s / sqrt(R)` with the unbiased sample standard deviation.
pub fn aggregate(values: &[f64]) -> Result<Aggregate, MetricsError> {
    let (mean, sd) = mean_and_sd(values)?;
    let half = 1.96 * sd / (values.len() as f64).sqrt();
    Ok(Aggregate {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        n_runs: values.len(),
    })
}

/// `mean +- 2 s`: a spread band rather than an interval on the mean.
pub fn aggregate_two_sd(values: &[f64]) -> Result<Aggregate, MetricsError> {
    let (mean, sd) = mean_and_sd(values)?;
    Ok(Aggregate {
        mean,
        ci_low: mean - 2.0 * sd,
        ci_high: mean + 2.0 * sd,
        n_runs: values.len(),
    })
}

/// Mean of the calibration scores.
pub fn mean_calibration_alpha(scores: &CalibrationScores) -> f64 {
    scores.mean()
}
