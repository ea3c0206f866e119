//! Inductive conformal prediction: calibration-score collection and
//! prediction-set construction over any per-class scoring model.
//!
//! A candidate label enters the prediction set at significance `epsilon`
//! when `count + 1 > epsilon * (n + 1)`, where `n` is the number of
//! calibration scores and `count` is how many of them are less than or
//! equal to the candidate's score. Ties therefore work in the candidate's
//! favour, and sets shrink as `epsilon` grows, so sets at a higher
//! significance are always contained in sets at a lower one.

use thiserror::Error;

use crate::data::Dataset;
use crate::mlp::MlpModel;

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("significance level must be strictly between 0 and 1, got {got}")]
    BadEpsilon { got: f64 },
    #[error("calibration produced no scores")]
    EmptyCalibration,
    #[error("calibration score is not finite: {value}")]
    BadScore { value: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("model scored {got} classes, expected {expected}")]
    ClassMismatch { expected: usize, got: usize },
    #[error("prediction sets support at most 32 classes, got {got}")]
    TooManyClasses { got: usize },
    #[error("{labels} labels supplied for {examples} examples")]
    LabelCount { labels: usize, examples: usize },
    #[error("scoring model failed: {0}")]
    Model(String),
}

/// Anything that turns a feature vector into one conformity score per class.
///
/// Higher scores mean the input looks more like that class.
pub trait ConformityMeasure {
    fn class_count(&self) -> usize;
    fn class_scores(&self, features: &[f64]) -> Result<Vec<f64>, IcpError>;
}

impl ConformityMeasure for MlpModel {
    fn class_count(&self) -> usize {
        self.output_len()
    }

    fn class_scores(&self, features: &[f64]) -> Result<Vec<f64>, IcpError> {
        self.forward(features).map_err(|e| IcpError::Model(e.to_string()))
    }
}

/// The model's score for one (input, label) pair.
pub fn conformity_score<M: ConformityMeasure>(
    model: &M,
    features: &[f64],
    label: usize,
) -> Result<f64, IcpError> {
    if label >= model.class_count() {
        return Err(IcpError::LabelRange {
            label,
            classes: model.class_count(),
        });
    }
    let scores = model.class_scores(features)?;
    if scores.len() != model.class_count() {
        return Err(IcpError::ClassMismatch {
            expected: model.class_count(),
            got: scores.len(),
        });
    }
    Ok(scores[label])
}

/// Calibration scores kept as a multiset: duplicates count separately.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScores {
    sorted: Vec<f64>,
}

impl CalibrationScores {
    pub fn new(mut scores: Vec<f64>) -> Result<Self, IcpError> {
        if scores.is_empty() {
            return Err(IcpError::EmptyCalibration);
        }
        if let Some(&bad) = scores.iter().find(|v| !v.is_finite()) {
            return Err(IcpError::BadScore { value: bad });
        }
        scores.sort_unstable_by(f64::total_cmp);
        Ok(CalibrationScores { sorted: scores })
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }

    /// Scores in ascending order.
    pub fn scores(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }

    /// The membership rule. Callers must pass a significance in (0, 1).
    pub fn admits(&self, score: f64, epsilon: f64) -> bool {
        let count = self.sorted.partition_point(|&s| s <= score);
        (count + 1) as f64 > epsilon * (self.sorted.len() + 1) as f64
    }
}

/// Scores every calibration example's true label.
pub fn calibrate<M: ConformityMeasure>(
    model: &M,
    calibration: &Dataset,
) -> Result<CalibrationScores, IcpError> {
    if calibration.is_empty() {
        return Err(IcpError::EmptyCalibration);
    }
    if calibration.n_classes() != model.class_count() {
        return Err(IcpError::ClassMismatch {
            expected: model.class_count(),
            got: calibration.n_classes(),
        });
    }
    let mut scores = Vec::with_capacity(calibration.len());
    for (features, label) in calibration.iter() {
        let class_scores = model.class_scores(features)?;
        if class_scores.len() != model.class_count() {
            return Err(IcpError::ClassMismatch {
                expected: model.class_count(),
                got: class_scores.len(),
            });
        }
        scores.push(class_scores[label]);
    }
    CalibrationScores::new(scores)
}

/// A set of labels packed into a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSet(u32);

impl LabelSet {
    pub fn empty() -> Self {
        LabelSet(0)
    }

    pub fn insert(&mut self, label: usize) {
        debug_assert!(label < 32);
        self.0 |= 1 << label;
    }

    pub fn contains(&self, label: usize) -> bool {
        label < 32 && self.0 & (1 << label) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(&self, other: &LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Bitmask with bit `y` set when label `y` is a member.
    pub fn mask(&self) -> u32 {
        self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let mask = self.0;
        (0..32).filter(move |b| mask & (1 << b) != 0)
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut set = LabelSet::empty();
        for label in iter {
            set.insert(label);
        }
        set
    }
}

/// The labels admitted for one input at one significance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionSet {
    pub members: LabelSet,
    pub significance: f64,
}

fn check_epsilon(epsilon: f64) -> Result<(), IcpError> {
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon >= 1.0 {
        return Err(IcpError::BadEpsilon { got: epsilon });
    }
    Ok(())
}

/// Builds the prediction set for one input.
pub fn predict_set<M: ConformityMeasure>(
    scores: &CalibrationScores,
    model: &M,
    features: &[f64],
    epsilon: f64,
) -> Result<PredictionSet, IcpError> {
    check_epsilon(epsilon)?;
    if model.class_count() > 32 {
        return Err(IcpError::TooManyClasses {
            got: model.class_count(),
        });
    }
    let candidate_scores = model.class_scores(features)?;
    if candidate_scores.len() != model.class_count() {
        return Err(IcpError::ClassMismatch {
            expected: model.class_count(),
            got: candidate_scores.len(),
        });
    }
    let members = candidate_scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| scores.admits(s, epsilon))
        .map(|(label, _)| label)
        .collect();
    Ok(PredictionSet {
        members,
        significance: epsilon,
    })
}

/// Prediction sets for a whole test set across several significance levels.
///
/// Each input is scored once; every significance level reuses the same
/// candidate scores.
pub struct PredictionTable {
    epsilons: Vec<f64>,
    sets: Vec<LabelSet>,
}

impl PredictionTable {
    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn n_examples(&self) -> usize {
        if self.epsilons.is_empty() {
            0
        } else {
            self.sets.len() / self.epsilons.len()
        }
    }

    pub fn set(&self, example: usize, eps_index: usize) -> PredictionSet {
        PredictionSet {
            members: self.sets[example * self.epsilons.len() + eps_index],
            significance: self.epsilons[eps_index],
        }
    }

    /// All examples' sets at one significance level.
    pub fn column(&self, eps_index: usize) -> Vec<PredictionSet> {
        (0..self.n_examples()).map(|i| self.set(i, eps_index)).collect()
    }

    /// One row per example and significance level:
    /// `example,epsilon,set_mask,set_size,hit`.
    pub fn to_csv(&self, labels: &[usize]) -> Result<String, IcpError> {
        if labels.len() != self.n_examples() {
            return Err(IcpError::LabelCount {
                labels: labels.len(),
                examples: self.n_examples(),
            });
        }
        let mut out = String::from("example,epsilon,set_mask,set_size,hit\n");
        use std::fmt::Write as _;
        for (i, &label) in labels.iter().enumerate() {
            for (e, &eps) in self.epsilons.iter().enumerate() {
                let set = self.set(i, e);
                let _ = writeln!(
                    out,
                    "{i},{eps},{},{},{}",
                    set.members.mask(),
                    set.members.len(),
                    u8::from(set.members.contains(label))
                );
            }
        }
        Ok(out)
    }
}

/// Builds prediction sets for every test example at every significance level.
pub fn predict_batch<M: ConformityMeasure>(
    scores: &CalibrationScores,
    model: &M,
    test: &Dataset,
    epsilons: &[f64],
) -> Result<PredictionTable, IcpError> {
    for &eps in epsilons {
        check_epsilon(eps)?;
    }
    if model.class_count() > 32 {
        return Err(IcpError::TooManyClasses {
            got: model.class_count(),
        });
    }
    if test.n_classes() != model.class_count() {
        return Err(IcpError::ClassMismatch {
            expected: model.class_count(),
            got: test.n_classes(),
        });
    }
    let mut sets = Vec::with_capacity(test.len() * epsilons.len());
    for (features, _) in test.iter() {
        let candidate_scores = model.class_scores(features)?;
        if candidate_scores.len() != model.class_count() {
            return Err(IcpError::ClassMismatch {
                expected: model.class_count(),
                got: candidate_scores.len(),
            });
        }
        for &eps in epsilons {
            let members = candidate_scores
                .iter()
                .enumerate()
                .filter(|(_, &s)| scores.admits(s, eps))
                .map(|(label, _)| label)
                .collect();
            sets.push(members);
        }
    }
    Ok(PredictionTable {
        epsilons: epsilons.to_vec(),
        sets,
    })
}
