//! Dataset handling: cover type CSV ingestion, class-balanced undersampling,
//! and min-max feature scaling.
//!
//! The cover type layout is 55 comma-separated numeric fields per record:
//! 10 continuous measurements, 44 binary indicators (4 wilderness areas and
//! 40 soil types), and a class label in 1..=7. Labels are remapped to 0..=6
//! on load.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::Rng;
use thiserror::Error;

/// Feature columns in a cover type record.
pub const COVTYPE_FEATURES: usize = 54;
/// Leading columns holding continuous measurements; the rest are 0/1 indicators.
pub const COVTYPE_CONTINUOUS: usize = 10;
/// Distinct cover type labels.
pub const COVTYPE_CLASSES: usize = 7;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("class {label}: requested {requested} examples but only {available} available")]
    InsufficientClass {
        label: usize,
        requested: usize,
        available: usize,
    },
    #[error("dataset contains no examples")]
    Empty,
    #[error("expected {expected} features, got {got}")]
    FeatureLength { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("continuous prefix {prefix} exceeds feature count {features}")]
    ContinuousPrefix { prefix: usize, features: usize },
}

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

/// A labelled dataset with a fixed feature width and label alphabet.
///
/// Rows are stored flat so index-based subsetting stays cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_len: usize,
    n_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(feature_len: usize, n_classes: usize) -> Self {
        Dataset {
            feature_len,
            n_classes,
            features: Vec::new(),
            labels: Vec::new(),
            class_counts: vec![0; n_classes],
        }
    }

    pub fn from_examples<I>(
        feature_len: usize,
        n_classes: usize,
        examples: I,
    ) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = Example>,
    {
        let mut data = Dataset::new(feature_len, n_classes);
        for example in examples {
            data.push(example)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, example: Example) -> Result<(), DataError> {
        if example.features.len() != self.feature_len {
            return Err(DataError::FeatureLength {
                expected: self.feature_len,
                got: example.features.len(),
            });
        }
        if example.label >= self.n_classes {
            return Err(DataError::LabelRange {
                label: example.label,
                classes: self.n_classes,
            });
        }
        self.features.extend_from_slice(&example.features);
        self.labels.push(example.label);
        self.class_counts[example.label] += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Examples per label; sums to `len()`.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn features_of(&self, index: usize) -> &[f64] {
        let start = index * self.feature_len;
        &self.features[start..start + self.feature_len]
    }

    pub fn label_of(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.features
            .chunks_exact(self.feature_len.max(1))
            .zip(self.labels.iter().copied())
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.feature_len, self.n_classes);
        out.features.reserve(indices.len() * self.feature_len);
        out.labels.reserve(indices.len());
        for &i in indices {
            out.features.extend_from_slice(self.features_of(i));
            let label = self.labels[i];
            out.labels.push(label);
            out.class_counts[label] += 1;
        }
        out
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads a cover type CSV file, transparently decompressing gzip input
/// (detected by magic bytes, not file name).
pub fn load_covtype(path: &Path) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(|e| io_err(path, e))?;
    let gzipped = head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b;
    let reader: Box<dyn BufRead> = if gzipped {
        Box::new(BufReader::new(GzDecoder::new(reader)))
    } else {
        Box::new(reader)
    };

    let mut data = Dataset::new(COVTYPE_FEATURES, COVTYPE_CLASSES);
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line_no = idx + 1;
        let example = parse_covtype_record(&line, line_no)?;
        data.push(example).map_err(|e| DataError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
    }
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(data)
}

fn parse_covtype_record(line: &str, line_no: usize) -> Result<Example, DataError> {
    let parse_err = |reason: String| DataError::Parse {
        line: line_no,
        reason,
    };
    let line = line.trim_end_matches('\r');
    let mut features = Vec::with_capacity(COVTYPE_FEATURES);
    let mut label = None;
    let mut count = 0usize;
    for (col, field) in line.split(',').enumerate() {
        count += 1;
        if count > COVTYPE_FEATURES + 1 {
            break;
        }
        let value: f64 = field
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("field {}: not a number: {field:?}", col + 1)))?;
        if !value.is_finite() {
            return Err(parse_err(format!("field {}: not finite", col + 1)));
        }
        if col < COVTYPE_FEATURES {
            if col >= COVTYPE_CONTINUOUS && value != 0.0 && value != 1.0 {
                return Err(parse_err(format!(
                    "field {}: indicator must be 0 or 1, got {value}",
                    col + 1
                )));
            }
            features.push(value);
        } else {
            label = Some(value);
        }
    }
    if count != COVTYPE_FEATURES + 1 {
        return Err(parse_err(format!(
            "expected {} fields, found {count}",
            COVTYPE_FEATURES + 1
        )));
    }
    let raw = label.expect("label field counted");
    if raw.fract() != 0.0 || !(1.0..=COVTYPE_CLASSES as f64).contains(&raw) {
        return Err(parse_err(format!(
            "label must be an integer in 1..={COVTYPE_CLASSES}, got {raw}"
        )));
    }
    Ok(Example {
        features,
        label: raw as usize - 1,
    })
}

/// Writes a dataset back out in the cover type CSV layout (labels 1-based).
pub fn save_covtype(data: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut line = String::new();
    for (features, label) in data.iter() {
        line.clear();
        for v in features {
            let _ = write!(line, "{v},");
        }
        let _ = write!(line, "{}", label + 1);
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Draws `per_class` examples per label uniformly without replacement and
/// returns them grouped by label, original order preserved within a label.
pub fn balance_undersample(
    data: &Dataset,
    per_class: usize,
    rng: &mut impl Rng,
) -> Result<Dataset, DataError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for (i, &label) in data.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut selected = Vec::with_capacity(per_class * data.n_classes());
    for (label, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(DataError::InsufficientClass {
                label,
                requested: per_class,
                available: members.len(),
            });
        }
        let mut picks: Vec<usize> = rand::seq::index::sample(rng, members.len(), per_class)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picks.sort_unstable();
        selected.extend(picks);
    }
    Ok(data.subset(&selected))
}

/// Per-column min-max ranges fitted on one dataset and applied to others.
///
/// Only the continuous prefix is rescaled; indicator columns pass through
/// unchanged. Out-of-range values in later data are not clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    bounds: Vec<Option<(f64, f64)>>,
}

/// Fits ranges on the first `continuous_len` columns of `data`.
pub fn fit_scaler(data: &Dataset, continuous_len: usize) -> Result<Scaler, DataError> {
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    if continuous_len > data.feature_len() {
        return Err(DataError::ContinuousPrefix {
            prefix: continuous_len,
            features: data.feature_len(),
        });
    }
    let mut bounds = vec![None; data.feature_len()];
    for slot in bounds.iter_mut().take(continuous_len) {
        *slot = Some((f64::INFINITY, f64::NEG_INFINITY));
    }
    for (features, _) in data.iter() {
        for (slot, &v) in bounds.iter_mut().zip(features) {
            if let Some((lo, hi)) = slot {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
    }
    Ok(Scaler { bounds })
}

impl Scaler {
    pub fn apply_row(&self, features: &mut [f64]) -> Result<(), DataError> {
        if features.len() != self.bounds.len() {
            return Err(DataError::FeatureLength {
                expected: self.bounds.len(),
                got: features.len(),
            });
        }
        for (v, bound) in features.iter_mut().zip(&self.bounds) {
            if let Some((lo, hi)) = bound {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
            }
        }
        Ok(())
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset, DataError> {
        let mut out = data.clone();
        for row in out.features.chunks_exact_mut(out.feature_len.max(1)) {
            self.apply_row(row)?;
        }
        Ok(out)
    }
}
