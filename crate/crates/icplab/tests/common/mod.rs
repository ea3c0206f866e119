//! Shared fixtures for the integration suites: a deterministic synthetic
//! stand-in for the forest-cover data (same 54-column schema, class signal
//! strong enough to learn but far from separable), file writers for it, and
//! a handle on the compiled binary.
//!
//! When `ICPLAB_DATA` points at an existing file, the full-scale fixture
//! defers to it so the suites can run against the real data instead.

// Each integration target compiles its own copy and uses a subset.
#![allow(dead_code)]

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use icplab::data::{Dataset, Example, COVTYPE_CLASSES, COVTYPE_FEATURES};

/// Class totals of the real 581012-row forest-cover file.
pub const REAL_CLASS_COUNTS: [usize; 7] = [211840, 283301, 35754, 2747, 9493, 17367, 20510];

fn clamped_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let draw = Normal::new(mean, sd).unwrap().sample(rng);
    draw.clamp(lo, hi).round()
}

/// One synthetic record: 10 integer-valued continuous columns whose means
/// drift with the label, a wilderness block of 4 indicators, and a soil
/// block of 40 indicators, both tilted toward label-dependent positions.
pub fn synth_features(label: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let l = label as f64;
    let mut features = Vec::with_capacity(COVTYPE_FEATURES);
    features.push(clamped_normal(rng, 2000.0 + 160.0 * l, 200.0, 0.0, 4200.0));
    features.push(rng.gen_range(0.0_f64..360.0).round());
    features.push(clamped_normal(rng, 14.0 + 2.0 * l, 7.0, 0.0, 66.0));
    features.push(clamped_normal(rng, 230.0 + 25.0 * l, 180.0, 0.0, 1500.0));
    features.push(clamped_normal(rng, 40.0 + 10.0 * l, 55.0, -170.0, 600.0));
    features.push(clamped_normal(rng, 2600.0 - 180.0 * l, 1400.0, 0.0, 7100.0));
    features.push(clamped_normal(rng, 212.0, 26.0, 0.0, 254.0));
    features.push(clamped_normal(rng, 223.0, 19.0, 0.0, 254.0));
    features.push(clamped_normal(rng, 142.0 + 3.0 * l, 36.0, 0.0, 254.0));
    features.push(clamped_normal(rng, 2100.0 - 120.0 * l, 1200.0, 0.0, 7200.0));

    let wilderness = if rng.gen_bool(0.5) {
        label % 4
    } else {
        rng.gen_range(0..4)
    };
    for i in 0..4 {
        features.push(if i == wilderness { 1.0 } else { 0.0 });
    }

    let soil = if rng.gen_bool(0.4) {
        rng.gen_range(5 * label..5 * label + 5)
    } else {
        rng.gen_range(0..40)
    };
    for i in 0..40 {
        features.push(if i == soil { 1.0 } else { 0.0 });
    }
    features
}

/// An in-memory dataset with exactly `per_class` examples of each class.
pub fn synthetic_dataset(per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::new(COVTYPE_FEATURES, COVTYPE_CLASSES);
    for label in 0..COVTYPE_CLASSES {
        for _ in 0..per_class {
            data.push(Example {
                features: synth_features(label, &mut rng),
                label,
            })
            .unwrap();
        }
    }
    data
}

/// Streams `counts[c]` synthetic records of each class to `path` in the raw
/// 55-column format (features, then the 1-based label).
pub fn write_covtype_file(path: &Path, counts: &[usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BufWriter::new(File::create(path).unwrap());
    let mut line = String::with_capacity(160);
    for (label, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            line.clear();
            for v in synth_features(label, &mut rng) {
                line.push_str(&format!("{v}"));
                line.push(',');
            }
            line.push_str(&format!("{}", label + 1));
            line.push('\n');
            out.write_all(line.as_bytes()).unwrap();
        }
    }
    out.flush().unwrap();
}

/// A small on-disk raw file with `per_class` records of each class.
pub fn small_raw_file(dir: &Path, per_class: usize, seed: u64) -> PathBuf {
    let path = dir.join("raw_small.data");
    write_covtype_file(&path, &[per_class; COVTYPE_CLASSES], seed);
    path
}

/// The full-scale raw file: the real one if `ICPLAB_DATA` names an existing
/// file, otherwise a cached synthetic file with the real class totals.
pub fn full_scale_path() -> PathBuf {
    if let Ok(p) = std::env::var("ICPLAB_DATA") {
        let path = PathBuf::from(p);
        if path.exists() {
            return path;
        }
    }
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("covtype_synthetic.data");
    if path.exists() {
        return path;
    }
    // build under a process-unique name, then rename; a concurrent builder
    // produces identical bytes, so whichever rename lands last is harmless
    let tmp = dir.join(format!("covtype_synthetic.data.{}", std::process::id()));
    write_covtype_file(&tmp, &REAL_CLASS_COUNTS, 77);
    std::fs::rename(&tmp, &path).unwrap();
    path
}

/// The compiled command-line binary.
pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_icplab"))
}
