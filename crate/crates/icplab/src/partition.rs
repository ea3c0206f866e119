//! Index-level splits of a pool into test, training, and calibration roles.
//!
//! All three strategies first draw the test set, then assign the remaining
//! roles, each draw uniform without replacement:
//!
//! * [`split_disjoint`]: train and calibration partition the non-test
//!   remainder, no overlap.
//! * [`split_equal_with_overlap`]: train and calibration have equal sizes and
//!   share a fixed number of examples; leftovers are discarded.
//! * [`split_shared_pool`]: a working pool is drawn, a shared block goes into
//!   both sets, and the rest of the pool is split evenly between them.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("{role} size must be at least 1")]
    EmptyRole { role: &'static str },
    #[error("need {needed} examples but pool has {available}")]
    TooFewExamples { needed: usize, available: usize },
    #[error("overlap {overlap} exceeds set size {set_size}")]
    OverlapExceedsSet { overlap: usize, set_size: usize },
    #[error("pool {pool} minus shared {shared} must be even to split in half")]
    OddRemainder { pool: usize, shared: usize },
    #[error("shared block {shared} exceeds pool {pool}")]
    SharedExceedsPool { shared: usize, pool: usize },
}

/// Row indices for one experimental split. Each list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    /// Indices present in both train and calibration.
    pub fn shared(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.train.len() && j < self.calibration.len() {
            match self.train[i].cmp(&self.calibration[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.train[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }

    pub fn overlap_count(&self) -> usize {
        self.shared().len()
    }

    /// `index,role` rows, sorted by index; shared rows get role `both`.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(usize, &'static str)> =
            self.test.iter().map(|&i| (i, "test")).collect();
        let shared = self.shared();
        for &i in &self.train {
            let role = if shared.binary_search(&i).is_ok() {
                "both"
            } else {
                "train"
            };
            rows.push((i, role));
        }
        for &i in &self.calibration {
            if shared.binary_search(&i).is_err() {
                rows.push((i, "cal"));
            }
        }
        rows.sort_unstable();
        let mut out = String::from("index,role\n");
        use std::fmt::Write as _;
        for (i, role) in rows {
            let _ = writeln!(out, "{i},{role}");
        }
        out
    }
}

fn shuffled_indices(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    indices
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn check_roles(test_size: usize, others: &[(&'static str, usize)]) -> Result<(), PartitionError> {
    if test_size == 0 {
        return Err(PartitionError::EmptyRole { role: "test" });
    }
    for &(role, size) in others {
        if size == 0 {
            return Err(PartitionError::EmptyRole { role });
        }
    }
    Ok(())
}

/// Disjoint split: test first, then `train_size` training examples; whatever
/// remains is the calibration set.
pub fn split_disjoint(
    n: usize,
    test_size: usize,
    train_size: usize,
    rng: &mut impl Rng,
) -> Result<Partition, PartitionError> {
    check_roles(test_size, &[("train", train_size)])?;
    let needed = test_size + train_size + 1;
    if needed > n {
        return Err(PartitionError::TooFewExamples {
            needed,
            available: n,
        });
    }
    let indices = shuffled_indices(n, rng);
    Ok(Partition {
        test: sorted(indices[..test_size].to_vec()),
        train: sorted(indices[test_size..test_size + train_size].to_vec()),
        calibration: sorted(indices[test_size + train_size..].to_vec()),
    })
}

/// Equal-size train and calibration sets sharing exactly `overlap` examples;
/// non-test examples beyond the two sets are discarded.
pub fn split_equal_with_overlap(
    n: usize,
    test_size: usize,
    set_size: usize,
    overlap: usize,
    rng: &mut impl Rng,
) -> Result<Partition, PartitionError> {
    check_roles(test_size, &[("train", set_size)])?;
    if overlap > set_size {
        return Err(PartitionError::OverlapExceedsSet { overlap, set_size });
    }
    let needed = test_size + 2 * set_size - overlap;
    if needed > n {
        return Err(PartitionError::TooFewExamples {
            needed,
            available: n,
        });
    }
    let indices = shuffled_indices(n, rng);
    let mut at = test_size;
    let test = indices[..at].to_vec();
    let shared = &indices[at..at + overlap];
    at += overlap;
    let own = set_size - overlap;
    let train_only = &indices[at..at + own];
    at += own;
    let cal_only = &indices[at..at + own];
    Ok(Partition {
        test: sorted(test),
        train: sorted([shared, train_only].concat()),
        calibration: sorted([shared, cal_only].concat()),
    })
}

/// Draws a working pool of `pool` examples, places a `shared` block in both
/// sets, and splits the remaining pool examples evenly between them.
pub fn split_shared_pool(
    n: usize,
    test_size: usize,
    pool: usize,
    shared: usize,
    rng: &mut impl Rng,
) -> Result<Partition, PartitionError> {
    check_roles(test_size, &[("pool", pool)])?;
    if shared > pool {
        return Err(PartitionError::SharedExceedsPool { shared, pool });
    }
    if !(pool - shared).is_multiple_of(2) {
        return Err(PartitionError::OddRemainder { pool, shared });
    }
    let needed = test_size + pool;
    if needed > n {
        return Err(PartitionError::TooFewExamples {
            needed,
            available: n,
        });
    }
    let indices = shuffled_indices(n, rng);
    let test = indices[..test_size].to_vec();
    let shared_block = &indices[test_size..test_size + shared];
    let half = (pool - shared) / 2;
    let train_own = &indices[test_size + shared..test_size + shared + half];
    let cal_own = &indices[test_size + shared + half..test_size + pool];
    Ok(Partition {
        test: sorted(test),
        train: sorted([shared_block, train_own].concat()),
        calibration: sorted([shared_block, cal_own].concat()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn as_set(v: &[usize]) -> HashSet<usize> {
        v.iter().copied().collect()
    }

    fn assert_test_disjoint(p: &Partition) {
        let test = as_set(&p.test);
        assert!(p.train.iter().all(|i| !test.contains(i)));
        assert!(p.calibration.iter().all(|i| !test.contains(i)));
    }

    #[test]
    fn disjoint_split_uses_remainder_for_calibration() {
        let p = split_disjoint(19229, 5329, 13400, &mut rng(1)).unwrap();
        assert_eq!(p.test.len(), 5329);
        assert_eq!(p.train.len(), 13400);
        assert_eq!(p.calibration.len(), 500);
        assert_eq!(p.overlap_count(), 0);
        assert_test_disjoint(&p);

        let p = split_disjoint(19229, 5329, 500, &mut rng(2)).unwrap();
        assert_eq!(p.calibration.len(), 13400);
    }

    #[test]
    fn disjoint_split_small_case_covers_everything() {
        let p = split_disjoint(10, 4, 3, &mut rng(3)).unwrap();
        assert_eq!(p.calibration.len(), 3);
        let mut all: Vec<usize> = p
            .test
            .iter()
            .chain(&p.train)
            .chain(&p.calibration)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn disjoint_split_needs_room_for_calibration() {
        assert!(matches!(
            split_disjoint(10, 4, 6, &mut rng(0)).unwrap_err(),
            PartitionError::TooFewExamples { needed: 11, available: 10 }
        ));
        assert!(matches!(
            split_disjoint(10, 0, 3, &mut rng(0)).unwrap_err(),
            PartitionError::EmptyRole { role: "test" }
        ));
    }

    #[test]
    fn equal_overlap_split_with_full_overlap_gives_identical_sets() {
        let p = split_equal_with_overlap(19229, 5329, 250, 250, &mut rng(4)).unwrap();
        assert_eq!(p.train, p.calibration);
        assert_eq!(p.train.len(), 250);
        assert_eq!(p.overlap_count(), 250);
        assert_test_disjoint(&p);
    }

    #[test]
    fn equal_overlap_split_keeps_exact_overlap() {
        let p = split_equal_with_overlap(19229, 5329, 6500, 250, &mut rng(5)).unwrap();
        assert_eq!(p.train.len(), 6500);
        assert_eq!(p.calibration.len(), 6500);
        assert_eq!(p.overlap_count(), 250);
        let union: HashSet<usize> = p.train.iter().chain(&p.calibration).copied().collect();
        assert_eq!(union.len(), 12750);
        assert_test_disjoint(&p);
    }

    #[test]
    fn equal_overlap_split_zero_overlap_is_disjoint() {
        let p = split_equal_with_overlap(100, 10, 30, 0, &mut rng(6)).unwrap();
        assert_eq!(p.overlap_count(), 0);
        assert_eq!(p.train.len(), 30);
        assert_eq!(p.calibration.len(), 30);
    }

    #[test]
    fn equal_overlap_split_validates_inputs() {
        assert!(matches!(
            split_equal_with_overlap(100, 10, 30, 31, &mut rng(0)).unwrap_err(),
            PartitionError::OverlapExceedsSet { .. }
        ));
        // needs 10 + 2*50 - 0 = 110
        assert!(matches!(
            split_equal_with_overlap(100, 10, 50, 0, &mut rng(0)).unwrap_err(),
            PartitionError::TooFewExamples { needed: 110, .. }
        ));
    }

    #[test]
    fn shared_pool_split_sizes_follow_shared_block() {
        // no sharing: two halves of 1000
        let p = split_shared_pool(19229, 5329, 2000, 0, &mut rng(7)).unwrap();
        assert_eq!(p.train.len(), 1000);
        assert_eq!(p.calibration.len(), 1000);
        assert_eq!(p.overlap_count(), 0);

        // half shared: 1500 each
        let p = split_shared_pool(19229, 5329, 2000, 1000, &mut rng(8)).unwrap();
        assert_eq!(p.train.len(), 1500);
        assert_eq!(p.calibration.len(), 1500);
        assert_eq!(p.overlap_count(), 1000);
        assert_test_disjoint(&p);

        // fully shared: identical sets
        let p = split_shared_pool(19229, 5329, 2000, 2000, &mut rng(9)).unwrap();
        assert_eq!(p.train, p.calibration);
        assert_eq!(p.train.len(), 2000);
    }

    #[test]
    fn shared_pool_split_validates_inputs() {
        assert!(matches!(
            split_shared_pool(100, 10, 20, 5, &mut rng(0)).unwrap_err(),
            PartitionError::OddRemainder { pool: 20, shared: 5 }
        ));
        assert!(matches!(
            split_shared_pool(100, 10, 20, 30, &mut rng(0)).unwrap_err(),
            PartitionError::SharedExceedsPool { .. }
        ));
        assert!(matches!(
            split_shared_pool(25, 10, 20, 0, &mut rng(0)).unwrap_err(),
            PartitionError::TooFewExamples { needed: 30, .. }
        ));
    }

    #[test]
    fn splits_are_deterministic_per_seed() {
        let a = split_disjoint(50, 10, 20, &mut rng(11)).unwrap();
        let b = split_disjoint(50, 10, 20, &mut rng(11)).unwrap();
        let c = split_disjoint(50, 10, 20, &mut rng(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn test_membership_frequency_is_roughly_uniform() {
        // Index 0 should land in the test set with probability 4/10.
        let trials = 4000;
        let mut hits = 0;
        for seed in 0..trials {
            let p = split_disjoint(10, 4, 3, &mut rng(seed)).unwrap();
            if p.test.binary_search(&0).is_ok() {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        // 4 sigma of a Bernoulli(0.4) mean over 4000 trials
        let tolerance = 4.0 * (0.4f64 * 0.6 / trials as f64).sqrt();
        assert!((freq - 0.4).abs() < tolerance, "freq {freq}");
    }

    #[test]
    fn csv_marks_roles_and_shared_rows() {
        let p = Partition {
            train: vec![1, 3, 5],
            calibration: vec![3, 6],
            test: vec![0, 2],
        };
        let expected = "index,role\n0,test\n1,train\n2,test\n3,both\n5,train\n6,cal\n";
        assert_eq!(p.to_csv(), expected);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn disjoint_split_partitions_cleanly(
                seed in any::<u64>(),
                n in 6usize..120,
                test_frac in 0.1f64..0.5,
                train_frac in 0.1f64..0.5,
            ) {
                let test_size = ((n as f64 * test_frac) as usize).max(1);
                let train_size = ((n as f64 * train_frac) as usize).max(1);
                prop_assume!(test_size + train_size < n);
                let p = split_disjoint(n, test_size, train_size, &mut rng(seed)).unwrap();
                prop_assert_eq!(p.test.len(), test_size);
                prop_assert_eq!(p.train.len(), train_size);
                prop_assert_eq!(p.calibration.len(), n - test_size - train_size);
                prop_assert_eq!(p.overlap_count(), 0);
                let mut all: Vec<usize> = p.test.iter()
                    .chain(&p.train)
                    .chain(&p.calibration)
                    .copied()
                    .collect();
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), n);
            }

            #[test]
            fn overlap_split_honors_requested_overlap(
                seed in any::<u64>(),
                set_size in 1usize..30,
                overlap_frac in 0.0f64..=1.0,
            ) {
                let overlap = (set_size as f64 * overlap_frac) as usize;
                let n = 2 * set_size + 10;
                let p = split_equal_with_overlap(n, 5, set_size, overlap, &mut rng(seed)).unwrap();
                prop_assert_eq!(p.overlap_count(), overlap);
                prop_assert_eq!(p.train.len(), set_size);
                prop_assert_eq!(p.calibration.len(), set_size);
            }

            #[test]
            fn shared_pool_split_sizes_add_up(
                seed in any::<u64>(),
                half in 1usize..20,
                shared_half in 0usize..20,
            ) {
                let shared = 2 * shared_half;
                let pool = 2 * half + shared;
                let n = pool + 8;
                let p = split_shared_pool(n, 8, pool, shared, &mut rng(seed)).unwrap();
                prop_assert_eq!(p.train.len(), shared + half);
                prop_assert_eq!(p.calibration.len(), shared + half);
                prop_assert_eq!(p.overlap_count(), shared);
            }
        }
    }
}
