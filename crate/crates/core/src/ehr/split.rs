use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::PatientRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<PatientRecord>,
    pub val: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
}

/// Patient-level 2/3 : 1/6 : 1/6 split of a seeded shuffle. Validation
/// and test each get `max(1, n/6)` patients; the rest train.
pub fn split_dataset(records: &[PatientRecord], seed: u64) -> Result<Split> {
    let n = records.len();
    if n < 3 {
        return Err(Error::TooFewRecords { need: 3, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = (n / 6).max(1);
    let n_train = n - 2 * held;
    let take = |r: core::ops::Range<usize>| order[r].iter().map(|&i| records[i].clone()).collect();
    Ok(Split {
        train: take(0..n_train),
        val: take(n_train..n_train + held),
        test: take(n_train + held..n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::format;
    use alloc::string::String;
    use alloc::vec;

    fn patients(n: usize) -> Vec<PatientRecord> {
        (0..n).map(|i| PatientRecord { patient_id: format!("p{i}"), visits: vec![] }).collect()
    }

    fn ids(v: &[PatientRecord]) -> BTreeSet<String> {
        v.iter().map(|p| p.patient_id.clone()).collect()
    }

    #[test]
    fn six_patients() {
        let s = split_dataset(&patients(6), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (4, 1, 1));
    }

    #[test]
    fn partition_and_determinism() {
        let all = patients(50);
        let s = split_dataset(&all, 9).unwrap();
        let (a, b, c) = (ids(&s.train), ids(&s.val), ids(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        let union: BTreeSet<_> = a.union(&b).chain(c.iter()).cloned().collect();
        assert_eq!(union, ids(&all));
        assert_eq!(split_dataset(&all, 9).unwrap(), s);
        assert_ne!(split_dataset(&all, 10).unwrap(), s);
    }

    #[test]
    fn too_few() {
        assert!(split_dataset(&patients(2), 0).is_err());
        let s = split_dataset(&patients(3), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
    }
}
