use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint train/validation/test index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Seeded shuffle, then validation and test take `floor(n / 8)` rows each
/// and training keeps the rest.
pub fn split_6_1_1(n: usize, seed: u64) -> Result<SplitAssignment> {
    if n < 8 {
        return Err(Error::Data(format!(
            "need at least 8 rows to split 6:1:1, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let eighth = n / 8;
    let test = idx.split_off(n - eighth);
    let val = idx.split_off(n - 2 * eighth);
    Ok(SplitAssignment {
        train: idx,
        val,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(split_6_1_1(800, 0).unwrap().sizes(), (600, 100, 100));
        assert_eq!(split_6_1_1(801, 0).unwrap().sizes(), (601, 100, 100));
        assert_eq!(split_6_1_1(8, 3).unwrap().sizes(), (6, 1, 1));
        assert!(split_6_1_1(7, 0).is_err());
    }

    #[test]
    fn disjoint_exhaustive_deterministic() {
        let s = split_6_1_1(1000, 42).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(s, split_6_1_1(1000, 42).unwrap());
        assert_ne!(s.train, split_6_1_1(1000, 43).unwrap().train);
    }
}
