//! Patient-level cross-validation splits.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// One fold: pairwise-disjoint patient-id lists.
///
/// `validation` and `test` together form the fold's held-out group; every
/// remaining patient trains. Whole patients move between lists, so regions
/// of one subject can never straddle a split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffle patients by `seed` and cut `k` near-equal held-out groups, each
/// halved into validation and test (validation takes the floor on odd
/// sizes). Requires at least `2k` patients so both halves are nonempty.
pub fn make_folds(patients: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config(format!("cv.folds must be at least 2, got {k}")));
    }
    let mut seen = HashSet::new();
    for id in patients {
        if !seen.insert(id.as_str()) {
            return Err(Error::Config(format!("duplicate patient id '{id}'")));
        }
    }
    let n = patients.len();
    if n < 2 * k {
        return Err(Error::Config(format!(
            "cv.folds = {k} needs at least {} patients, got {n}",
            2 * k
        )));
    }

    let mut order = patients.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // The first n % k groups absorb the remainder, one patient each.
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let group = &order[start..start + size];
        let half = size / 2;
        let train: Vec<String> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .cloned()
            .collect();
        folds.push(FoldSplit {
            fold,
            train,
            validation: group[..half].to_vec(),
            test: group[half..].to_vec(),
        });
        start += size;
    }
    Ok(folds)
}
