use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of items to `k` cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Items of fold `f`, sorted.
    pub fn fold(&self, f: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &a)| a == f)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Items outside fold `f`, sorted.
    pub fn complement(&self, f: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &a)| a != f)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

fn sorted_shuffled(items: &[String], seed: u64) -> Vec<String> {
    let mut sorted = items.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    sorted
}

/// Seeded train/test partition with `|train| = round(fraction * N)`.
pub fn split_train_test(items: &[String], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} is outside (0, 1)")));
    }
    if items.is_empty() {
        return Err(Error::Config("cannot split an empty item list".into()));
    }
    let shuffled = sorted_shuffled(items, seed);
    let n_train = (fraction * shuffled.len() as f64).round() as usize;
    let mut train = shuffled;
    let test = train.split_off(n_train);
    Ok((train, test))
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("{n} items cannot fill {k} folds")));
    }
    Ok(())
}

/// Balanced seeded fold assignment.
pub fn make_folds(items: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    check_k(items.len(), k)?;
    let assignments = sorted_shuffled(items, seed)
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i % k))
        .collect();
    Ok(FoldPlan { k, seed, assignments })
}

/// Fold assignment balanced overall and within every stratum.
///
/// Strata are visited in key order; each is shuffled and dealt round-robin,
/// continuing from where the previous stratum stopped.
pub fn make_stratified_folds(items: &[(String, String)], k: usize, seed: u64) -> Result<FoldPlan> {
    check_k(items.len(), k)?;
    let mut strata: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (id, stratum) in items {
        strata.entry(stratum.as_str()).or_default().push(id.clone());
    }
    let mut assignments = BTreeMap::new();
    let mut next = 0usize;
    for (i, ids) in strata.values().enumerate() {
        for id in sorted_shuffled(ids, seed.wrapping_add(i as u64)) {
            assignments.insert(id, next % k);
            next += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}
