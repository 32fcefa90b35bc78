//! Latin hypercube sampling and cross-validation splits.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// `n` points in `[0, 1)^dims` with exactly one point per 1/n stratum in
/// every dimension.
pub fn latin_hypercube(rng: &mut Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for _ in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut strata);
        columns.push(
            strata
                .into_iter()
                .map(|s| (s as f64 + rng.uniform()) / n as f64)
                .collect(),
        );
    }
    (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect()
}

/// One train/validation/test partition of item ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Ten independent shuffled splits of one dataset's items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub entries: Vec<SplitEntry>,
    pub seed: u64,
}

/// Shuffles the item list and cuts it into (train, validation, test) of the
/// given sizes, ten times with independent shuffles. Deterministic per seed.
pub fn make_splits(item_ids: &[String], counts: (usize, usize, usize), seed: u64) -> Result<SplitSet> {
    let (tr, va, te) = counts;
    if tr + va + te != item_ids.len() {
        return Err(Error::Config(alloc::format!(
            "split sizes {}+{}+{} do not cover {} items",
            tr,
            va,
            te,
            item_ids.len()
        )));
    }
    let root = Rng::seed_from(seed);
    let entries = (0..10)
        .map(|entry| {
            let mut rng = root.derive(entry as u64);
            let mut ids = item_ids.to_vec();
            rng.shuffle(&mut ids);
            let test = ids.split_off(tr + va);
            let validation = ids.split_off(tr);
            SplitEntry {
                train: ids,
                validation,
                test,
            }
        })
        .collect();
    Ok(SplitSet { entries, seed })
}
