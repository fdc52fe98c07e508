use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train_ids.len(), self.val_ids.len(), self.test_ids.len()]
    }
}

/// Largest-remainder apportionment of `n` items. Equal remainders favour
/// the later partition.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    let frac = |i: usize| quotas[i] - sizes[i] as f64;
    order.sort_by(|&a, &b| {
        let (fa, fb) = (frac(a), frac(b));
        if (fa - fb).abs() <= 1e-9 {
            b.cmp(&a)
        } else {
            fb.total_cmp(&fa)
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

fn check_ids(ids: &[String]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Validation("cannot split an empty id list".into()));
    }
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("duplicate subject id {:?}", w[0])));
    }
    Ok(())
}

/// Seeded shuffle followed by a largest-remainder partition by `ratios`
/// (train, val, test).
pub fn split_dataset(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    check_ids(ids)?;
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Validation(format!("split ratios must be non-negative, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("split ratios sum to {total}, expected 1")));
    }
    let sizes = largest_remainder(ids.len(), &ratios);
    partition(ids, [sizes[0], sizes[1], sizes[2]], seed)
}

/// Same shuffle as [`split_dataset`], with explicit partition sizes.
pub fn split_with_sizes(ids: &[String], sizes: [usize; 3], seed: u64) -> Result<DatasetSplit> {
    check_ids(ids)?;
    if sizes.iter().sum::<usize>() != ids.len() {
        return Err(Error::Validation(format!(
            "split sizes {sizes:?} do not add up to {} ids",
            ids.len()
        )));
    }
    partition(ids, sizes, seed)
}

fn partition(ids: &[String], sizes: [usize; 3], seed: u64) -> Result<DatasetSplit> {
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng::seeded(seed));
    let test_ids = shuffled.split_off(sizes[0] + sizes[1]);
    let val_ids = shuffled.split_off(sizes[0]);
    Ok(DatasetSplit {
        train_ids: shuffled,
        val_ids,
        test_ids,
        seed,
    })
}
