use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Disjoint train/validation/test node sets covering every node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Split {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for &v in self.train.iter().chain(&self.val).chain(&self.test) {
            if v >= num_nodes {
                return Err(Error::Argument(format!("split references node {v} >= {num_nodes}")));
            }
            if seen[v] {
                return Err(Error::Argument(format!("node {v} appears in more than one split")));
            }
            seen[v] = true;
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!("node {v} is not assigned to any split")));
        }
        Ok(())
    }
}

/// Seeded random split. Sizes are `round(ratio * n)` for train and validation,
/// the remainder goes to test.
pub fn make_split(num_nodes: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::Argument(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split ratios sum to {sum}, expected 1")));
    }
    let n = num_nodes;
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::rng(seed));
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        val,
        test,
        seed,
    })
}
