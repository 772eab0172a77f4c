//! Planted-community multi-label graphs for tests and benchmarks.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::rng;

/// Parameters of the planted generator.
///
/// Every community owns `labels_per_community` labels. The first
/// `round(overlap * labels_per_community)` of them are shared by all
/// communities, the rest are private, so the label count is
/// `shared + communities * (labels_per_community - shared)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGraphSpec {
    pub nodes: usize,
    pub communities: usize,
    pub labels_per_community: usize,
    pub overlap: f64,
    /// Standard deviation of the Gaussian noise added to the one-hot features.
    pub feature_noise: f64,
    /// Probability that a node drops each of its community's labels.
    pub label_dropout: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    pub seed: u64,
}

impl Default for SyntheticGraphSpec {
    fn default() -> Self {
        SyntheticGraphSpec {
            nodes: 500,
            communities: 4,
            labels_per_community: 4,
            overlap: 0.3,
            feature_noise: 1.0,
            label_dropout: 0.2,
            p_intra: 0.08,
            p_inter: 0.01,
            seed: 11,
        }
    }
}

impl SyntheticGraphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.communities < 2 {
            return Err(Error::Argument("at least 2 communities required".into()));
        }
        if self.nodes == 0 || self.labels_per_community == 0 {
            return Err(Error::Argument("nodes and labels_per_community must be positive".into()));
        }
        for (name, p) in [
            ("overlap", self.overlap),
            ("label_dropout", self.label_dropout),
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if !(self.feature_noise >= 0.0) || !self.feature_noise.is_finite() {
            return Err(Error::Argument("feature_noise must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn shared_labels(&self) -> usize {
        (self.overlap * self.labels_per_community as f64).round() as usize
    }

    pub fn num_labels(&self) -> usize {
        let s = self.shared_labels();
        s + self.communities * (self.labels_per_community - s)
    }

    /// Label ids owned by community `c`.
    pub fn community_labels(&self, c: usize) -> Vec<usize> {
        let s = self.shared_labels();
        let private = self.labels_per_community - s;
        (0..s).chain((0..private).map(|j| s + c * private + j)).collect()
    }

    pub fn community_of(&self, v: usize) -> usize {
        v % self.communities
    }
}

pub fn make_synthetic_graph(spec: &SyntheticGraphSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.nodes;
    let k = spec.communities;
    let c = spec.num_labels();

    let mut r = rng::rng(rng::derive(spec.seed, &[0]));
    let mut labels = vec![0u8; n * c];
    for v in 0..n {
        for l in spec.community_labels(spec.community_of(v)) {
            if spec.label_dropout == 0.0 || !r.random_bool(spec.label_dropout) {
                labels[v * c + l] = 1;
            }
        }
    }

    let mut r = rng::rng(rng::derive(spec.seed, &[1]));
    let noise = Normal::new(0.0, spec.feature_noise).expect("validated noise level");
    let mut features = Matrix::zeros(n, k);
    for v in 0..n {
        for j in 0..k {
            let base = if spec.community_of(v) == j { 1.0 } else { 0.0 };
            features.set(v, j, base + noise.sample(&mut r));
        }
    }

    let mut r = rng::rng(rng::derive(spec.seed, &[2]));
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if spec.community_of(u) == spec.community_of(v) {
                spec.p_intra
            } else {
                spec.p_inter
            };
            if r.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(&edges, features, labels, c)
}
