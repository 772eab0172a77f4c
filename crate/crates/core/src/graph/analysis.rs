//! Structural analyses for robustness studies: neighbor-label agreement,
//! random edge injection and degree grouping.

use std::collections::HashSet;

use rand::Rng as _;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;

fn jaccard(a: &[u8], b: &[u8]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        // two empty label sets agree perfectly
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean Jaccard similarity between each node's label set and each neighbor's.
/// Isolated nodes score 0.
pub fn neighbor_label_jaccard(graph: &Graph) -> Vec<f64> {
    (0..graph.num_nodes())
        .map(|v| {
            let nb = graph.neighbors(v);
            if nb.is_empty() {
                return 0.0;
            }
            let lv = graph.labels_of(v);
            nb.iter().map(|&u| jaccard(lv, graph.labels_of(u))).sum::<f64>() / nb.len() as f64
        })
        .collect()
}

/// Returns a copy of `graph` with `floor(proportion * m)` extra undirected
/// edges drawn uniformly from the non-edges. Original edges are kept.
pub fn perturb_add_edges(graph: &Graph, proportion: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::Argument(format!("proportion {proportion} outside [0, 1]")));
    }
    let n = graph.num_nodes();
    let m = graph.num_edges();
    let wanted = (proportion * m as f64).floor() as usize;
    if wanted == 0 {
        return Ok(graph.clone());
    }
    let capacity = n * n.saturating_sub(1) / 2 - m;
    if wanted > capacity {
        return Err(Error::Capacity(format!(
            "cannot add {wanted} edges: only {capacity} non-edges remain"
        )));
    }
    let mut rng = rng::rng(seed);
    let mut edges = graph.edge_list();
    let mut added: HashSet<(usize, usize)> = HashSet::with_capacity(wanted);
    if wanted * 2 <= capacity {
        while added.len() < wanted {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if graph.has_edge(key.0, key.1) || !added.insert(key) {
                continue;
            }
            edges.push(key);
        }
    } else {
        // dense regime: enumerate the complement instead of rejecting
        let mut pool = Vec::with_capacity(capacity);
        for u in 0..n {
            for v in u + 1..n {
                if !graph.has_edge(u, v) {
                    pool.push((u, v));
                }
            }
        }
        let picked = rand::seq::index::sample(&mut rng, pool.len(), wanted);
        edges.extend(picked.iter().map(|i| pool[i]));
    }
    graph.with_edges(&edges)
}

/// Nodes grouped by degree into half-open buckets `[edges[i], edges[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeBuckets {
    pub edges: Vec<f64>,
    pub degrees: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

impl DegreeBuckets {
    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

pub fn degree_buckets(graph: &Graph, edges: &[f64]) -> Result<DegreeBuckets> {
    if edges.len() < 2 {
        return Err(Error::Argument("need at least two bucket edges".into()));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Argument("bucket edges must be strictly increasing".into()));
    }
    let degrees: Vec<usize> = (0..graph.num_nodes()).map(|v| graph.degree(v)).collect();
    let max = degrees.iter().copied().max().unwrap_or(0) as f64;
    if edges[0] > 0.0 || *edges.last().unwrap() <= max {
        return Err(Error::Argument(format!(
            "bucket edges {edges:?} do not cover degrees [0, {max}]"
        )));
    }
    let mut members = vec![Vec::new(); edges.len() - 1];
    for (v, &d) in degrees.iter().enumerate() {
        let d = d as f64;
        let b = edges.windows(2).position(|w| w[0] <= d && d < w[1]).unwrap();
        members[b].push(v);
    }
    Ok(DegreeBuckets {
        edges: edges.to_vec(),
        degrees,
        members,
    })
}
