//! Sparse multi-label graph: CSR adjacency over undirected edges, dense node
//! features and a binary label matrix.

mod analysis;
mod io;
mod sample;
mod split;

pub use analysis::{degree_buckets, neighbor_label_jaccard, perturb_add_edges, DegreeBuckets};
pub use io::{load_dataset, load_splits, save_dataset, save_splits, EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE};
pub use sample::{sample_block, sample_blocks, SampledBlock};
pub use split::{make_split, Split};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    features: Matrix,
    labels: Vec<u8>,
    num_labels: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Edges are symmetrized and
    /// deduplicated; self-loops are rejected.
    pub fn from_edges(
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<u8>,
        num_labels: usize,
    ) -> Result<Self> {
        let n = features.rows;
        if labels.len() != n * num_labels {
            return Err(Error::Shape(format!(
                "label matrix has {} entries, expected {} x {}",
                labels.len(),
                n,
                num_labels
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Structure(format!("label entry {bad} is not 0/1")));
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Structure(format!(
                    "edge ({u}, {v}) references a node >= n = {n}"
                )));
            }
            if u == v {
                return Err(Error::Structure(format!("self-loop on node {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(edges.len() * 2);
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            indices.extend_from_slice(list);
            offsets.push(indices.len());
        }
        Ok(Graph {
            offsets,
            indices,
            features,
            labels,
            num_labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn num_features(&self) -> usize {
        self.features.cols
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes()).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Binary label row of node `v`.
    pub fn labels_of(&self, v: usize) -> &[u8] {
        &self.labels[v * self.num_labels..(v + 1) * self.num_labels]
    }

    pub fn label_matrix(&self) -> &[u8] {
        &self.labels
    }

    /// Label ids carried by node `v`.
    pub fn label_set(&self, v: usize) -> Vec<usize> {
        self.labels_of(v)
            .iter()
            .enumerate()
            .filter_map(|(c, &y)| (y == 1).then_some(c))
            .collect()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in CSR order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Same node data, different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Graph> {
        Graph::from_edges(edges, self.features.clone(), self.labels.clone(), self.num_labels)
    }

    /// Checks the CSR invariants. Construction guarantees them; this exists for
    /// graphs that were mutated or deserialized by other means.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.offsets.len() != n + 1 || self.offsets[0] != 0 {
            return Err(Error::Structure("row offsets have the wrong length".into()));
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Structure("row offsets are decreasing".into()));
        }
        if *self.offsets.last().unwrap() != self.indices.len() {
            return Err(Error::Structure("final offset does not match index count".into()));
        }
        for u in 0..n {
            let nb = self.neighbors(u);
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Structure(format!("neighbors of {u} unsorted or duplicated")));
            }
            for &v in nb {
                if v >= n || v == u {
                    return Err(Error::Structure(format!("bad column index {v} in row {u}")));
                }
                if !self.has_edge(v, u) {
                    return Err(Error::Structure(format!("edge ({u}, {v}) has no reverse")));
                }
            }
        }
        Ok(())
    }

    /// Logs a warning for every listed node without a positive label.
    pub fn warn_unlabeled(&self, nodes: &[usize]) -> usize {
        let mut count = 0;
        for &v in nodes {
            if self.labels_of(v).iter().all(|&y| y == 0) {
                count += 1;
            }
        }
        if count > 0 {
            log::warn!("{count} node(s) carry no positive label");
        }
        count
    }
}
