use std::collections::HashMap;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;

/// One hop of a sampled mini-batch subgraph.
///
/// Local ids index into `nodes`; the first `num_targets` local ids are the
/// targets, in the order they were requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBlock {
    nodes: Vec<usize>,
    num_targets: usize,
    offsets: Vec<usize>,
    candidates: Vec<usize>,
    local: HashMap<usize, usize>,
}

impl SampledBlock {
    /// Global ids of every node the block touches (targets first).
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn num_targets(&self) -> usize {
        self.num_targets
    }

    pub fn targets(&self) -> &[usize] {
        &self.nodes[..self.num_targets]
    }

    /// Local ids of the neighbor candidates of the `t`-th target.
    pub fn candidates(&self, t: usize) -> &[usize] {
        &self.candidates[self.offsets[t]..self.offsets[t + 1]]
    }

    pub fn num_candidate_edges(&self) -> usize {
        self.candidates.len()
    }

    pub fn local_id(&self, global: usize) -> Option<usize> {
        self.local.get(&global).copied()
    }

    pub fn global_id(&self, local: usize) -> usize {
        self.nodes[local]
    }
}

/// Samples up to `fanout` distinct neighbors per target, uniformly without
/// replacement. Targets with degree at most `fanout` keep their full
/// neighborhood. Isolated targets get an empty list.
pub fn sample_block(graph: &Graph, targets: &[usize], fanout: usize, seed: u64) -> Result<SampledBlock> {
    if fanout == 0 {
        return Err(Error::Argument("fanout must be at least 1".into()));
    }
    let n = graph.num_nodes();
    let mut nodes = Vec::with_capacity(targets.len());
    let mut local = HashMap::with_capacity(targets.len() * 2);
    for &t in targets {
        if t >= n {
            return Err(Error::Argument(format!("target {t} out of range (n = {n})")));
        }
        if local.insert(t, nodes.len()).is_some() {
            return Err(Error::Argument(format!("target {t} listed twice")));
        }
        nodes.push(t);
    }
    let num_targets = nodes.len();

    let mut rng = rng::rng(seed);
    let mut offsets = Vec::with_capacity(num_targets + 1);
    let mut candidates = Vec::new();
    offsets.push(0);
    for ti in 0..num_targets {
        let nb = graph.neighbors(nodes[ti]);
        let mut push = |g: usize, nodes: &mut Vec<usize>| {
            let id = *local.entry(g).or_insert_with(|| {
                nodes.push(g);
                nodes.len() - 1
            });
            candidates.push(id);
        };
        if nb.len() <= fanout {
            for &g in nb {
                push(g, &mut nodes);
            }
        } else {
            let mut picked = rand::seq::index::sample(&mut rng, nb.len(), fanout).into_vec();
            picked.sort_unstable();
            for i in picked {
                push(nb[i], &mut nodes);
            }
        }
        offsets.push(candidates.len());
    }
    Ok(SampledBlock {
        nodes,
        num_targets,
        offsets,
        candidates,
        local,
    })
}

/// Multi-hop sampling for `layers` rounds of message passing. The returned
/// blocks run from the input layer to the output layer, chained so that
/// `blocks[l].targets() == blocks[l + 1].nodes()`.
pub fn sample_blocks(
    graph: &Graph,
    targets: &[usize],
    fanout: usize,
    layers: usize,
    seed: u64,
) -> Result<Vec<SampledBlock>> {
    let mut blocks = Vec::with_capacity(layers);
    let mut frontier = targets.to_vec();
    for hop in 0..layers {
        let block = sample_block(graph, &frontier, fanout, rng::derive(seed, &[hop as u64]))?;
        frontier = block.nodes().to_vec();
        blocks.push(block);
    }
    blocks.reverse();
    Ok(blocks)
}
