use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{AibMode, LayerVars, Mode, MlpVars, PriorVars, PseudoActivation, VAR_FLOOR};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::SampledBlock;
use crate::rng;

/// `z_p = act(MLP(z_x)) · D_L`: a per-node weighting of label embeddings.
pub fn pseudo_label(
    tape: &mut Tape,
    z_x: Tensor,
    dictionary: Tensor,
    mlp: &MlpVars,
    activation: PseudoActivation,
) -> Result<Tensor> {
    if mlp.w1.rows() != z_x.cols() {
        return Err(Error::Argument(format!(
            "pseudo-label MLP expects inputs of width {}, got {}",
            mlp.w1.rows(),
            z_x.cols()
        )));
    }
    if mlp.w2.cols() != dictionary.rows() {
        return Err(Error::Argument(format!(
            "pseudo-label MLP emits {} label scores but the dictionary has {} labels",
            mlp.w2.cols(),
            dictionary.rows()
        )));
    }
    let scores = mlp.forward(tape, z_x);
    let weights = match activation {
        PseudoActivation::None => scores,
        PseudoActivation::Sigmoid => tape.sigmoid(scores),
        PseudoActivation::Softmax => tape.softmax_rows(scores),
    };
    Ok(tape.matmul(weights, dictionary))
}

/// Candidate edges of a block grouped by target. Targets without candidates
/// have no segment; segment ids are contiguous over the remaining targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEdges {
    pub num_targets: usize,
    /// Local id of the target of each edge.
    pub target: Vec<usize>,
    /// Local id of the candidate neighbor of each edge.
    pub candidate: Vec<usize>,
    pub segment: Vec<usize>,
    /// Target local id of each segment.
    pub segment_target: Vec<usize>,
    /// Edges of segment `s` are `segment_offsets[s]..segment_offsets[s + 1]`.
    pub segment_offsets: Vec<usize>,
}

impl CandidateEdges {
    pub fn num_edges(&self) -> usize {
        self.target.len()
    }

    pub fn num_segments(&self) -> usize {
        self.segment_target.len()
    }

    pub fn segment_size(&self, s: usize) -> usize {
        self.segment_offsets[s + 1] - self.segment_offsets[s]
    }

    pub fn max_segment(&self) -> usize {
        (0..self.num_segments()).map(|s| self.segment_size(s)).max().unwrap_or(0)
    }
}

pub fn candidate_edges(block: &SampledBlock) -> CandidateEdges {
    let mut e = CandidateEdges {
        num_targets: block.num_targets(),
        target: Vec::with_capacity(block.num_candidate_edges()),
        candidate: Vec::with_capacity(block.num_candidate_edges()),
        segment: Vec::with_capacity(block.num_candidate_edges()),
        segment_target: Vec::new(),
        segment_offsets: vec![0],
    };
    for t in 0..block.num_targets() {
        let cand = block.candidates(t);
        if cand.is_empty() {
            continue;
        }
        let s = e.segment_target.len();
        for &u in cand {
            e.target.push(t);
            e.candidate.push(u);
            e.segment.push(s);
        }
        e.segment_target.push(t);
        e.segment_offsets.push(e.target.len());
    }
    e
}

/// Path scores `z_p,v · z_p,u` and their per-target softmax.
#[derive(Debug, Clone, Copy)]
pub struct PathProbabilities {
    pub scores: Tensor,
    pub probs: Tensor,
    /// Computed by a max-shifted log-sum-exp so tiny probabilities stay finite.
    pub log_probs: Tensor,
}

pub fn path_probabilities(tape: &mut Tape, z_p: Tensor, edges: &CandidateEdges) -> PathProbabilities {
    let a = tape.gather_rows(z_p, &edges.target);
    let b = tape.gather_rows(z_p, &edges.candidate);
    let scores = tape.row_dot(a, b);
    let nseg = edges.num_segments();
    let probs = tape.segment_softmax(scores, &edges.segment, nseg);

    let mut max = vec![f64::NEG_INFINITY; nseg];
    for (&s, &x) in edges.segment.iter().zip(tape.value(scores)) {
        max[s] = max[s].max(x);
    }
    let shift: Vec<f64> = edges.segment.iter().map(|&s| max[s]).collect();
    let shift = tape.from_vec(edges.num_edges(), 1, shift, false);
    let shifted = tape.sub(scores, shift);
    let e = tape.exp(shifted);
    let totals = tape.segment_sum(e, &edges.segment, nseg);
    let log_totals = tape.log(totals);
    let per_edge = tape.gather_rows(log_totals, &edges.segment);
    let log_probs = tape.sub(shifted, per_edge);
    PathProbabilities {
        scores,
        probs,
        log_probs,
    }
}

/// Path regularizer. `Verbatim` is `Σ_v Σ_u [log P(u|v) - log(1/|cand(v)|)]`,
/// `Kl` weights each term by `P(u|v)`.
pub fn aib_loss(tape: &mut Tape, p: &PathProbabilities, edges: &CandidateEdges, mode: AibMode) -> Tensor {
    let log_sizes: Vec<f64> = edges.segment.iter().map(|&s| (edges.segment_size(s) as f64).ln()).collect();
    match mode {
        AibMode::Verbatim => {
            let s = tape.sum(p.log_probs);
            tape.add_scalar(s, log_sizes.iter().sum())
        }
        AibMode::Kl => {
            let c = tape.from_vec(edges.num_edges(), 1, log_sizes, false);
            let ratio = tape.add(p.log_probs, c);
            let w = tape.mul(p.probs, ratio);
            tape.sum(w)
        }
    }
}

/// Selected message paths per target (local ids), with the probabilities
/// they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub selected: Vec<Vec<usize>>,
    pub probabilities: Vec<Vec<f64>>,
}

impl PathSample {
    /// Keeps every candidate.
    pub fn full(edges: &CandidateEdges) -> Self {
        let mut selected = vec![Vec::new(); edges.num_targets];
        let mut probabilities = vec![Vec::new(); edges.num_targets];
        for s in 0..edges.num_segments() {
            let t = edges.segment_target[s];
            let r = edges.segment_offsets[s]..edges.segment_offsets[s + 1];
            let k = r.len() as f64;
            selected[t] = edges.candidate[r.clone()].to_vec();
            probabilities[t] = vec![1.0 / k; r.len()];
        }
        PathSample { selected, probabilities }
    }

    /// Message edges `(target, source)`; a target with no selection sends a
    /// message to itself.
    pub fn message_edges(&self) -> (Vec<usize>, Vec<usize>) {
        let mut tgt = Vec::new();
        let mut src = Vec::new();
        for (t, sel) in self.selected.iter().enumerate() {
            if sel.is_empty() {
                tgt.push(t);
                src.push(t);
            } else {
                for &u in sel {
                    tgt.push(t);
                    src.push(u);
                }
            }
        }
        (tgt, src)
    }
}

/// Draws `min(budget, |cand(v)|)` candidates per target without replacement,
/// each pick proportional to the remaining probabilities. When the budget
/// covers a target's candidates no randomness is consumed for it.
pub fn sample_paths(probs: &[f64], edges: &CandidateEdges, budget: usize, seed: u64) -> Result<PathSample> {
    if budget == 0 {
        return Err(Error::Argument("path budget must be at least 1".into()));
    }
    assert_eq!(probs.len(), edges.num_edges(), "one probability per candidate edge");
    let mut r = rng::rng(seed);
    let mut out = PathSample::full(edges);
    for s in 0..edges.num_segments() {
        let t = edges.segment_target[s];
        let range = edges.segment_offsets[s]..edges.segment_offsets[s + 1];
        out.probabilities[t] = probs[range.clone()].to_vec();
        if budget >= range.len() {
            continue;
        }
        let p = &probs[range.clone()];
        let mut taken = vec![false; p.len()];
        for _ in 0..budget {
            let total: f64 = p.iter().zip(&taken).filter(|(_, &k)| !k).map(|(x, _)| x).sum();
            let pick = if total > 0.0 {
                let mut u = r.random::<f64>() * total;
                let mut pick = None;
                let mut last = 0;
                for (i, &x) in p.iter().enumerate() {
                    if taken[i] {
                        continue;
                    }
                    last = i;
                    if x > 0.0 && u < x {
                        pick = Some(i);
                        break;
                    }
                    u -= x;
                }
                // rounding can leave u just above the last weight
                pick.unwrap_or(last)
            } else {
                let free: Vec<usize> = (0..p.len()).filter(|&i| !taken[i]).collect();
                free[r.random_range(0..free.len())]
            };
            taken[pick] = true;
        }
        out.selected[t] = (0..p.len())
            .filter(|&i| taken[i])
            .map(|i| edges.candidate[range.start + i])
            .collect();
    }
    Ok(out)
}

/// Gaussian messages for a set of `(target, source)` edges.
#[derive(Debug, Clone)]
pub struct MessageBatch {
    pub target: Vec<usize>,
    pub source: Vec<usize>,
    pub mu: Tensor,
    /// Strictly positive: `softplus(·) + VAR_FLOOR`.
    pub var: Tensor,
    pub z: Option<Tensor>,
    pub eps: Option<Vec<f64>>,
}

impl MessageBatch {
    pub fn num_edges(&self) -> usize {
        self.target.len()
    }
}

/// `μ = MLP1([z_v | z_u])`, `σ² = softplus(MLP2([z_v | z_u])) + VAR_FLOOR`.
pub fn message_params(
    tape: &mut Tape,
    z_x: Tensor,
    target: Vec<usize>,
    source: Vec<usize>,
    mu: &MlpVars,
    var: &MlpVars,
) -> MessageBatch {
    assert_eq!(target.len(), source.len(), "edge endpoint lists differ in length");
    let a = tape.gather_rows(z_x, &target);
    let b = tape.gather_rows(z_x, &source);
    let pair = tape.concat_cols(a, b);
    let m = mu.forward(tape, pair);
    let s = var.forward(tape, pair);
    let s = tape.softplus(s);
    let v = tape.add_scalar(s, VAR_FLOOR);
    MessageBatch {
        target,
        source,
        mu: m,
        var: v,
        z: None,
        eps: None,
    }
}

/// Reparameterized draw `z = μ + √σ² · ε`. `seed = None` sets `ε = 0`.
pub fn sample_messages(tape: &mut Tape, batch: &mut MessageBatch, seed: Option<u64>) {
    let n = batch.mu.len();
    let eps: Vec<f64> = match seed {
        Some(s) => {
            let mut r = rng::rng(s);
            (0..n).map(|_| r.sample(StandardNormal)).collect()
        }
        None => vec![0.0; n],
    };
    let e = tape.from_vec(batch.mu.rows(), batch.mu.cols(), eps.clone(), false);
    let sd = tape.sqrt(batch.var);
    let noise = tape.mul(sd, e);
    batch.z = Some(tape.add(batch.mu, noise));
    batch.eps = Some(eps);
}

/// `Σ_edges [log Φ(z; μ, σ²) - log Σ_i w_i Φ(z; μ_i, σ²_i)]`.
pub fn hib_loss(tape: &mut Tape, batch: &MessageBatch, prior: &PriorVars) -> Tensor {
    let z = batch.z.expect("hib_loss needs sampled messages");
    let own = tape.gaussian_log_density(z, batch.mu, batch.var);
    let mix = prior.log_density(tape, z);
    let d = tape.sub(own, mix);
    tape.sum(d)
}

/// `out_v = Σ_{u ∈ α_v} z_{u→v} W`.
pub fn aggregate(tape: &mut Tape, batch: &MessageBatch, w: Tensor, num_targets: usize) -> Tensor {
    let z = batch.z.expect("aggregate needs sampled messages");
    let zw = tape.matmul(z, w);
    tape.segment_sum(zw, &batch.target, num_targets)
}

/// Per-layer switches.
#[derive(Debug, Clone, Copy)]
pub struct LayerContext {
    pub mode: Mode,
    pub seed: u64,
    pub path_budget: usize,
    pub aib_mode: AibMode,
    pub activation: PseudoActivation,
    /// Final layers emit raw logits; others apply ReLU.
    pub is_final: bool,
    pub with_aib: bool,
    pub with_hib: bool,
}

#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub z_next: Tensor,
    pub aib: Option<Tensor>,
    pub hib: Option<Tensor>,
    pub paths: PathSample,
    pub messages: MessageBatch,
}

/// One full layer: pseudo-labels, path scores, AIB, path sampling, messages,
/// HIB and aggregation. `z_x` has one row per block node.
pub fn layer_forward(
    tape: &mut Tape,
    z_x: Tensor,
    block: &SampledBlock,
    dictionary: Tensor,
    vars: &LayerVars,
    prior: &PriorVars,
    ctx: &LayerContext,
) -> Result<LayerOutput> {
    if z_x.rows() != block.nodes().len() {
        return Err(Error::Shape(format!(
            "layer input has {} rows for a block of {} nodes",
            z_x.rows(),
            block.nodes().len()
        )));
    }
    let edges = candidate_edges(block);
    let must_sample = ctx.mode == Mode::Train && ctx.path_budget < edges.max_segment();
    let probs = if ctx.with_aib || must_sample {
        let z_p = pseudo_label(tape, z_x, dictionary, &vars.pseudo, ctx.activation)?;
        Some(path_probabilities(tape, z_p, &edges))
    } else {
        None
    };
    let aib = match (&probs, ctx.with_aib) {
        (Some(p), true) => Some(aib_loss(tape, p, &edges, ctx.aib_mode)),
        _ => None,
    };
    let paths = match (&probs, must_sample) {
        (Some(p), true) => {
            let values = tape.value(p.probs).to_vec();
            sample_paths(&values, &edges, ctx.path_budget, rng::derive(ctx.seed, &[0]))?
        }
        _ => PathSample::full(&edges),
    };
    let (tgt, src) = paths.message_edges();
    let mut messages = message_params(tape, z_x, tgt, src, &vars.mu, &vars.var);
    let noise_seed = match ctx.mode {
        Mode::Train => Some(rng::derive(ctx.seed, &[1])),
        Mode::Eval => None,
    };
    sample_messages(tape, &mut messages, noise_seed);
    let hib = ctx.with_hib.then(|| hib_loss(tape, &messages, prior));
    let out = aggregate(tape, &messages, vars.w, block.num_targets());
    let z_next = if ctx.is_final { out } else { tape.relu(out) };
    Ok(LayerOutput {
        z_next,
        aib,
        hib,
        paths,
        messages,
    })
}

