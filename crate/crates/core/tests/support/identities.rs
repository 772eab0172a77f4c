//! Closed-form identities of the path and message regularizers.

use mlgib::autodiff::Tape;
use mlgib::graph::sample_block;
use mlgib::matrix::Matrix;
use mlgib::model::{
    aib_loss, candidate_edges, hib_loss, path_probabilities, sample_messages, AibMode, MessageBatch, PriorVars,
    VAR_FLOOR,
};
use mlgib::rng;
use mlgib::Graph;
use rand::Rng as _;

pub const MC_DRAWS: usize = 100_000;
pub const MC_REL_TOL: f64 = 0.02;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Pre-variance whose floored softplus is `var`.
fn pre_var_for(var: f64) -> f64 {
    (var - VAR_FLOOR).exp_m1().ln()
}

/// AIB with every pseudo-label equal, on a random graph, in the given mode.
pub fn aib_under_uniform(mode: AibMode, seed: u64) -> f64 {
    let mut r = rng::rng(seed);
    let n = 12;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random_bool(0.3) {
                edges.push((u, v));
            }
        }
    }
    let g = Graph::from_edges(&edges, Matrix::zeros(n, 1), vec![0; n], 1).unwrap();
    let all: Vec<usize> = (0..n).collect();
    let block = sample_block(&g, &all, 64, seed).unwrap();
    let e = candidate_edges(&block);
    let row: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
    let zp: Vec<f64> = (0..block.nodes().len()).flat_map(|_| row.clone()).collect();
    let mut tape = Tape::new();
    let zp = tape.from_vec(block.nodes().len(), 4, zp, false);
    let p = path_probabilities(&mut tape, zp, &e);
    let a = aib_loss(&mut tape, &p, &e, mode);
    tape.scalar(a)
}

/// Per-edge HIB terms when the single-component prior equals the message
/// Gaussian. Returns the largest absolute term.
pub fn hib_matched_prior(seed: u64) -> f64 {
    let mut r = rng::rng(seed);
    let (edges, d) = (8, 4);
    let mut worst = 0.0f64;
    for _ in 0..edges {
        let mu: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let pre: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let pre_t = tape.from_vec(1, d, pre.clone(), false);
        let var = tape.softplus(pre_t);
        let var = tape.add_scalar(var, VAR_FLOOR);
        let mu_t = tape.from_vec(1, d, mu.clone(), false);
        let mut batch = MessageBatch {
            target: vec![0],
            source: vec![0],
            mu: mu_t,
            var,
            z: None,
            eps: None,
        };
        sample_messages(&mut tape, &mut batch, Some(r.random()));
        let prior = PriorVars {
            logits: tape.from_vec(1, 1, vec![r.random_range(-2.0..2.0)], false),
            means: tape.from_vec(1, d, mu, false),
            pre_var: tape.from_vec(1, d, pre, false),
        };
        let h = hib_loss(&mut tape, &batch, &prior);
        worst = worst.max(tape.scalar(h).abs());
    }
    worst
}

#[derive(Debug, Clone, Copy)]
pub struct KlCase {
    pub delta: [f64; 4],
    pub sigma: [f64; 4],
    pub monte_carlo: f64,
    pub closed_form: f64,
}

impl KlCase {
    pub fn rel_error(&self) -> f64 {
        (self.monte_carlo - self.closed_form).abs() / self.closed_form.abs()
    }
}

/// Mean HIB term over `MC_DRAWS` messages from `N(μ, σ²)` against a
/// one-component unit-variance prior at `μ + Δ`, next to
/// `KL = ½ Σ_j (σ²_j + Δ²_j − 1 − ln σ²_j)`.
pub fn hib_monte_carlo(delta: [f64; 4], sigma: [f64; 4], seed: u64) -> KlCase {
    let d = 4;
    let mu = [0.3, -0.7, 1.1, 0.0];
    let var: Vec<f64> = sigma.iter().map(|s| s * s).collect();
    let mut tape = Tape::new();
    let mu_t = tape.from_vec(MC_DRAWS, d, mu.repeat(MC_DRAWS), false);
    let var_t = tape.from_vec(MC_DRAWS, d, var.repeat(MC_DRAWS), false);
    let mut batch = MessageBatch {
        target: vec![0; MC_DRAWS],
        source: vec![0; MC_DRAWS],
        mu: mu_t,
        var: var_t,
        z: None,
        eps: None,
    };
    sample_messages(&mut tape, &mut batch, Some(seed));
    let prior_mean: Vec<f64> = mu.iter().zip(&delta).map(|(m, dl)| m + dl).collect();
    let prior = PriorVars {
        logits: tape.from_vec(1, 1, vec![0.0], false),
        means: tape.from_vec(1, d, prior_mean, false),
        pre_var: tape.from_vec(1, d, vec![pre_var_for(1.0); d], false),
    };
    let h = hib_loss(&mut tape, &batch, &prior);
    let monte_carlo = tape.scalar(h) / MC_DRAWS as f64;

    let prior_var = softplus(pre_var_for(1.0)) + VAR_FLOOR;
    let closed_form = (0..d)
        .map(|j| 0.5 * ((var[j] + delta[j] * delta[j]) / prior_var - 1.0 - (var[j] / prior_var).ln()))
        .sum();
    KlCase {
        delta,
        sigma,
        monte_carlo,
        closed_form,
    }
}

/// Five random `(Δ, σ)` settings.
pub fn kl_cases(seed: u64) -> Vec<KlCase> {
    let mut r = rng::rng(seed);
    (0..5)
        .map(|i| {
            let delta = std::array::from_fn(|_| {
                let m: f64 = r.random_range(0.5..1.5);
                if r.random_bool(0.5) {
                    -m
                } else {
                    m
                }
            });
            let sigma = std::array::from_fn(|_| r.random_range(0.6..1.5));
            hib_monte_carlo(delta, sigma, rng::derive(seed, &[i]))
        })
        .collect()
}
