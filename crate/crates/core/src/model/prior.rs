use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::VAR_FLOOR;
use crate::autodiff::{Tape, Tensor};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Diagonal Gaussian mixture over message vectors. Weights are
/// `softmax(logits)`; variances are `softplus(pre_var) + VAR_FLOOR`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    /// `1 × m`.
    pub logits: Matrix,
    /// `m × d`.
    pub means: Matrix,
    /// `m × d`.
    pub pre_var: Matrix,
}

/// Pre-variance whose softplus is 1.
pub fn unit_pre_var() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

impl GmmPrior {
    /// Equal weights, means uniform in `[-1, 1]`, unit variances.
    pub fn new(components: usize, dim: usize, rng: &mut Rng) -> Self {
        let means = (0..components * dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        GmmPrior {
            logits: Matrix::zeros(1, components),
            means: Matrix::from_vec(components, dim, means),
            pre_var: Matrix::from_vec(components, dim, vec![unit_pre_var(); components * dim]),
        }
    }

    pub fn components(&self) -> usize {
        self.logits.cols
    }

    pub fn dim(&self) -> usize {
        self.means.cols
    }

    pub fn weights(&self) -> Vec<f64> {
        let max = self.logits.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.data.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        vec![
            (format!("{prefix}.logits"), &self.logits),
            (format!("{prefix}.means"), &self.means),
            (format!("{prefix}.pre_var"), &self.pre_var),
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        vec![
            (format!("{prefix}.logits"), &mut self.logits),
            (format!("{prefix}.means"), &mut self.means),
            (format!("{prefix}.pre_var"), &mut self.pre_var),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PriorVars {
    pub logits: Tensor,
    pub means: Tensor,
    pub pre_var: Tensor,
}

impl PriorVars {
    pub fn new(tape: &mut Tape, prior: &GmmPrior, trainable: bool) -> Self {
        PriorVars {
            logits: tape.leaf(&prior.logits, trainable),
            means: tape.leaf(&prior.means, trainable),
            pre_var: tape.leaf(&prior.pre_var, trainable),
        }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        vec![self.logits, self.means, self.pre_var]
    }

    /// Per-row mixture log-density `log Σ_i w_i Φ(z; μ_i, σ²_i)` of `z`.
    pub fn log_density(&self, tape: &mut Tape, z: Tensor) -> Tensor {
        assert_eq!(z.cols(), self.means.cols(), "prior dimension mismatch");
        let var = tape.softplus(self.pre_var);
        let var = tape.add_scalar(var, VAR_FLOOR);
        tape.mixture_log_density(z, self.logits, self.means, var)
    }
}
