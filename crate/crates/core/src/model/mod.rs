//! The information-bottleneck message-passing layer.
//!
//! Each layer scores neighbor candidates with label-aware pseudo-label
//! representations, samples message paths from those scores, draws Gaussian
//! messages with the reparameterization trick and sums them into the next
//! representation. The regularizers of a layer are the path term (AIB) and the
//! message term (HIB) against a Gaussian-mixture prior.

mod layer;
mod prior;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::matrix::Matrix;
use crate::rng::Rng;

pub use layer::{
    aggregate, aib_loss, candidate_edges, hib_loss, layer_forward, message_params, path_probabilities, pseudo_label,
    sample_messages, sample_paths, CandidateEdges, LayerContext, LayerOutput, MessageBatch, PathProbabilities,
    PathSample,
};
pub use prior::{GmmPrior, PriorVars};

/// Floor added to every softplus-parameterized variance.
pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AibMode {
    /// Unweighted sum over candidates of `log P(u|v) + log |cand(v)|`.
    #[default]
    Verbatim,
    /// `Σ_v KL(P(·|v) ‖ uniform)`.
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoActivation {
    None,
    Sigmoid,
    /// Row softmax; keeps pseudo-labels bounded so path scores stay finite.
    #[default]
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sampled paths and noisy messages.
    Train,
    /// All candidates and `ε = 0`.
    Eval,
}

pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Two-layer perceptron `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Mlp {
            w1: xavier(input, hidden, rng),
            b1: Matrix::zeros(1, hidden),
            w2: xavier(hidden, output, rng),
            b2: Matrix::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            w1: Matrix::zeros(input, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, output),
            b2: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols
    }

    fn matrices(&self) -> [(&'static str, &Matrix); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    fn matrices_mut(&mut self) -> [(&'static str, &mut Matrix); 4] {
        [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpVars {
    pub fn new(tape: &mut Tape, mlp: &Mlp, trainable: bool) -> Self {
        MlpVars {
            w1: tape.leaf(&mlp.w1, trainable),
            b1: tape.leaf(&mlp.b1, trainable),
            w2: tape.leaf(&mlp.w2, trainable),
            b2: tape.leaf(&mlp.b2, trainable),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Tensor) -> Tensor {
        let h = tape.matmul(x, self.w1);
        let h = tape.add_row(h, self.b1);
        let h = tape.relu(h);
        let o = tape.matmul(h, self.w2);
        tape.add_row(o, self.b2)
    }

    fn tensors(&self) -> [Tensor; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Parameters of one layer. `pseudo` maps the input dimension to label
/// scores, `mu` and `var` map the concatenated pair `[z_v | z_u]` to the
/// message dimension, and `w` maps messages to the output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub index: usize,
    pub pseudo: Mlp,
    pub mu: Mlp,
    pub var: Mlp,
    pub w: Matrix,
}

impl LayerParams {
    pub fn new(
        index: usize,
        input: usize,
        hidden: usize,
        message: usize,
        output: usize,
        num_labels: usize,
        rng: &mut Rng,
    ) -> Self {
        LayerParams {
            index,
            pseudo: Mlp::new(input, hidden, num_labels, rng),
            mu: Mlp::new(2 * input, hidden, message, rng),
            var: Mlp::new(2 * input, hidden, message, rng),
            w: xavier(message, output, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.pseudo.input_dim()
    }

    pub fn message_dim(&self) -> usize {
        self.w.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols
    }

    /// Every parameter matrix with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::with_capacity(13);
        for (group, mlp) in [("pseudo", &self.pseudo), ("mu", &self.mu), ("var", &self.var)] {
            for (n, m) in mlp.matrices() {
                out.push((format!("layer{}.{group}.{n}", self.index), m));
            }
        }
        out.push((format!("layer{}.w", self.index), &self.w));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let i = self.index;
        let mut out = Vec::with_capacity(13);
        for (group, mlp) in [("pseudo", &mut self.pseudo), ("mu", &mut self.mu), ("var", &mut self.var)] {
            for (n, m) in mlp.matrices_mut() {
                out.push((format!("layer{i}.{group}.{n}"), m));
            }
        }
        out.push((format!("layer{i}.w"), &mut self.w));
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub pseudo: MlpVars,
    pub mu: MlpVars,
    pub var: MlpVars,
    pub w: Tensor,
}

impl LayerVars {
    pub fn new(tape: &mut Tape, p: &LayerParams, trainable: bool) -> Self {
        LayerVars {
            pseudo: MlpVars::new(tape, &p.pseudo, trainable),
            mu: MlpVars::new(tape, &p.mu, trainable),
            var: MlpVars::new(tape, &p.var, trainable),
            w: tape.leaf(&p.w, trainable),
        }
    }

    /// Tensors in the same order as [`LayerParams::named`].
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(13);
        out.extend(self.pseudo.tensors());
        out.extend(self.mu.tensors());
        out.extend(self.var.tensors());
        out.push(self.w);
        out
    }
}
