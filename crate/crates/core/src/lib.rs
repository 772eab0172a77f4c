//! Multi-label graph information bottleneck.
//!
//! Message passing on multi-label graphs where each layer
//!
//! 1. scores neighbors with label-aware pseudo-label representations and
//!    samples message-passing paths ([`model::path_probabilities`]),
//! 2. emits Gaussian messages regularized toward a Gaussian-mixture prior
//!    ([`model::hib_loss`]),
//! 3. sums the purified messages ([`model::aggregate`]).
//!
//! Training minimizes a Bernoulli cross-entropy plus `β` times the path and
//! message regularizers ([`train`]). [`bounds`] checks the underlying
//! information inequalities exactly on small discrete distributions.

pub mod autodiff;
pub mod bounds;
pub mod error;
pub mod graph;
pub mod label_embed;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use graph::Graph;
pub use matrix::Matrix;
