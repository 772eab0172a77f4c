//! Dense reverse-mode differentiation.
//!
//! A [`Tape`] is an arena of recorded values; [`Tensor`] is a cheap handle into
//! it. Every operation appends a node whose parents already live on the tape,
//! so the node order is a topological order and `backward` is a single reverse
//! sweep.

mod fd;
mod tape;

pub use fd::{central_difference, finite_difference_check, relative_error, GradCheck};
pub use tape::{Tape, Tensor};
