//! Heterogeneous distillation from a CNN teacher into a two-layer GNN
//! student whose graph is produced by a differentiable s-sparse head.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and a reverse-mode tape
//! - [`graph`]: the closed-form sparse neighbor distribution, its
//!   simplex-projection oracle, distance heads and batch graphs
//! - [`nn`]: im2col CNN teacher and two-layer GNN student
//! - [`distill`]: teacher pretraining and joint distillation
//! - [`inference`]: the two inductive test-time mechanisms
//! - [`data`]: IDX/CSV loaders, synthetic blobs, splits and batches

pub mod data;
pub mod distill;
pub mod error;
pub mod graph;
pub mod inference;
pub mod nn;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use params::ModelParams;
pub use tensor::{Tape, Tensor, Var};
