//! A small deterministic reverse-mode differentiation engine.
//!
//! Training runs in `f32`; every graph can also be evaluated in `f64`, which
//! is what [`grad_check`] uses for its finite-difference oracle.

mod exec;
pub mod fixtures;
mod gradcheck;
mod graph;
mod init;
mod optim;
mod params;

pub use exec::{evaluate, forward, forward_backward, EvalOptions, Evaluation, KinkSignature, NORMALIZE_EPS};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Node, NodeId, Op};
pub use init::{Init, ParamInit};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::ParamSet;
