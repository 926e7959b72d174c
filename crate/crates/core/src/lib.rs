//! Desk-scale synchronous data-parallel SGD training.
//!
//! The crate provides the pieces needed to run and study large-minibatch
//! SGD on a single machine: deterministic tensor/layer primitives with
//! exact backward passes, a piecewise learning-rate/weight-decay schedule
//! engine, momentum SGD with warm-up momentum correction, a ring-allreduce
//! runtime over in-process channels or TCP, collapsed-ensemble
//! snapshotting, and an analytic performance model for time-per-epoch,
//! scaling-efficiency, and time-to-accuracy projections.

pub mod data;
pub mod dist;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod perf;
pub mod sched;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{ParamRole, ParamSet};
pub use tensor::Tensor;
