//! Safety-filtered differentiable predictive control.
//!
//! A learned receding-horizon policy is trained offline against a discrete
//! model with barrier penalties. At run time it is wrapped in an
//! event-triggered QP filter that only intervenes when the sampled state
//! enters a thin annulus around the boundary of a time-varying safe set.
//! The filter is certified for sampled-data execution with bounded
//! disturbances through explicit Lipschitz and bound constants.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the aliases
//! below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod dpc;
pub mod error;
pub mod filter;
pub mod model;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::{Mat, Scalar};

pub type System = model::SystemDynamics<f64>;
pub type Inputs = model::InputSet<f64>;
pub type Disturbance = model::DisturbanceSpec<f64>;
pub type Reference = model::ReferenceTrajectory<f64>;
pub type Discrete = model::DiscreteModel<f64>;
pub type Barrier = barrier::BarrierFunction<f64>;
pub type Corridor = barrier::CorridorBarrier<f64>;
pub type Constants = barrier::BarrierConstants<f64>;
pub type Grid = barrier::GridSpec<f64>;
pub type Filter = filter::FilterConfig<f64>;
pub type Policy = dpc::PolicyNetwork<f64>;
pub type Weights = dpc::LossWeights<f64>;
pub type Training = dpc::TrainingConfig<f64>;
pub type Simulation = sim::SimConfig<f64>;
pub type Trajectory = sim::TrajectoryLog<f64>;
