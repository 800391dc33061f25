//! Differentiable predictive control: a bounded neural policy
//! `u_k = pi_W(x_k, xi_k)` trained offline by rolling it through the
//! discrete model and descending the penalised MPC loss
//!
//! ```text
//! 1/(mN) sum_i sum_k  q_u |u_k|^2 + q_track |x_k - r_k|^2
//!                   + p(state box) + p(input box) + q_b p(max(0, -c_h))
//! c_h = h(x_{k+1}, r_{k+1}) - h(x_k, r_k) + alpha h(x_k, r_k) - d
//! ```
//!
//! Gradients are exact reverse-mode derivatives through the whole rollout.

mod loss;
mod network;
mod train;
pub mod weights;

pub use loss::{
    barrier_residual, constraint_penalty, gradient, mpc_loss, rollout, rollout_batch, total_loss,
    DpcProblem, LossBreakdown, LossWeights, PenaltyKind, Rollout, RolloutBatch, Scenario,
};
pub use network::{Activation, ForwardCache, PolicyMeta, PolicyNetwork, ReferenceMode};
pub use train::{
    sample_scenarios, train, CurveRow, Optimizer, TrainingConfig, TrainingCurve, TrainingOutcome,
};
