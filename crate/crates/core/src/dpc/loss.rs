//! Rollouts through the discrete model, the penalised MPC loss and its
//! reverse-mode gradient.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BoxSet, DiscreteModel};
use crate::scalar::{self, Scalar};

use super::network::PolicyNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyKind {
    Relu,
    ReluSquared,
    /// `log10(1 + v)`
    Log10,
}

impl PenaltyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyKind::Relu => "relu",
            PenaltyKind::ReluSquared => "relu-squared",
            PenaltyKind::Log10 => "log10",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(PenaltyKind::Relu),
            "relu-squared" => Some(PenaltyKind::ReluSquared),
            "log10" => Some(PenaltyKind::Log10),
            _ => None,
        }
    }

    /// Penalty of a nonnegative violation `v`.
    pub fn eval<T: Scalar>(&self, v: T) -> T {
        if v <= T::zero() {
            return T::zero();
        }
        match self {
            PenaltyKind::Relu => v,
            PenaltyKind::ReluSquared => v * v,
            PenaltyKind::Log10 => v.ln_1p() / T::LN_10(),
        }
    }

    /// Derivative of [`eval`](Self::eval); zero at the kink.
    pub fn slope<T: Scalar>(&self, v: T) -> T {
        if v <= T::zero() {
            return T::zero();
        }
        match self {
            PenaltyKind::Relu => T::one(),
            PenaltyKind::ReluSquared => T::lit(2.0) * v,
            PenaltyKind::Log10 => T::one() / ((T::one() + v) * T::LN_10()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub q_track: T,
    pub q_u: T,
    pub q_state_pen: T,
    pub q_input_pen: T,
    pub q_barrier_pen: T,
    /// Robustness margin in the discrete barrier residual.
    pub d: T,
    pub penalty_kind: PenaltyKind,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            q_track: T::lit(10.0),
            q_u: T::lit(1e-4),
            q_state_pen: T::lit(10.0),
            q_input_pen: T::lit(10.0),
            q_barrier_pen: T::lit(100.0),
            d: T::lit(1e-3),
            penalty_kind: PenaltyKind::ReluSquared,
        }
    }
}

impl<T: Scalar> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.q_track,
            self.q_u,
            self.q_state_pen,
            self.q_input_pen,
            self.q_barrier_pen,
        ];
        if w.iter().any(|&q| !(q >= T::zero())) {
            return Err(Error::InvalidParameter("loss weights must be >= 0".into()));
        }
        if !(self.d > T::zero()) {
            return Err(Error::InvalidParameter(
                "barrier margin d must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a training rollout needs besides the policy.
#[derive(Clone, Debug)]
pub struct DpcProblem<T> {
    pub model: DiscreteModel<T>,
    pub state_box: BoxSet<T>,
    pub input_box: BoxSet<T>,
    /// Corridor radius squared.
    pub epsilon: T,
    /// Linear class-K gain.
    pub alpha: T,
    pub horizon: usize,
}

impl<T: Scalar> DpcProblem<T> {
    /// Number of reference samples a scenario must provide.
    pub fn reference_len(&self) -> usize {
        (2 * self.horizon).max(self.horizon + 1)
    }

    /// Discrete corridor barrier `eps - ||x - r||^2`.
    pub fn h(&self, x: &[T], r: &[T]) -> T {
        let e = scalar::sub(x, r);
        self.epsilon - scalar::dot(&e, &e)
    }

    /// Network features at step `k`: the state followed by the preview
    /// `r_k .. r_{k+N-1}`.
    pub fn features(&self, x: &[T], refs: &[Vec<T>], k: usize) -> Vec<T> {
        let mut f = x.to_vec();
        for r in &refs[k..k + self.horizon] {
            f.extend_from_slice(r);
        }
        f
    }
}

/// One sampled training scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario<T> {
    pub x0: Vec<T>,
    pub refs: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout<T> {
    /// `x_0 .. x_N`
    pub xs: Vec<Vec<T>>,
    /// `u_0 .. u_{N-1}`
    pub us: Vec<Vec<T>>,
    /// `r_0 .. r_N`
    pub refs: Vec<Vec<T>>,
    /// `h(x_k, r_k)` for `k = 0 .. N`
    pub hs: Vec<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch<T> {
    pub rollouts: Vec<Rollout<T>>,
}

/// Weighted loss components, each already averaged over scenarios and steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<T> {
    pub tracking: T,
    pub effort: T,
    pub state_pen: T,
    pub input_pen: T,
    pub barrier_pen: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn zero() -> Self {
        Self {
            tracking: T::zero(),
            effort: T::zero(),
            state_pen: T::zero(),
            input_pen: T::zero(),
            barrier_pen: T::zero(),
        }
    }

    pub fn total(&self) -> T {
        self.tracking + self.effort + self.state_pen + self.input_pen + self.barrier_pen
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            tracking: self.tracking + o.tracking,
            effort: self.effort + o.effort,
            state_pen: self.state_pen + o.state_pen,
            input_pen: self.input_pen + o.input_pen,
            barrier_pen: self.barrier_pen + o.barrier_pen,
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            tracking: self.tracking * s,
            effort: self.effort * s,
            state_pen: self.state_pen * s,
            input_pen: self.input_pen * s,
            barrier_pen: self.barrier_pen * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// `c_h = h_{k+1} - h_k + alpha h_k - d`; nonnegative when the discrete
/// barrier condition holds with margin `d`.
pub fn barrier_residual<T: Scalar>(h_k: T, h_k1: T, alpha: T, d: T) -> T {
    h_k1 - h_k + alpha * h_k - d
}

/// Rolls the policy through the discrete model for `N` steps without
/// disturbance.
pub fn rollout<T: Scalar>(
    net: &PolicyNetwork<T>,
    problem: &DpcProblem<T>,
    scenario: &Scenario<T>,
) -> Result<Rollout<T>> {
    Ok(forward(net, problem, scenario)?.0)
}

pub fn rollout_batch<T: Scalar>(
    net: &PolicyNetwork<T>,
    problem: &DpcProblem<T>,
    scenarios: &[Scenario<T>],
) -> Result<RolloutBatch<T>> {
    let rollouts = scenarios
        .par_iter()
        .map(|s| rollout(net, problem, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutBatch { rollouts })
}

type Caches<T> = Vec<super::network::ForwardCache<T>>;

fn forward<T: Scalar>(
    net: &PolicyNetwork<T>,
    problem: &DpcProblem<T>,
    scenario: &Scenario<T>,
) -> Result<(Rollout<T>, Caches<T>)> {
    let n = problem.horizon;
    if scenario.refs.len() < problem.reference_len() {
        return Err(Error::Shape(format!(
            "scenario has {} reference samples, horizon {} needs {}",
            scenario.refs.len(),
            n,
            problem.reference_len()
        )));
    }
    if scenario.x0.len() != problem.model.n_x() {
        return Err(Error::Shape("initial state dimension".into()));
    }
    let expected = problem.model.n_x() * (n + 1);
    if net.n_features() != expected {
        return Err(Error::Shape(format!(
            "policy takes {} features, problem provides {expected}",
            net.n_features()
        )));
    }
    let mut xs = Vec::with_capacity(n + 1);
    let mut us = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    xs.push(scenario.x0.clone());
    for k in 0..n {
        let feats = problem.features(&xs[k], &scenario.refs, k);
        let (u, cache) = net.forward_cached(feats);
        xs.push(problem.model.step(&xs[k], &u));
        us.push(u);
        caches.push(cache);
    }
    let refs: Vec<Vec<T>> = scenario.refs[..=n].to_vec();
    let hs = xs.iter().zip(&refs).map(|(x, r)| problem.h(x, r)).collect();
    Ok((Rollout { xs, us, refs, hs }, caches))
}

fn box_violation<T: Scalar>(bx: &BoxSet<T>, x: &[T], i: usize) -> (T, T) {
    if x[i] > bx.upper[i] {
        (x[i] - bx.upper[i], T::one())
    } else if x[i] < bx.lower[i] {
        (bx.lower[i] - x[i], -T::one())
    } else {
        (T::zero(), T::zero())
    }
}

/// Unscaled per-rollout sums plus their partial derivatives with respect to
/// each `x_k` and `u_k`.
struct Partials<T> {
    sums: LossBreakdown<T>,
    dx: Vec<Vec<T>>,
    du: Vec<Vec<T>>,
}

fn partials<T: Scalar>(
    ro: &Rollout<T>,
    problem: &DpcProblem<T>,
    w: &LossWeights<T>,
) -> Partials<T> {
    let n = ro.us.len();
    let two = T::lit(2.0);
    let p = w.penalty_kind;
    let mut sums = LossBreakdown::zero();
    let mut dx: Vec<Vec<T>> = ro.xs.iter().map(|x| vec![T::zero(); x.len()]).collect();
    let mut du: Vec<Vec<T>> = ro.us.iter().map(|u| vec![T::zero(); u.len()]).collect();
    for k in 0..n {
        let (x, u, r) = (&ro.xs[k], &ro.us[k], &ro.refs[k]);
        let e = scalar::sub(x, r);
        sums.tracking += w.q_track * scalar::dot(&e, &e);
        sums.effort += w.q_u * scalar::dot(u, u);
        for i in 0..x.len() {
            dx[k][i] += two * w.q_track * e[i];
            let (v, sign) = box_violation(&problem.state_box, x, i);
            sums.state_pen += w.q_state_pen * p.eval(v);
            dx[k][i] += w.q_state_pen * p.slope(v) * sign;
        }
        for i in 0..u.len() {
            du[k][i] += two * w.q_u * u[i];
            let (v, sign) = box_violation(&problem.input_box, u, i);
            sums.input_pen += w.q_input_pen * p.eval(v);
            du[k][i] += w.q_input_pen * p.slope(v) * sign;
        }

        let c = barrier_residual(ro.hs[k], ro.hs[k + 1], problem.alpha, w.d);
        sums.barrier_pen += w.q_barrier_pen * p.eval(-c);
        let dc = -w.q_barrier_pen * p.slope(-c);
        if dc != T::zero() {
            // dh/dx = -2 (x - r)
            let dh_next = dc;
            let dh_k = dc * (problem.alpha - T::one());
            for (j, dh) in [(k + 1, dh_next), (k, dh_k)] {
                for i in 0..dx[j].len() {
                    dx[j][i] -= two * dh * (ro.xs[j][i] - ro.refs[j][i]);
                }
            }
        }
    }
    Partials { sums, dx, du }
}

fn batch_scale<T: Scalar>(batch_len: usize, horizon: usize) -> T {
    T::one() / T::idx(batch_len.max(1) * horizon.max(1))
}

/// Loss components averaged over scenarios and steps.
pub fn total_loss<T: Scalar>(
    batch: &RolloutBatch<T>,
    problem: &DpcProblem<T>,
    w: &LossWeights<T>,
) -> LossBreakdown<T> {
    let horizon = batch.rollouts.first().map_or(1, |r| r.us.len());
    batch
        .rollouts
        .iter()
        .map(|ro| partials(ro, problem, w).sums)
        .fold(LossBreakdown::zero(), |a, b| a.add(&b))
        .scaled(batch_scale(batch.rollouts.len(), horizon))
}

/// Tracking plus input effort.
pub fn mpc_loss<T: Scalar>(
    batch: &RolloutBatch<T>,
    problem: &DpcProblem<T>,
    w: &LossWeights<T>,
) -> T {
    let l = total_loss(batch, problem, w);
    l.tracking + l.effort
}

/// State and input box penalties.
pub fn constraint_penalty<T: Scalar>(
    batch: &RolloutBatch<T>,
    problem: &DpcProblem<T>,
    w: &LossWeights<T>,
) -> T {
    let l = total_loss(batch, problem, w);
    l.state_pen + l.input_pen
}

/// Loss of one scenario and its gradient, both scaled by `scale`.
fn scenario_gradient<T: Scalar>(
    net: &PolicyNetwork<T>,
    problem: &DpcProblem<T>,
    w: &LossWeights<T>,
    scenario: &Scenario<T>,
    scale: T,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let (ro, caches) = forward(net, problem, scenario)?;
    let Partials { sums, dx, du } = partials(&ro, problem, w);
    let n = ro.us.len();
    let n_x = problem.model.n_x();
    let mut grad = vec![T::zero(); net.params().len()];
    let mut lambda: Vec<T> = dx[n].iter().map(|&v| v * scale).collect();
    for k in (0..n).rev() {
        // x_{k+1} = A_d x_k + B_d u_k
        let mut gu: Vec<T> = problem.model.b_d.tr_mul_vec(&lambda);
        for (g, &d) in gu.iter_mut().zip(&du[k]) {
            *g += d * scale;
        }
        let dfeat = net.backward(&caches[k], &gu, &mut grad);
        let mut next = problem.model.a_d.tr_mul_vec(&lambda);
        for i in 0..n_x {
            next[i] += dx[k][i] * scale + dfeat[i];
        }
        lambda = next;
    }
    Ok((sums.scaled(scale), grad))
}

/// Mean loss over `scenarios` and its exact gradient with respect to every
/// network parameter, back-propagated through the whole rollout.
/// Per-scenario work runs in parallel; the reduction is in scenario order.
pub fn gradient<T: Scalar>(
    net: &PolicyNetwork<T>,
    problem: &DpcProblem<T>,
    w: &LossWeights<T>,
    scenarios: &[Scenario<T>],
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let scale = batch_scale(scenarios.len(), problem.horizon);
    let parts = scenarios
        .par_iter()
        .map(|s| scenario_gradient(net, problem, w, s, scale))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = LossBreakdown::zero();
    let mut grad = vec![T::zero(); net.params().len()];
    for (l, g) in parts {
        loss = loss.add(&l);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}
