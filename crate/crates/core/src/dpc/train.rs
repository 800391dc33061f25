//! Offline training: scenario sampling, first-order updates, validation
//! snapshotting and the per-epoch curve.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BoxSet, InputSet, ReferenceTrajectory};
use crate::scalar::{self, Scalar};

use super::loss::{
    gradient, rollout_batch, total_loss, DpcProblem, LossBreakdown, LossWeights, Scenario,
};
use super::network::{Activation, PolicyMeta, PolicyNetwork, ReferenceMode};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer<T> {
    Sgd,
    Adam { beta1: T, beta2: T, eps: T },
}

impl<T: Scalar> Optimizer<T> {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig<T> {
    /// Number of sampled scenarios, validation share included.
    pub m: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub optimizer: Optimizer<T>,
    pub seed: u64,
    /// Region `x_0` is drawn from, intersected with the corridor at `t_0`.
    pub init_state_box: BoxSet<T>,
    pub reference_mode: ReferenceMode,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub validation_fraction: T,
}

impl<T: Scalar> TrainingConfig<T> {
    pub fn new(init_state_box: BoxSet<T>, seed: u64) -> Self {
        Self {
            m: 2000,
            epochs: 400,
            batch_size: 100,
            learning_rate: T::lit(1e-3),
            optimizer: Optimizer::adam(),
            seed,
            init_state_box,
            reference_mode: ReferenceMode::True,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            validation_fraction: T::lit(0.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "m and batch size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > T::zero()) {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        if !(self.validation_fraction >= T::zero() && self.validation_fraction < T::one()) {
            return Err(Error::InvalidParameter(
                "validation fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Draws `m` scenarios: a random phase of the reference (or all-zero
/// samples) and a start state inside the corridor around the first sample.
pub fn sample_scenarios<T: Scalar>(
    cfg: &TrainingConfig<T>,
    problem: &DpcProblem<T>,
    reference: &ReferenceTrajectory<T>,
) -> Vec<Scenario<T>> {
    let mut rng = cfg.rng(2);
    let n_x = problem.model.n_x();
    let len = problem.reference_len();
    let dt = problem.model.dt;
    let span = reference.period().unwrap_or_else(T::TAU).as_f64();
    let radius = problem.epsilon.sqrt();
    (0..cfg.m)
        .map(|_| {
            let refs: Vec<Vec<T>> = match cfg.reference_mode {
                ReferenceMode::True => {
                    let t0 = T::lit(rng.gen_range(0.0..span));
                    (0..len)
                        .map(|j| reference.value(t0 + dt * T::idx(j)))
                        .collect()
                }
                ReferenceMode::Zero => vec![vec![T::zero(); n_x]; len],
            };
            let x0 = sample_start(&mut rng, &cfg.init_state_box, &refs[0], radius);
            Scenario { x0, refs }
        })
        .collect()
}

fn sample_start<T: Scalar>(rng: &mut ChaCha8Rng, bx: &BoxSet<T>, r0: &[T], radius: T) -> Vec<T> {
    let lo: Vec<f64> = (0..r0.len())
        .map(|i| bx.lower[i].max(r0[i] - radius).as_f64())
        .collect();
    let hi: Vec<f64> = (0..r0.len())
        .map(|i| bx.upper[i].min(r0[i] + radius).as_f64())
        .collect();
    if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
        return bx.clamp(r0);
    }
    for _ in 0..1000 {
        let x: Vec<T> = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| T::lit(rng.gen_range(l..h)))
            .collect();
        let e = scalar::sub(&x, r0);
        if scalar::dot(&e, &e) <= radius * radius {
            return x;
        }
    }
    bx.clamp(r0)
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

fn apply_step<T: Scalar>(
    opt: &Optimizer<T>,
    state: &mut Adam<T>,
    lr: T,
    params: &mut [T],
    grad: &[T],
) {
    match *opt {
        Optimizer::Sgd => {
            for (p, &g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            state.t += 1;
            let c1 = T::one() - beta1.powi(state.t);
            let c2 = T::one() - beta2.powi(state.t);
            for i in 0..params.len() {
                let g = grad[i];
                state.m[i] = beta1 * state.m[i] + (T::one() - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (T::one() - beta2) * g * g;
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow<T> {
    pub epoch: usize,
    pub train: LossBreakdown<T>,
    pub validation: T,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve<T> {
    pub rows: Vec<CurveRow<T>>,
}

impl<T: Scalar> TrainingCurve<T> {
    pub const HEADER: &'static str =
        "epoch,total,tracking,effort,state_pen,input_pen,barrier_pen,validation";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let l = &r.train;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                l.total(),
                l.tracking,
                l.effort,
                l.state_pen,
                l.input_pen,
                l.barrier_pen,
                r.validation
            );
        }
        out
    }

    pub fn first(&self) -> Option<&CurveRow<T>> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&CurveRow<T>> {
        self.rows.last()
    }
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome<T> {
    /// Snapshot with the lowest validation loss.
    pub policy: PolicyNetwork<T>,
    pub best_epoch: usize,
    pub best_validation: T,
    pub curve: TrainingCurve<T>,
}

fn mean_loss<T: Scalar>(
    net: &PolicyNetwork<T>,
    problem: &DpcProblem<T>,
    w: &LossWeights<T>,
    scenarios: &[Scenario<T>],
) -> Result<LossBreakdown<T>> {
    Ok(total_loss(
        &rollout_batch(net, problem, scenarios)?,
        problem,
        w,
    ))
}

/// Trains a fresh policy. Row 0 of the curve holds the losses of the
/// initial network; with `epochs = 0` that network is returned unchanged.
pub fn train<T: Scalar>(
    cfg: &TrainingConfig<T>,
    problem: &DpcProblem<T>,
    reference: &ReferenceTrajectory<T>,
    w: &LossWeights<T>,
) -> Result<TrainingOutcome<T>> {
    cfg.validate()?;
    w.validate()?;
    let n_x = problem.model.n_x();
    let mut sizes = vec![n_x * (problem.horizon + 1)];
    sizes.extend(&cfg.hidden);
    sizes.push(problem.model.n_u());
    let input_set = InputSet::new(
        problem.input_box.lower.clone(),
        problem.input_box.upper.clone(),
    )?;
    let meta = PolicyMeta {
        seed: cfg.seed,
        reference_mode: cfg.reference_mode,
        horizon: problem.horizon,
    };
    let mut net = PolicyNetwork::xavier(sizes, cfg.activation, input_set, meta, &mut cfg.rng(1))?;

    let mut scenarios = sample_scenarios(cfg, problem, reference);
    let n_val = if cfg.m >= 2 {
        ((T::idx(cfg.m) * cfg.validation_fraction).round().as_f64() as usize).clamp(1, cfg.m - 1)
    } else {
        0
    };
    let mut train_set = scenarios.split_off(n_val);
    let val_set = scenarios;
    let select_on = |net: &PolicyNetwork<T>, train_loss: &LossBreakdown<T>| -> Result<T> {
        if val_set.is_empty() {
            Ok(train_loss.total())
        } else {
            Ok(mean_loss(net, problem, w, &val_set)?.total())
        }
    };

    let initial = mean_loss(&net, problem, w, &train_set)?;
    let initial_val = select_on(&net, &initial)?;
    let mut curve = TrainingCurve {
        rows: vec![CurveRow {
            epoch: 0,
            train: initial,
            validation: initial_val,
        }],
    };
    let mut best = (net.clone(), 0, initial_val);

    let mut shuffle_rng = cfg.rng(3);
    let mut adam = Adam {
        m: vec![T::zero(); net.params().len()],
        v: vec![T::zero(); net.params().len()],
        t: 0,
    };
    for epoch in 1..=cfg.epochs {
        train_set.shuffle(&mut shuffle_rng);
        let mut epoch_loss = LossBreakdown::zero();
        for batch in train_set.chunks(cfg.batch_size) {
            let (loss, grad) = gradient(&net, problem, w, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss = epoch_loss.add(&loss.scaled(T::idx(batch.len())));
            apply_step(
                &cfg.optimizer,
                &mut adam,
                cfg.learning_rate,
                net.params_mut(),
                &grad,
            );
        }
        let epoch_loss = epoch_loss.scaled(T::one() / T::idx(train_set.len()));
        let validation = select_on(&net, &epoch_loss)?;
        if !validation.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log::debug!(
            "epoch {epoch}: train {} (tracking {}, barrier {}), validation {validation}",
            epoch_loss.total(),
            epoch_loss.tracking,
            epoch_loss.barrier_pen
        );
        curve.rows.push(CurveRow {
            epoch,
            train: epoch_loss,
            validation,
        });
        if validation < best.2 {
            best = (net.clone(), epoch, validation);
        }
    }
    Ok(TrainingOutcome {
        policy: best.0,
        best_epoch: best.1,
        best_validation: best.2,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DiscreteModel;
    use crate::scalar::Mat;

    fn setup() -> (
        DpcProblem<f64>,
        ReferenceTrajectory<f64>,
        TrainingConfig<f64>,
    ) {
        let problem = DpcProblem {
            model: DiscreteModel {
                a_d: Mat::scalar(1.01),
                b_d: Mat::scalar(0.01),
                dt: 0.01,
            },
            state_box: BoxSet::new(vec![-4.0], vec![4.0]).unwrap(),
            input_box: BoxSet::new(vec![-2.0], vec![2.0]).unwrap(),
            epsilon: 0.2,
            alpha: 0.5,
            horizon: 5,
        };
        let mut cfg = TrainingConfig::new(BoxSet::new(vec![-4.0], vec![4.0]).unwrap(), 11);
        cfg.m = 60;
        cfg.epochs = 3;
        cfg.batch_size = 16;
        cfg.hidden = vec![8];
        (problem, ReferenceTrajectory::sinusoid(1, 0.5, 0.5), cfg)
    }

    #[test]
    fn zero_epochs_returns_initial_network() {
        let (p, r, mut cfg) = setup();
        cfg.epochs = 0;
        let out = train(&cfg, &p, &r, &LossWeights::default()).unwrap();
        let init = PolicyNetwork::xavier(
            vec![6, 8, 1],
            Activation::Tanh,
            InputSet::symmetric(1, 2.0).unwrap(),
            out.policy.meta().clone(),
            &mut cfg.rng(1),
        )
        .unwrap();
        assert_eq!(out.policy, init);
        assert_eq!(out.curve.rows.len(), 1);
    }

    #[test]
    fn same_seed_same_result() {
        let (p, r, cfg) = setup();
        let w = LossWeights::default();
        let a = train(&cfg, &p, &r, &w).unwrap();
        let b = train(&cfg, &p, &r, &w).unwrap();
        assert_eq!(a.policy.params(), b.policy.params());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.to_csv().lines().count(), cfg.epochs + 2);
    }

    #[test]
    fn sampled_starts_lie_in_corridor() {
        let (p, r, mut cfg) = setup();
        for mode in [ReferenceMode::True, ReferenceMode::Zero] {
            cfg.reference_mode = mode;
            for s in sample_scenarios(&cfg, &p, &r) {
                assert_eq!(s.refs.len(), p.reference_len());
                assert!(p.h(&s.x0, &s.refs[0]) >= 0.0);
                if mode == ReferenceMode::Zero {
                    assert!(s.refs.iter().all(|v| v[0] == 0.0));
                }
            }
        }
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (p, r, mut cfg) = setup();
        cfg.optimizer = Optimizer::Sgd;
        cfg.learning_rate = 1e300;
        let w = LossWeights {
            q_track: 1e300,
            ..LossWeights::default()
        };
        match train(&cfg, &p, &r, &w) {
            Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
