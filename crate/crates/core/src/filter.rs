//! Event-triggered safety filter. Outside the annulus the nominal input
//! passes through untouched; inside it, the closest input in the box that
//! satisfies the affine barrier condition replaces it.

use crate::barrier::{BarrierConstants, BarrierFunction, ControlLaw};
use crate::error::{Error, Result};
use crate::model::{InputSet, SystemDynamics};
use crate::scalar::{self, Scalar};

/// What to do when no input in the box satisfies the barrier condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fallback {
    Error,
    UseBackup,
}

#[derive(Clone, Debug)]
pub struct FilterConfig<T: Scalar> {
    pub barrier: BarrierFunction<T>,
    pub sys: SystemDynamics<T>,
    pub constants: BarrierConstants<T>,
    pub input_set: InputSet<T>,
    pub qp_tolerance: T,
    pub fallback: Fallback,
    /// Weight of `||u - u_prev||^2` in the QP objective.
    pub rate_penalty: T,
}

impl<T: Scalar> FilterConfig<T> {
    pub fn new(
        barrier: BarrierFunction<T>,
        sys: SystemDynamics<T>,
        constants: BarrierConstants<T>,
        input_set: InputSet<T>,
    ) -> Self {
        Self {
            barrier,
            sys,
            constants,
            input_set,
            qp_tolerance: T::lit(1e-9),
            fallback: Fallback::Error,
            rate_penalty: T::zero(),
        }
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn with_rate_penalty(mut self, rho: T) -> Self {
        self.rate_penalty = rho;
        self
    }

    pub fn with_tolerance(mut self, tol: T) -> Result<Self> {
        if !(tol > T::zero()) {
            return Err(Error::InvalidParameter("qp tolerance must be > 0".into()));
        }
        self.qp_tolerance = tol;
        Ok(self)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActiveSet {
    pub barrier: bool,
    pub lower: Vec<bool>,
    pub upper: Vec<bool>,
}

impl ActiveSet {
    pub fn is_empty(&self) -> bool {
        !self.barrier && !self.lower.iter().any(|&b| b) && !self.upper.iter().any(|&b| b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpResult<T> {
    pub u_star: Vec<T>,
    pub active: ActiveSet,
    /// `||u* - u_nom||^2`
    pub objective: T,
    /// `phi(x, u*, t) - margin` at the solution.
    pub slack: T,
    /// Multiplier of the barrier constraint.
    pub multiplier: T,
}

/// Euclidean projection of `target` onto `{u : c.u >= r, lower <= u <= upper}`.
///
/// Along `u(l) = clamp(target + l c)` the value `c.u(l)` is piecewise linear
/// and nondecreasing in `l >= 0`, with kinks where a component reaches a
/// bound. The optimal multiplier is the smallest `l` with `c.u(l) >= r`, found
/// by walking the sorted kinks. Returns `Err(best_slack)` when even the
/// box vertex maximising `c.u` misses `r` by more than `tol`.
pub fn project_halfspace_box<T: Scalar>(
    target: &[T],
    coeff: &[T],
    rhs: T,
    lower: &[T],
    upper: &[T],
    tol: T,
) -> std::result::Result<(Vec<T>, T), T> {
    let n = target.len();
    let at = |l: T| -> Vec<T> {
        (0..n)
            .map(|i| (target[i] + l * coeff[i]).max(lower[i]).min(upper[i]))
            .collect()
    };
    let value = |u: &[T]| scalar::dot(coeff, u);

    let u0 = at(T::zero());
    if value(&u0) >= rhs {
        return Ok((u0, T::zero()));
    }
    let best: Vec<T> = (0..n)
        .map(|i| {
            if coeff[i] > T::zero() {
                upper[i]
            } else if coeff[i] < T::zero() {
                lower[i]
            } else {
                u0[i]
            }
        })
        .collect();
    let best_value = value(&best);
    if best_value < rhs - tol {
        return Err(best_value - rhs);
    }

    let mut kinks: Vec<T> = Vec::with_capacity(2 * n);
    for i in 0..n {
        if coeff[i] != T::zero() {
            for bound in [lower[i], upper[i]] {
                let l = (bound - target[i]) / coeff[i];
                if l > T::zero() && l.is_finite() {
                    kinks.push(l);
                }
            }
        }
    }
    kinks.sort_by(|a, b| a.partial_cmp(b).expect("finite kinks"));

    let (mut l_prev, mut v_prev) = (T::zero(), value(&u0));
    for &l in &kinks {
        let v = value(&at(l));
        if v >= rhs {
            // linear on [l_prev, l]
            let frac = if v > v_prev {
                (rhs - v_prev) / (v - v_prev)
            } else {
                T::one()
            };
            let mut l_star = l_prev + frac * (l - l_prev);
            if value(&at(l_star)) < rhs {
                // round-off just below rhs: bisect towards the feasible kink
                let (mut lo, mut hi) = (l_star, l);
                for _ in 0..64 {
                    let mid = (lo + hi) * T::lit(0.5);
                    if value(&at(mid)) >= rhs {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                l_star = hi;
            }
            return Ok((at(l_star), l_star));
        }
        l_prev = l;
        v_prev = v;
    }
    // rhs within tol above the best achievable value
    let l_last = kinks.last().copied().unwrap_or(T::zero());
    Ok((best, l_last))
}

/// Minimiser of `||u - u_nom||^2 (+ rho ||u - u_prev||^2)` over the input box
/// subject to `phi(x, u, t) >= margin_ii`.
pub fn solve_barrier_qp<T: Scalar>(
    cfg: &FilterConfig<T>,
    u_nom: &[T],
    u_prev: Option<&[T]>,
    x: &[T],
    t: T,
) -> Result<QpResult<T>> {
    let cond = cfg.barrier.phi_affine(&cfg.sys, x, t);
    let rhs = cfg.constants.margin_ii - cond.offset;
    let target: Vec<T> = match u_prev {
        Some(prev) if cfg.rate_penalty > T::zero() => {
            let rho = cfg.rate_penalty;
            u_nom
                .iter()
                .zip(prev)
                .map(|(&n, &p)| (n + rho * p) / (T::one() + rho))
                .collect()
        }
        _ => u_nom.to_vec(),
    };
    let (lower, upper) = (cfg.input_set.lower(), cfg.input_set.upper());
    let (u_star, multiplier) =
        project_halfspace_box(&target, &cond.coeff, rhs, lower, upper, cfg.qp_tolerance).map_err(
            |best| Error::QpInfeasible {
                t: t.as_f64(),
                best_slack: best.as_f64(),
            },
        )?;
    let slack = cond.eval(&u_star) - cfg.constants.margin_ii;
    let active = ActiveSet {
        barrier: multiplier > T::zero(),
        lower: u_star.iter().zip(lower).map(|(u, l)| u <= l).collect(),
        upper: u_star.iter().zip(upper).map(|(u, h)| u >= h).collect(),
    };
    let diff = scalar::sub(&u_star, u_nom);
    Ok(QpResult {
        objective: scalar::dot(&diff, &diff),
        u_star,
        active,
        slack,
        multiplier,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterDecision<T> {
    pub u: Vec<T>,
    pub triggered: bool,
    pub qp: Option<QpResult<T>>,
    pub used_backup: bool,
}

/// Two-branch switching law: pass `policy_output` through when the sampled
/// state is outside the annulus, otherwise solve the barrier QP around it.
/// States already below the annulus (`h < -b`) also trigger, best effort.
pub fn safety_filter<T: Scalar>(
    cfg: &FilterConfig<T>,
    policy_output: &[T],
    u_prev: Option<&[T]>,
    x: &[T],
    t: T,
) -> Result<FilterDecision<T>> {
    let h = cfg.barrier.eval_h(x, t);
    if h > cfg.barrier.a() {
        return Ok(FilterDecision {
            u: policy_output.to_vec(),
            triggered: false,
            qp: None,
            used_backup: false,
        });
    }
    if h < -cfg.barrier.b() {
        log::warn!(
            "sampled state left the safe set beyond the annulus (h = {h} at t = {t}); filtering best effort"
        );
    }
    match solve_barrier_qp(cfg, policy_output, u_prev, x, t) {
        Ok(qp) => Ok(FilterDecision {
            u: qp.u_star.clone(),
            triggered: true,
            qp: Some(qp),
            used_backup: false,
        }),
        Err(err @ Error::QpInfeasible { .. }) => match cfg.fallback {
            Fallback::Error => Err(err),
            Fallback::UseBackup => {
                log::warn!("barrier QP infeasible at t = {t}; applying backup law");
                let u = analytic_backup(&cfg.barrier, &cfg.sys, &cfg.constants, x, t)?;
                Ok(FilterDecision {
                    u: cfg.input_set.clamp(&u),
                    triggered: true,
                    qp: None,
                    used_backup: true,
                })
            }
        },
        Err(err) => Err(err),
    }
}

/// Closed-form corridor input satisfying the annulus condition with equality:
///
/// `u = x_r'(t) - A x - (x - x_r) / (2 ||x - x_r||^2) * (margin_ii - alpha h)`
///
/// Defined for states no deeper than the annulus inner edge,
/// `||x - x_r||^2 >= eps - a`, which keeps away from the singularity at the
/// reference.
pub fn analytic_backup<T: Scalar>(
    bf: &BarrierFunction<T>,
    sys: &SystemDynamics<T>,
    consts: &BarrierConstants<T>,
    x: &[T],
    t: T,
) -> Result<Vec<T>> {
    let corridor = bf.as_corridor().ok_or_else(|| {
        Error::UnsupportedModel("analytic backup needs a corridor barrier".into())
    })?;
    let e = corridor.error(x, t);
    let guard = corridor.epsilon() - bf.a();
    if scalar::dot(&e, &e) < guard {
        return Err(Error::BackupPrecondition {
            t: t.as_f64(),
            reason: format!(
                "state deeper than the annulus inner edge (||x - x_r||^2 < {})",
                guard.as_f64()
            ),
        });
    }
    corridor.equalizing_input(sys, bf.alpha(), consts.margin_ii, true, x, t)
}

/// The analytic backup as a [`ControlLaw`] for certification.
pub struct BackupLaw<'a, T> {
    pub barrier: &'a BarrierFunction<T>,
    pub sys: &'a SystemDynamics<T>,
    pub constants: &'a BarrierConstants<T>,
}

impl<T: Scalar> ControlLaw<T> for BackupLaw<'_, T> {
    fn input(&self, x: &[T], t: T) -> Result<Vec<T>> {
        analytic_backup(self.barrier, self.sys, self.constants, x, t)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::barrier::{estimate_constants, ClassK, CorridorBarrier, GridSpec};
    use crate::model::ReferenceTrajectory;
    use crate::scalar::Mat;

    fn paper_cfg() -> FilterConfig<f64> {
        let corridor =
            CorridorBarrier::new(0.2, ReferenceTrajectory::sinusoid(1, 0.5, 0.5)).unwrap();
        let bf = BarrierFunction::corridor(corridor, ClassK::Linear(0.5), 0.03, 1e-5).unwrap();
        let sys = SystemDynamics::linear(Mat::scalar(1.0), Mat::scalar(1.0)).unwrap();
        let input = InputSet::symmetric(1, 2.0).unwrap();
        let spec = GridSpec {
            time_samples: 5,
            ..GridSpec::default()
        };
        let consts = estimate_constants(&bf, &sys, &input, 0.3, 0.01, &spec).unwrap();
        FilterConfig::new(bf, sys, consts, input)
    }

    fn xr(cfg: &FilterConfig<f64>, t: f64) -> f64 {
        cfg.barrier.as_corridor().unwrap().reference().value(t)[0]
    }

    #[test]
    fn one_dimensional_projection() {
        let (u, l) =
            project_halfspace_box::<f64>(&[0.0], &[1.0], 0.5, &[-2.0], &[2.0], 1e-9).unwrap();
        assert!((u[0] - 0.5).abs() < 1e-15 && l > 0.0);
        let (u, _) =
            project_halfspace_box::<f64>(&[0.5], &[-1.0], 0.2, &[-1.0], &[1.0], 1e-12).unwrap();
        assert!((u[0] + 0.2).abs() < 1e-12, "{u:?}");
        let (u, l) = project_halfspace_box(&[0.7], &[1.0], 0.5, &[-2.0], &[2.0], 1e-9).unwrap();
        assert_eq!((u[0], l), (0.7, 0.0));
        let best = project_halfspace_box(&[0.0], &[0.0], 1.0, &[-2.0], &[2.0], 1e-9).unwrap_err();
        assert_eq!(best, -1.0);
    }

    #[test]
    fn filter_passes_policy_through_at_reference() {
        let cfg = paper_cfg();
        for &t in &[0.0, 1.0, 7.5] {
            let d = safety_filter(&cfg, &[1.7], None, &[xr(&cfg, t)], t).unwrap();
            assert_eq!((d.u, d.triggered), (vec![1.7], false));
        }
    }

    #[test]
    fn filter_triggers_inside_annulus() {
        let cfg = paper_cfg();
        let t = 0.4;
        // h = a / 2
        let x = xr(&cfg, t) + (0.2f64 - 0.015).sqrt();
        let d = safety_filter(&cfg, &[0.0], None, &[x], t).unwrap();
        assert!(d.triggered);
        let qp = d.qp.unwrap();
        assert!(qp.slack >= -1e-9);

        // an input already satisfying the condition is returned untouched
        let u_ok = qp.u_star[0];
        let d = safety_filter(&cfg, &[u_ok], None, &[x], t).unwrap();
        assert!(d.triggered);
        assert_eq!(d.u, vec![u_ok]);
        assert_eq!(d.qp.unwrap().objective, 0.0);
    }

    #[test]
    fn trigger_soundness() {
        let cfg = paper_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let t: f64 = rng.gen_range(0.0..20.0);
            let x = xr(&cfg, t) + rng.gen_range(-0.447..0.447);
            let h = cfg.barrier.eval_h(&[x], t);
            let d = safety_filter(&cfg, &[0.0], None, &[x], t).unwrap();
            assert_eq!(d.triggered, (-1e-5..=0.03).contains(&h), "h = {h}");
        }
    }

    #[test]
    fn backup_examples() {
        let cfg = paper_cfg();
        let c = &cfg.constants;
        // boundary at t = 0
        let x = [0.2f64.sqrt()];
        let u = analytic_backup(&cfg.barrier, &cfg.sys, c, &x, 0.0).unwrap();
        let slack = cfg
            .barrier
            .check_condition_ii(&cfg.sys, c, &x, &u, 0.0)
            .slack;
        assert!(slack.abs() < 1e-9, "{slack}");
        // inner edge h = a
        let x = [-(0.17f64.sqrt())];
        let u = analytic_backup(&cfg.barrier, &cfg.sys, c, &x, 0.0).unwrap();
        assert!(u[0].abs() <= 2.0);
        // at the reference
        assert!(matches!(
            analytic_backup(&cfg.barrier, &cfg.sys, c, &[0.0], 0.0),
            Err(Error::BackupPrecondition { .. })
        ));
    }

    #[test]
    fn backup_equalizes_condition_at_interior_point() {
        let cfg = paper_cfg();
        // x = 0.3 at t = 0 is deeper than the annulus; the formula itself
        // still makes phi equal to the margin.
        let corridor = cfg.barrier.as_corridor().unwrap();
        let u = corridor
            .equalizing_input(
                &cfg.sys,
                cfg.barrier.alpha(),
                cfg.constants.margin_ii,
                true,
                &[0.3],
                0.0,
            )
            .unwrap();
        let phi = cfg.barrier.eval_phi(&cfg.sys, &[0.3], &u, 0.0);
        assert!((phi - cfg.constants.margin_ii).abs() < 1e-12);
    }

    #[test]
    fn infeasible_qp_respects_fallback() {
        let mut cfg = paper_cfg();
        cfg.constants.margin_ii = 100.0;
        let x = [0.2f64.sqrt()];
        assert!(matches!(
            safety_filter(&cfg, &[0.0], None, &x, 0.0),
            Err(Error::QpInfeasible { .. })
        ));
        let cfg = cfg.with_fallback(Fallback::UseBackup);
        let d = safety_filter(&cfg, &[0.0], None, &x, 0.0).unwrap();
        assert!(d.used_backup && d.triggered);
        assert!(cfg.input_set.contains(&d.u));
    }

    #[test]
    fn rate_penalty_pulls_towards_previous_input() {
        let cfg = paper_cfg().with_rate_penalty(4.0);
        let t = 0.4;
        let x = [xr(&cfg, t) + (0.2f64 - 0.015).sqrt()];
        let plain = safety_filter(&paper_cfg(), &[1.0], None, &x, t).unwrap().u[0];
        let smooth = safety_filter(&cfg, &[1.0], Some(&[-2.0]), &x, t).unwrap().u[0];
        assert!(smooth <= plain);
        assert!(
            cfg.barrier
                .check_condition_ii(&cfg.sys, &cfg.constants, &x, &[smooth], t)
                .slack
                >= -1e-9
        );
    }
}
