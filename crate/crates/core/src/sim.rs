//! Sampled-data closed loop: the controller runs every `dt`, its output is
//! held while the true perturbed plant is integrated with RK4 substeps, and
//! every substep is logged.

use std::fmt::Write as _;

use crate::dpc::{PolicyNetwork, ReferenceMode};
use crate::error::{Error, Result};
use crate::filter::{analytic_backup, safety_filter, FilterConfig};
use crate::model::{DisturbanceSpec, ReferenceTrajectory, SystemDynamics};
use crate::scalar::{self, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerMode {
    /// Zero nominal input through the safety filter.
    ZeroPolicyFilter,
    PolicyOnly,
    PolicyFilter,
    /// Closed-form backup input on and below the annulus, zero elsewhere,
    /// through the safety filter.
    BackupOnlyFilter,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 4] = [
        ControllerMode::ZeroPolicyFilter,
        ControllerMode::PolicyOnly,
        ControllerMode::PolicyFilter,
        ControllerMode::BackupOnlyFilter,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerMode::ZeroPolicyFilter => "zero-policy+filter",
            ControllerMode::PolicyOnly => "policy-only",
            ControllerMode::PolicyFilter => "policy+filter",
            ControllerMode::BackupOnlyFilter => "backup-only+filter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero-policy+filter" | "zero-policy" => Some(ControllerMode::ZeroPolicyFilter),
            "policy-only" => Some(ControllerMode::PolicyOnly),
            "policy+filter" => Some(ControllerMode::PolicyFilter),
            "backup-only+filter" | "backup-only" => Some(ControllerMode::BackupOnlyFilter),
            _ => None,
        }
    }

    pub fn needs_policy(&self) -> bool {
        matches!(
            self,
            ControllerMode::PolicyOnly | ControllerMode::PolicyFilter
        )
    }

    pub fn filtered(&self) -> bool {
        !matches!(self, ControllerMode::PolicyOnly)
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig<T: Scalar> {
    /// The true plant; may differ from the filter's model.
    pub sys: SystemDynamics<T>,
    pub disturbance: DisturbanceSpec<T>,
    pub reference: ReferenceTrajectory<T>,
    pub controller: ControllerMode,
    pub dt: T,
    pub substeps: usize,
    pub t_end: T,
    pub x0: Vec<T>,
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be >= 1".into()));
        }
        if !(self.dt > T::zero()) || !(self.t_end > T::zero()) {
            return Err(Error::InvalidParameter("dt and t_end must be > 0".into()));
        }
        if self.x0.len() != self.sys.n_x() {
            return Err(Error::Shape("initial state dimension".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub t: T,
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub reference: Vec<T>,
    pub h: T,
    /// `phi(x, u, t) - margin_ii` with the held input.
    pub phi_slack: T,
    pub triggered: bool,
    /// Row at a control sample instant.
    pub sample: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics<T> {
    pub min_h: T,
    pub violation_count: usize,
    pub trigger_fraction: T,
    pub rms_tracking_error: T,
    pub max_input_norm: T,
    pub samples: usize,
}

impl<T: Scalar> Metrics<T> {
    pub fn to_key_values(&self) -> String {
        format!(
            "min_h={}\nviolation_count={}\ntrigger_fraction={}\nrms_tracking_error={}\nmax_input_norm={}\nsamples={}\n",
            self.min_h,
            self.violation_count,
            self.trigger_fraction,
            self.rms_tracking_error,
            self.max_input_norm,
            self.samples
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog<T> {
    pub mode: ControllerMode,
    pub rows: Vec<StepRecord<T>>,
    pub metrics: Metrics<T>,
}

impl<T: Scalar> TrajectoryLog<T> {
    pub fn csv_header(n_x: usize, n_u: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..n_x).map(|i| format!("x{i}")));
        cols.extend((0..n_u).map(|i| format!("u{i}")));
        cols.extend((0..n_x).map(|i| format!("ref{i}")));
        cols.extend(["h", "phi_slack", "triggered", "mode"].map(String::from));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let (n_x, n_u) = self.rows.first().map_or((0, 0), |r| (r.x.len(), r.u.len()));
        let mut out = Self::csv_header(n_x, n_u);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.t);
            for v in r.x.iter().chain(&r.u).chain(&r.reference) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                r.h,
                r.phi_slack,
                u8::from(r.triggered),
                self.mode.as_str()
            );
        }
        out
    }
}

/// Metrics recomputed from the rows alone.
pub fn compute_metrics<T: Scalar>(rows: &[StepRecord<T>]) -> Metrics<T> {
    let samples = rows.iter().filter(|r| r.sample).count();
    let triggered = rows.iter().filter(|r| r.sample && r.triggered).count();
    let sq: T = rows
        .iter()
        .map(|r| {
            let e = scalar::sub(&r.x, &r.reference);
            scalar::dot(&e, &e)
        })
        .sum();
    Metrics {
        min_h: rows.iter().fold(T::infinity(), |m, r| m.min(r.h)),
        violation_count: rows.iter().filter(|r| r.h < T::zero()).count(),
        trigger_fraction: if samples == 0 {
            T::zero()
        } else {
            T::idx(triggered) / T::idx(samples)
        },
        rms_tracking_error: if rows.is_empty() {
            T::zero()
        } else {
            (sq / T::idx(rows.len())).sqrt()
        },
        max_input_norm: rows
            .iter()
            .fold(T::zero(), |m, r| m.max(scalar::norm_inf(&r.u))),
        samples,
    }
}

/// One classical RK4 step of `x' = f(x) + g(x) u + w(t)` with `u` frozen.
pub fn integrate_step<T: Scalar>(
    sys: &SystemDynamics<T>,
    x: &[T],
    u: &[T],
    t: T,
    h: T,
    disturbance: &DisturbanceSpec<T>,
) -> Result<Vec<T>> {
    let two = T::lit(2.0);
    let half = h / two;
    let rhs = |x: &[T], t: T| sys.rhs(x, u, &disturbance.sample(t));
    let k1 = rhs(x, t);
    let k2 = rhs(&scalar::add(x, &scalar::scale(&k1, half)), t + half);
    let k3 = rhs(&scalar::add(x, &scalar::scale(&k2, half)), t + half);
    let k4 = rhs(&scalar::add(x, &scalar::scale(&k3, h)), t + h);
    let sixth = h / T::lit(6.0);
    let next: Vec<T> = (0..x.len())
        .map(|i| x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            t: (t + h).as_f64(),
        });
    }
    Ok(next)
}

fn preview<T: Scalar>(reference: &ReferenceTrajectory<T>, t: T, dt: T, horizon: usize) -> Vec<T> {
    (0..horizon)
        .flat_map(|j| reference.value(t + dt * T::idx(j)))
        .collect()
}

/// Runs the sampled-data loop over `[0, t_end]`. The filter configuration
/// supplies the barrier and constants for logging in every mode and is only
/// applied in the filtered modes.
///
/// A policy sees the preview of the reference it was trained on: the
/// scenario reference for true-reference policies, zeros otherwise. Safety
/// is always judged against the scenario reference.
pub fn run_closed_loop<T: Scalar>(
    cfg: &SimConfig<T>,
    policy: Option<&PolicyNetwork<T>>,
    filter: &FilterConfig<T>,
) -> Result<TrajectoryLog<T>> {
    cfg.validate()?;
    let mode = cfg.controller;
    let policy = match (mode.needs_policy(), policy) {
        (true, None) => {
            return Err(Error::MissingDependency {
                mode: mode.as_str().into(),
                missing: "policy weights",
            })
        }
        (_, p) => p,
    };
    let bf = &filter.barrier;
    let n_u = filter.input_set.dim();
    let steps = (cfg.t_end / cfg.dt).round().as_f64() as usize;
    let h_sub = cfg.dt / T::idx(cfg.substeps);
    let slack_at =
        |x: &[T], u: &[T], t: T| bf.eval_phi(&filter.sys, x, u, t) - filter.constants.margin_ii;

    let mut rows = Vec::with_capacity(steps * cfg.substeps + 1);
    let mut x = cfg.x0.clone();
    let mut u_prev: Option<Vec<T>> = None;
    let mut last = (vec![T::zero(); n_u], false);
    for k in 0..steps {
        let t_k = cfg.dt * T::idx(k);
        let nominal = match mode {
            ControllerMode::ZeroPolicyFilter => vec![T::zero(); n_u],
            ControllerMode::PolicyOnly | ControllerMode::PolicyFilter => {
                let net = policy.expect("checked above");
                let xi = match net.meta().reference_mode {
                    ReferenceMode::True => preview(&cfg.reference, t_k, cfg.dt, net.meta().horizon),
                    ReferenceMode::Zero => vec![T::zero(); cfg.sys.n_x() * net.meta().horizon],
                };
                net.forward(&x, &xi)?
            }
            ControllerMode::BackupOnlyFilter => {
                if bf.eval_h(&x, t_k) <= bf.a() {
                    let u = analytic_backup(bf, &filter.sys, &filter.constants, &x, t_k)?;
                    filter.input_set.clamp(&u)
                } else {
                    vec![T::zero(); n_u]
                }
            }
        };
        let (u, triggered) = if mode.filtered() {
            let d = safety_filter(filter, &nominal, u_prev.as_deref(), &x, t_k)?;
            (d.u, d.triggered)
        } else {
            (nominal, false)
        };
        for s in 0..cfg.substeps {
            let t = t_k + h_sub * T::idx(s);
            rows.push(StepRecord {
                t,
                x: x.clone(),
                u: u.clone(),
                reference: cfg.reference.value(t),
                h: bf.eval_h(&x, t),
                phi_slack: slack_at(&x, &u, t),
                triggered,
                sample: s == 0,
            });
            x = integrate_step(&cfg.sys, &x, &u, t, h_sub, &cfg.disturbance)?;
        }
        u_prev = Some(u.clone());
        last = (u, triggered);
    }
    let t_final = cfg.dt * T::idx(steps);
    rows.push(StepRecord {
        t: t_final,
        x: x.clone(),
        u: last.0.clone(),
        reference: cfg.reference.value(t_final),
        h: bf.eval_h(&x, t_final),
        phi_slack: slack_at(&x, &last.0, t_final),
        triggered: last.1,
        sample: false,
    });
    let metrics = compute_metrics(&rows);
    Ok(TrajectoryLog {
        mode,
        rows,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{estimate_constants, BarrierFunction, ClassK, CorridorBarrier, GridSpec};
    use crate::filter::Fallback;
    use crate::model::{DisturbanceKind, InputSet};
    use crate::scalar::Mat;

    fn scalar_sys(a: f64) -> SystemDynamics<f64> {
        SystemDynamics::linear(Mat::scalar(a), Mat::scalar(1.0)).unwrap()
    }

    fn paper_filter() -> FilterConfig<f64> {
        let corridor =
            CorridorBarrier::new(0.2, ReferenceTrajectory::sinusoid(1, 0.5, 0.5)).unwrap();
        let bf = BarrierFunction::corridor(corridor, ClassK::Linear(0.5), 0.03, 1e-5).unwrap();
        let sys = scalar_sys(1.0);
        let input = InputSet::symmetric(1, 2.0).unwrap();
        let spec = GridSpec {
            time_samples: 5,
            ..GridSpec::default()
        };
        let consts = estimate_constants(&bf, &sys, &input, 0.3, 0.01, &spec).unwrap();
        FilterConfig::new(bf, sys, consts, input).with_fallback(Fallback::UseBackup)
    }

    fn paper_sim(mode: ControllerMode, disturbance: DisturbanceSpec<f64>) -> SimConfig<f64> {
        SimConfig {
            sys: scalar_sys(1.0),
            disturbance,
            reference: ReferenceTrajectory::sinusoid(1, 0.5, 0.5),
            controller: mode,
            dt: 0.01,
            substeps: 10,
            t_end: 20.0,
            x0: vec![0.0],
        }
    }

    fn sinusoid() -> DisturbanceSpec<f64> {
        DisturbanceSpec::new(
            DisturbanceKind::Sinusoid {
                amplitude: 0.3,
                frequency: 1.0,
                phase: 0.0,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn rk4_examples() {
        let zero = DisturbanceSpec::zero(1);
        assert_eq!(
            integrate_step(&scalar_sys(0.0), &[0.7], &[0.0], 0.0, 0.01, &zero).unwrap(),
            vec![0.7]
        );
        let x = integrate_step(&scalar_sys(0.0), &[0.2], &[1.0], 0.0, 0.001, &zero).unwrap();
        assert!((x[0] - 0.201).abs() < 1e-15);
        let x = integrate_step(&scalar_sys(1.0), &[1.0], &[0.0], 0.0, 0.01, &zero).unwrap();
        assert!((x[0] - 0.01f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn non_finite_state_is_an_error() {
        let zero = DisturbanceSpec::zero(1);
        assert!(matches!(
            integrate_step(&scalar_sys(1.0), &[f64::MAX], &[0.0], 0.0, 1.0, &zero),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn zero_dynamics_keep_state_constant() {
        let mut cfg = paper_sim(ControllerMode::ZeroPolicyFilter, DisturbanceSpec::zero(1));
        cfg.sys = scalar_sys(0.0);
        cfg.reference = ReferenceTrajectory::constant(vec![0.0]);
        cfg.t_end = 1.0;
        cfg.x0 = vec![0.1];
        let corridor = CorridorBarrier::new(0.2, ReferenceTrajectory::constant(vec![0.0])).unwrap();
        let bf = BarrierFunction::corridor(corridor, ClassK::Linear(0.5), 0.03, 1e-5).unwrap();
        let input = InputSet::symmetric(1, 2.0).unwrap();
        let spec = GridSpec {
            time_samples: 3,
            t_span: Some(1.0),
            ..GridSpec::default()
        };
        let consts = estimate_constants(&bf, &cfg.sys, &input, 0.0, 0.01, &spec).unwrap();
        let filter = FilterConfig::new(bf, cfg.sys.clone(), consts, input);
        let log = run_closed_loop(&cfg, None, &filter).unwrap();
        assert!(log
            .rows
            .iter()
            .all(|r| r.x == vec![0.1] && r.u == vec![0.0]));
        assert_eq!(log.metrics.trigger_fraction, 0.0);
    }

    #[test]
    fn backup_mode_is_safe_and_holds_inputs() {
        let cfg = paper_sim(ControllerMode::BackupOnlyFilter, sinusoid());
        let filter = paper_filter();
        let log = run_closed_loop(&cfg, None, &filter).unwrap();
        assert!(log.metrics.min_h >= 0.0, "{:?}", log.metrics);
        assert_eq!(log.metrics.violation_count, 0);
        assert!(log.metrics.max_input_norm <= 2.0);
        assert_eq!(log.rows.len(), 2000 * 10 + 1);
        for period in log.rows[..20_000].chunks(10) {
            assert!(period
                .iter()
                .all(|r| r.u == period[0].u && r.triggered == period[0].triggered));
        }
        for w in log.rows.windows(2) {
            assert!((w[1].t - w[0].t - 0.001).abs() < 1e-9);
        }
        assert_eq!(compute_metrics(&log.rows), log.metrics);
    }

    #[test]
    fn same_config_same_log() {
        let dist = DisturbanceSpec::new(
            DisturbanceKind::PiecewiseRandom {
                amplitude: 0.3,
                hold: 0.001,
                seed: 3,
            },
            1,
        )
        .unwrap();
        let mut cfg = paper_sim(ControllerMode::ZeroPolicyFilter, dist);
        cfg.t_end = 2.0;
        let filter = paper_filter();
        assert_eq!(
            run_closed_loop(&cfg, None, &filter).unwrap(),
            run_closed_loop(&cfg, None, &filter).unwrap()
        );
    }

    #[test]
    fn policy_modes_need_a_policy() {
        let cfg = paper_sim(ControllerMode::PolicyOnly, sinusoid());
        assert!(matches!(
            run_closed_loop(&cfg, None, &paper_filter()),
            Err(Error::MissingDependency { .. })
        ));
    }

    #[test]
    fn metrics_of_trivial_logs() {
        let row: StepRecord<f64> = StepRecord {
            t: 0.0,
            x: vec![0.1],
            u: vec![-1.5],
            reference: vec![0.0],
            h: 0.2,
            phi_slack: 0.0,
            triggered: true,
            sample: true,
        };
        let m = compute_metrics(std::slice::from_ref(&row));
        assert_eq!(
            (m.min_h, m.violation_count, m.trigger_fraction),
            (0.2, 0, 1.0)
        );
        assert!((m.rms_tracking_error - 0.1).abs() < 1e-15);
        assert_eq!(m.max_input_norm, 1.5);
        let rows = vec![
            StepRecord {
                triggered: false,
                ..row
            };
            5
        ];
        assert_eq!(compute_metrics(&rows).min_h, 0.2);
    }

    #[test]
    fn csv_header_matches_schema() {
        assert_eq!(
            TrajectoryLog::<f64>::csv_header(2, 1),
            "t,x0,x1,u0,ref0,ref1,h,phi_slack,triggered,mode"
        );
        for m in ControllerMode::ALL {
            assert_eq!(ControllerMode::parse(m.as_str()), Some(m));
        }
    }
}
