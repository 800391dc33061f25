//! Perturbed control-affine plant, its forward-Euler training model, input
//! box, bounded disturbance signals and reference trajectories.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{self, Mat, Scalar};

pub type VectorFn<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;
pub type MatrixFn<T> = Arc<dyn Fn(&[T]) -> Mat<T> + Send + Sync>;
pub type TimeFn<T> = Arc<dyn Fn(T) -> Vec<T> + Send + Sync>;

/// Axis-aligned box `lower <= x <= upper`. Bounds may be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> BoxSet<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Shape(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidParameter(
                "box lower bound must be strictly below upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![T::neg_infinity(); n],
            upper: vec![T::infinity(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[T]) -> bool {
        self.contains_tol(x, T::zero())
    }

    pub fn contains_tol(&self, x: &[T], tol: T) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
    }

    pub fn clamp(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| v.max(l).min(u))
            .collect()
    }

    /// Componentwise distance outside the box, zero inside.
    pub fn violation(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(T::zero()))
            .collect()
    }
}

/// Compact input box `U`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSet<T> {
    bounds: BoxSet<T>,
    u_bar: T,
}

impl<T: Scalar> InputSet<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        let bounds = BoxSet::new(lower, upper)?;
        if bounds
            .lower
            .iter()
            .chain(&bounds.upper)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter("input set must be bounded".into()));
        }
        let u_bar = bounds
            .lower
            .iter()
            .chain(&bounds.upper)
            .fold(T::zero(), |m, v| m.max(v.abs()));
        Ok(Self { bounds, u_bar })
    }

    /// Symmetric box `|u_i| <= bound` in `n` dimensions.
    pub fn symmetric(n: usize, bound: T) -> Result<Self> {
        Self::new(vec![-bound; n], vec![bound; n])
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn lower(&self) -> &[T] {
        &self.bounds.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.bounds.upper
    }

    pub fn bounds(&self) -> &BoxSet<T> {
        &self.bounds
    }

    /// Largest componentwise magnitude over the box.
    pub fn u_bar(&self) -> T {
        self.u_bar
    }

    /// Largest Euclidean norm over the box (attained at a vertex).
    pub fn euclidean_bound(&self) -> T {
        self.bounds
            .lower
            .iter()
            .zip(&self.bounds.upper)
            .map(|(l, u)| {
                let m = l.abs().max(u.abs());
                m * m
            })
            .sum::<T>()
            .sqrt()
    }

    pub fn contains(&self, u: &[T]) -> bool {
        self.bounds.contains(u)
    }

    pub fn contains_tol(&self, u: &[T], tol: T) -> bool {
        self.bounds.contains_tol(u, tol)
    }

    pub fn clamp(&self, u: &[T]) -> Vec<T> {
        self.bounds.clamp(u)
    }

    /// All `2^n` box corners.
    pub fn vertices(&self) -> Vec<Vec<T>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| {
                        if mask & (1 << i) == 0 {
                            self.bounds.lower[i]
                        } else {
                            self.bounds.upper[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone)]
pub enum Drift<T> {
    /// `f(x) = A x`
    Linear(Mat<T>),
    Nonlinear(VectorFn<T>),
}

#[derive(Clone)]
pub enum InputGain<T> {
    Constant(Mat<T>),
    StateDependent(MatrixFn<T>),
}

/// Continuous-time perturbed plant `x' = f(x) + g(x) u + w(t)`.
#[derive(Clone)]
pub struct SystemDynamics<T> {
    n_x: usize,
    n_u: usize,
    drift: Drift<T>,
    gain: InputGain<T>,
    domain: BoxSet<T>,
}

impl<T: Scalar> fmt::Debug for SystemDynamics<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDynamics")
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("linear", &self.linear_drift().is_some())
            .field("domain", &self.domain)
            .finish()
    }
}

impl<T: Scalar> SystemDynamics<T> {
    /// `x' = A x + B u + w` on an unbounded domain.
    pub fn linear(a: Mat<T>, b: Mat<T>) -> Result<Self> {
        if a.rows() != a.cols() || b.rows() != a.rows() {
            return Err(Error::Shape(format!(
                "A is {}x{}, B is {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        let n_x = a.rows();
        Ok(Self {
            n_x,
            n_u: b.cols(),
            drift: Drift::Linear(a),
            gain: InputGain::Constant(b),
            domain: BoxSet::unbounded(n_x),
        })
    }

    pub fn nonlinear(n_x: usize, n_u: usize, f: VectorFn<T>, g: MatrixFn<T>) -> Self {
        Self {
            n_x,
            n_u,
            drift: Drift::Nonlinear(f),
            gain: InputGain::StateDependent(g),
            domain: BoxSet::unbounded(n_x),
        }
    }

    pub fn with_domain(mut self, domain: BoxSet<T>) -> Result<Self> {
        if domain.dim() != self.n_x {
            return Err(Error::Shape("domain box dimension".into()));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn domain(&self) -> &BoxSet<T> {
        &self.domain
    }

    pub fn linear_drift(&self) -> Option<&Mat<T>> {
        match &self.drift {
            Drift::Linear(a) => Some(a),
            Drift::Nonlinear(_) => None,
        }
    }

    pub fn constant_gain(&self) -> Option<&Mat<T>> {
        match &self.gain {
            InputGain::Constant(b) => Some(b),
            InputGain::StateDependent(_) => None,
        }
    }

    pub fn f(&self, x: &[T]) -> Vec<T> {
        match &self.drift {
            Drift::Linear(a) => a.mul_vec(x),
            Drift::Nonlinear(f) => f(x),
        }
    }

    pub fn g(&self, x: &[T]) -> Mat<T> {
        match &self.gain {
            InputGain::Constant(b) => b.clone(),
            InputGain::StateDependent(g) => g(x),
        }
    }

    /// `f(x) + g(x) u + w` without the domain check.
    pub fn rhs(&self, x: &[T], u: &[T], w: &[T]) -> Vec<T> {
        let mut out = self.f(x);
        let gu = self.g(x).mul_vec(u);
        for ((o, gi), wi) in out.iter_mut().zip(gu).zip(w) {
            *o += gi + *wi;
        }
        out
    }

    pub fn eval_vector_field(&self, x: &[T], u: &[T], w: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_x || u.len() != self.n_u || w.len() != self.n_x {
            return Err(Error::Shape(format!(
                "expected x[{}], u[{}], w[{}]",
                self.n_x, self.n_u, self.n_x
            )));
        }
        if !self.domain.contains(x) {
            return Err(Error::OutOfDomain {
                state: x.iter().map(|v| v.as_f64()).collect(),
            });
        }
        Ok(self.rhs(x, u, w))
    }
}

/// Bounded disturbance signal `w(t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum DisturbanceKind<T> {
    Zero,
    Sinusoid {
        amplitude: T,
        frequency: T,
        phase: T,
    },
    /// Uniform random value per hold interval, reproducible from the seed.
    PiecewiseRandom {
        amplitude: T,
        hold: T,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceSpec<T> {
    kind: DisturbanceKind<T>,
    n_x: usize,
    w_bar: T,
}

impl<T: Scalar> DisturbanceSpec<T> {
    pub fn new(kind: DisturbanceKind<T>, n_x: usize) -> Result<Self> {
        let w_bar = match &kind {
            DisturbanceKind::Zero => T::zero(),
            DisturbanceKind::Sinusoid { amplitude, .. } => amplitude.abs(),
            DisturbanceKind::PiecewiseRandom {
                amplitude, hold, ..
            } => {
                if !(*hold > T::zero()) {
                    return Err(Error::InvalidParameter("hold interval must be > 0".into()));
                }
                amplitude.abs()
            }
        };
        Ok(Self { kind, n_x, w_bar })
    }

    pub fn zero(n_x: usize) -> Self {
        Self {
            kind: DisturbanceKind::Zero,
            n_x,
            w_bar: T::zero(),
        }
    }

    pub fn kind(&self) -> &DisturbanceKind<T> {
        &self.kind
    }

    pub fn w_bar(&self) -> T {
        self.w_bar
    }

    /// Euclidean norm of every sample is at most `w_bar`; the vector points
    /// along the diagonal for `n_x > 1`.
    pub fn sample(&self, t: T) -> Vec<T> {
        let n = self.n_x;
        let spread = T::idx(n).sqrt().recip();
        match &self.kind {
            DisturbanceKind::Zero => vec![T::zero(); n],
            DisturbanceKind::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                let v = *amplitude * (*frequency * t + *phase).sin() * spread;
                vec![v; n]
            }
            DisturbanceKind::PiecewiseRandom {
                amplitude,
                hold,
                seed,
            } => {
                let slot = (t.max(T::zero()) / *hold).floor().to_u64().unwrap_or(0);
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(slot);
                (0..n)
                    .map(|_| {
                        let r: f64 = rng.gen_range(-1.0..=1.0);
                        *amplitude * T::lit(r) * spread
                    })
                    .collect()
            }
        }
    }
}

/// Time-varying reference `x_r(t)` with declared bounds on its value,
/// velocity and acceleration.
#[derive(Clone)]
pub struct ReferenceTrajectory<T> {
    value: TimeFn<T>,
    velocity: TimeFn<T>,
    acceleration: TimeFn<T>,
    n_x: usize,
    x_bar_r: T,
    v_bar_r: T,
    a_bar_r: T,
    period: Option<T>,
    description: String,
}

impl<T: Scalar> fmt::Debug for ReferenceTrajectory<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceTrajectory")
            .field("description", &self.description)
            .field("x_bar_r", &self.x_bar_r)
            .field("v_bar_r", &self.v_bar_r)
            .field("period", &self.period)
            .finish()
    }
}

impl<T: Scalar> ReferenceTrajectory<T> {
    /// `x_r(t) = amplitude * sin(frequency * t)` on every axis.
    pub fn sinusoid(n_x: usize, amplitude: T, frequency: T) -> Self {
        let (amp, w) = (amplitude, frequency);
        let root_n = T::idx(n_x).sqrt();
        let period = if w > T::zero() {
            Some(T::TAU() / w)
        } else {
            None
        };
        Self {
            value: Arc::new(move |t| vec![amp * (w * t).sin(); n_x]),
            velocity: Arc::new(move |t| vec![amp * w * (w * t).cos(); n_x]),
            acceleration: Arc::new(move |t| vec![-amp * w * w * (w * t).sin(); n_x]),
            n_x,
            x_bar_r: amp.abs() * root_n,
            v_bar_r: (amp * w).abs() * root_n,
            a_bar_r: (amp * w * w).abs() * root_n,
            period,
            description: format!("{amplitude}*sin({frequency}*t)"),
        }
    }

    pub fn constant(point: Vec<T>) -> Self {
        let n_x = point.len();
        let x_bar_r = scalar::norm2(&point);
        let p = point.clone();
        Self {
            value: Arc::new(move |_| p.clone()),
            velocity: Arc::new(move |_| vec![T::zero(); n_x]),
            acceleration: Arc::new(move |_| vec![T::zero(); n_x]),
            n_x,
            x_bar_r,
            v_bar_r: T::zero(),
            a_bar_r: T::zero(),
            period: None,
            description: format!("constant {point:?}"),
        }
    }

    /// Arbitrary reference from closures and declared bounds.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        n_x: usize,
        value: TimeFn<T>,
        velocity: TimeFn<T>,
        acceleration: TimeFn<T>,
        x_bar_r: T,
        v_bar_r: T,
        a_bar_r: T,
        period: Option<T>,
    ) -> Self {
        Self {
            value,
            velocity,
            acceleration,
            n_x,
            x_bar_r,
            v_bar_r,
            a_bar_r,
            period,
            description: "custom".into(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn x_bar_r(&self) -> T {
        self.x_bar_r
    }

    pub fn v_bar_r(&self) -> T {
        self.v_bar_r
    }

    pub fn a_bar_r(&self) -> T {
        self.a_bar_r
    }

    pub fn period(&self) -> Option<T> {
        self.period
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn value(&self, t: T) -> Vec<T> {
        (self.value)(t)
    }

    pub fn velocity(&self, t: T) -> Vec<T> {
        (self.velocity)(t)
    }

    pub fn acceleration(&self, t: T) -> Vec<T> {
        (self.acceleration)(t)
    }

    pub fn eval(&self, t: T) -> (Vec<T>, Vec<T>) {
        (self.value(t), self.velocity(t))
    }

    /// Span used when a bound must hold "for all t": one period, or a
    /// nominal window for aperiodic references.
    pub fn check_span(&self) -> T {
        self.period.unwrap_or_else(|| T::lit(10.0))
    }

    /// Sampled maxima of `||x_r||`, `||x_r'||` over one period.
    pub fn sampled_maxima(&self, samples: usize) -> (T, T) {
        let span = self.check_span();
        let n = samples.max(2);
        (0..n).fold((T::zero(), T::zero()), |(mx, mv), i| {
            let t = span * T::idx(i) / T::idx(n - 1);
            let (x, v) = self.eval(t);
            (mx.max(scalar::norm2(&x)), mv.max(scalar::norm2(&v)))
        })
    }

    pub fn bounds_hold(&self, samples: usize) -> bool {
        let (mx, mv) = self.sampled_maxima(samples);
        let slack = T::lit(1e-12);
        mx <= self.x_bar_r + slack && mv <= self.v_bar_r + slack
    }
}

/// Forward-Euler model `x_{k+1} = A_d x_k + B_d u_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteModel<T> {
    pub a_d: Mat<T>,
    pub b_d: Mat<T>,
    pub dt: T,
}

impl<T: Scalar> DiscreteModel<T> {
    pub fn n_x(&self) -> usize {
        self.a_d.rows()
    }

    pub fn n_u(&self) -> usize {
        self.b_d.cols()
    }

    pub fn step(&self, x: &[T], u: &[T]) -> Vec<T> {
        scalar::add(&self.a_d.mul_vec(x), &self.b_d.mul_vec(u))
    }
}

/// `A_d = I + dt A`, `B_d = dt B`; requires a linear drift and constant gain.
pub fn discretize<T: Scalar>(sys: &SystemDynamics<T>, dt: T) -> Result<DiscreteModel<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidParameter(
            "sampling period must be > 0".into(),
        ));
    }
    let a = sys
        .linear_drift()
        .ok_or_else(|| Error::UnsupportedModel("discretization needs a linear drift".into()))?;
    let b = sys
        .constant_gain()
        .ok_or_else(|| Error::UnsupportedModel("discretization needs a constant gain".into()))?;
    Ok(DiscreteModel {
        a_d: Mat::identity(sys.n_x()).plus(&a.scaled(dt)),
        b_d: b.scaled(dt),
        dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn paper_plant() -> SystemDynamics<f64> {
        SystemDynamics::linear(Mat::scalar(1.0), Mat::scalar(1.0)).unwrap()
    }

    #[test]
    fn vector_field_examples() {
        let zero = SystemDynamics::linear(Mat::scalar(0.0), Mat::scalar(1.0)).unwrap();
        assert_eq!(
            zero.eval_vector_field(&[0.0], &[0.0], &[0.0]).unwrap(),
            vec![0.0]
        );
        let sys = paper_plant();
        assert_eq!(
            sys.eval_vector_field(&[0.5], &[-0.5], &[0.0]).unwrap(),
            vec![0.0]
        );
        let w = DisturbanceSpec::new(
            DisturbanceKind::Sinusoid {
                amplitude: 0.3,
                frequency: 1.0,
                phase: 0.0,
            },
            1,
        )
        .unwrap();
        let xdot = sys
            .eval_vector_field(&[0.2], &[0.1], &w.sample(0.0))
            .unwrap();
        assert!((xdot[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let sys = paper_plant()
            .with_domain(BoxSet::new(vec![-4.0], vec![4.0]).unwrap())
            .unwrap();
        assert!(matches!(
            sys.eval_vector_field(&[4.5], &[0.0], &[0.0]),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn disturbance_examples() {
        let sin = DisturbanceSpec::new(
            DisturbanceKind::Sinusoid {
                amplitude: 0.3,
                frequency: 1.0,
                phase: 0.0,
            },
            1,
        )
        .unwrap();
        assert!((sin.sample(std::f64::consts::FRAC_PI_2)[0] - 0.3).abs() < 1e-15);
        assert_eq!(DisturbanceSpec::<f64>::zero(1).sample(3.7), vec![0.0]);
        let rnd = DisturbanceSpec::new(
            DisturbanceKind::PiecewiseRandom {
                amplitude: 0.3,
                hold: 0.1,
                seed: 7,
            },
            1,
        )
        .unwrap();
        let t = 0.31;
        assert_eq!(rnd.sample(t), rnd.sample(t + 0.05));
        assert_ne!(rnd.sample(t), rnd.sample(t + 0.1));
    }

    #[test]
    fn disturbance_bound_over_many_times() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let specs = [
            DisturbanceSpec::new(
                DisturbanceKind::Sinusoid {
                    amplitude: 0.3,
                    frequency: 1.0,
                    phase: 0.2,
                },
                2,
            )
            .unwrap(),
            DisturbanceSpec::new(
                DisturbanceKind::PiecewiseRandom {
                    amplitude: 0.3,
                    hold: 0.001,
                    seed: 3,
                },
                3,
            )
            .unwrap(),
        ];
        for spec in &specs {
            for _ in 0..10_000 {
                let t: f64 = rng.gen_range(0.0..100.0);
                assert!(scalar::norm2(&spec.sample(t)) <= spec.w_bar() + 1e-15);
            }
        }
    }

    #[test]
    fn discretize_examples() {
        let d = discretize(&paper_plant(), 0.01).unwrap();
        assert!((d.a_d[(0, 0)] - 1.01).abs() < 1e-15);
        assert!((d.b_d[(0, 0)] - 0.01).abs() < 1e-15);
        let integ: SystemDynamics<f64> =
            SystemDynamics::linear(Mat::scalar(0.0), Mat::scalar(1.0)).unwrap();
        let d = discretize(&integ, 0.01).unwrap();
        assert_eq!((d.a_d[(0, 0)], d.b_d[(0, 0)]), (1.0, 0.01));
        let stable: SystemDynamics<f64> =
            SystemDynamics::linear(Mat::scalar(-2.0), Mat::scalar(1.0)).unwrap();
        assert!((discretize(&stable, 0.1).unwrap().a_d[(0, 0)] - 0.8).abs() < 1e-15);

        let nl = SystemDynamics::nonlinear(
            1,
            1,
            Arc::new(|x: &[f64]| vec![x[0].sin()]),
            Arc::new(|_: &[f64]| Mat::scalar(1.0)),
        );
        assert!(matches!(
            discretize(&nl, 0.01),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn euler_gap_is_second_order() {
        // exact ZOH step of x' = a x + u versus the Euler model
        let (a, x0, u) = (1.0f64, 0.7, -0.4);
        let sys = SystemDynamics::linear(Mat::scalar(a), Mat::scalar(1.0)).unwrap();
        let gap = |dt: f64| {
            let exact = (a * dt).exp() * x0 + ((a * dt).exp() - 1.0) / a * u;
            let d = discretize(&sys, dt).unwrap();
            (d.step(&[x0], &[u])[0] - exact).abs()
        };
        let dt = 0.01;
        let c = gap(dt) / (dt * dt);
        let half = gap(dt / 2.0);
        assert!(half <= c * (dt / 2.0).powi(2) * 1.01, "{half} vs {c}");
        assert!(gap(dt) <= c * dt * dt * (1.0 + 1e-9));
    }

    #[test]
    fn reference_examples() {
        let r = ReferenceTrajectory::sinusoid(1, 0.5, 0.5);
        let (x, v) = r.eval(0.0);
        assert_eq!((x[0], v[0]), (0.0, 0.25));
        let (x, v) = r.eval(std::f64::consts::PI);
        assert!((x[0] - 0.5).abs() < 1e-15 && v[0].abs() < 1e-15);
        let c = ReferenceTrajectory::constant(vec![0.0]);
        assert_eq!(c.eval(12.3), (vec![0.0], vec![0.0]));
        assert!(r.bounds_hold(2001));
        assert_eq!(r.x_bar_r(), 0.5);
        assert_eq!(r.v_bar_r(), 0.25);
    }

    #[test]
    fn input_set_invariants() {
        assert!(InputSet::new(vec![1.0], vec![1.0]).is_err());
        let u = InputSet::new(vec![-1.0, -3.0], vec![2.0, 0.5]).unwrap();
        assert_eq!(u.u_bar(), 3.0);
        assert_eq!(u.vertices().len(), 4);
        assert!((u.euclidean_bound() - 13.0f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn reference_derivative_matches_central_difference(
            t in 0.0f64..50.0, amp in 0.1f64..2.0, w in 0.1f64..3.0
        ) {
            let r = ReferenceTrajectory::sinusoid(1, amp, w);
            let h = 1e-5;
            let fd = (r.value(t + h)[0] - r.value(t - h)[0]) / (2.0 * h);
            let v = r.velocity(t)[0];
            prop_assert!((fd - v).abs() <= 1e-6 * v.abs().max(amp * w));
        }
    }
}
