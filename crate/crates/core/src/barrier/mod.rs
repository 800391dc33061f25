//! Time-varying barrier functions, the annulus trigger region around the
//! safe-set boundary, the robustness constants and the two sampled-data
//! barrier conditions.
//!
//! The operative condition evaluated on the annulus `h(x, t) in [-b, a]` is
//!
//! ```text
//! phi(x, u, t) = dh/dx (f(x) + g(x) u) + dh/dt + alpha(h) >= nu_bar dt + h_bar_x w_bar
//! ```
//!
//! The older condition (checked on the whole safe set, kept for comparison)
//! drops `dh/dt` from the left side and puts `h_bar_t` on the right.

mod certify;
pub mod comparison;
mod constants;
mod corridor;

use std::fmt;
use std::sync::Arc;

pub use certify::{
    certify_sdzcbf1, certify_sdzcbf2, CertReport, ControlLaw, Def1Report, TheoremCase,
};
pub use constants::{
    compute_min_annulus_width, estimate_constants, estimate_constants_detailed, grid_bounds,
    BarrierConstants, ConstantEstimate, ConstantSource, GridSpec, RawBounds, Region,
};
pub use corridor::CorridorBarrier;

use crate::model::{BoxSet, InputSet, SystemDynamics};
use crate::scalar::{self, Scalar};

/// The differentiable function `h(x, t)` describing the safe set `h >= 0`.
pub trait BarrierShape<T: Scalar>: Send + Sync {
    fn n_x(&self) -> usize;

    fn value(&self, x: &[T], t: T) -> T;

    fn grad_x(&self, x: &[T], t: T) -> Vec<T>;

    fn partial_t(&self, x: &[T], t: T) -> T;

    /// Certified bounds over the region `h >= -b`, when the structure of `h`
    /// and the plant admit closed forms.
    fn closed_form_bounds(
        &self,
        _sys: &SystemDynamics<T>,
        _input: &InputSet<T>,
        _b: T,
    ) -> Option<RawBounds<T>> {
        None
    }

    /// Box containing every `x` with `h(x, t) >= -b` for all `t`.
    fn region_box(&self, _b: T) -> Option<BoxSet<T>> {
        None
    }

    /// Natural time span over which time-varying quantities repeat.
    fn time_span(&self) -> Option<T> {
        None
    }

    fn as_corridor(&self) -> Option<&CorridorBarrier<T>> {
        None
    }
}

pub type ScalarFn<T> = Arc<dyn Fn(&[T], T) -> T + Send + Sync>;
pub type GradFn<T> = Arc<dyn Fn(&[T], T) -> Vec<T> + Send + Sync>;

/// Barrier assembled from closures.
#[derive(Clone)]
pub struct FnBarrier<T> {
    pub n_x: usize,
    pub h: ScalarFn<T>,
    pub grad_x: GradFn<T>,
    pub partial_t: ScalarFn<T>,
}

impl<T: Scalar> BarrierShape<T> for FnBarrier<T> {
    fn n_x(&self) -> usize {
        self.n_x
    }

    fn value(&self, x: &[T], t: T) -> T {
        (self.h)(x, t)
    }

    fn grad_x(&self, x: &[T], t: T) -> Vec<T> {
        (self.grad_x)(x, t)
    }

    fn partial_t(&self, x: &[T], t: T) -> T {
        (self.partial_t)(x, t)
    }
}

/// Locally Lipschitz function whose restriction to the nonnegative reals is
/// class-K. Only the linear family ships.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassK<T> {
    Linear(T),
}

impl<T: Scalar> ClassK<T> {
    pub fn eval(&self, h: T) -> T {
        match *self {
            ClassK::Linear(gain) => gain * h,
        }
    }

    /// Lipschitz constant of `alpha` itself, so `L(alpha o h) <= gain * L(h)`.
    pub fn lipschitz(&self) -> T {
        match *self {
            ClassK::Linear(gain) => gain.abs(),
        }
    }

    pub fn gain(&self) -> T {
        match *self {
            ClassK::Linear(gain) => gain,
        }
    }

    pub fn with_gain(&self, gain: T) -> Self {
        match self {
            ClassK::Linear(_) => ClassK::Linear(gain),
        }
    }

    /// `alpha(0) = 0` and strictly increasing on the sampled points of `[0, upper]`.
    pub fn satisfies_class_k(&self, upper: T, samples: usize) -> bool {
        if self.eval(T::zero()) != T::zero() {
            return false;
        }
        let n = samples.max(2);
        let mut prev = self.eval(T::zero());
        (1..n).all(|i| {
            let v = self.eval(upper * T::idx(i) / T::idx(n - 1));
            let ok = v > prev;
            prev = v;
            ok
        })
    }
}

/// `phi = c . u + d`; the barrier condition is affine in the input.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCondition<T> {
    pub coeff: Vec<T>,
    pub offset: T,
}

impl<T: Scalar> AffineCondition<T> {
    pub fn eval(&self, u: &[T]) -> T {
        scalar::dot(&self.coeff, u) + self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionCheck<T> {
    pub satisfied: bool,
    pub slack: T,
}

impl<T: Scalar> ConditionCheck<T> {
    fn from_slack(slack: T) -> Self {
        Self {
            satisfied: slack >= T::zero(),
            slack,
        }
    }
}

/// Barrier function with its class-K multiplier and annulus widths.
#[derive(Clone)]
pub struct BarrierFunction<T> {
    shape: Arc<dyn BarrierShape<T>>,
    alpha: ClassK<T>,
    a: T,
    b: T,
}

impl<T: Scalar> fmt::Debug for BarrierFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BarrierFunction")
            .field("alpha", &self.alpha)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("corridor", &self.shape.as_corridor())
            .finish()
    }
}

impl<T: Scalar> BarrierFunction<T> {
    pub fn new(
        shape: Arc<dyn BarrierShape<T>>,
        alpha: ClassK<T>,
        a: T,
        b: T,
    ) -> crate::Result<Self> {
        if !(a > T::zero() && b > T::zero()) {
            return Err(crate::Error::InvalidParameter(
                "annulus widths a and b must be positive".into(),
            ));
        }
        if !alpha.satisfies_class_k(T::one(), 64) {
            return Err(crate::Error::InvalidParameter(
                "alpha must be class-K on the nonnegative reals".into(),
            ));
        }
        Ok(Self { shape, alpha, a, b })
    }

    pub fn corridor(
        corridor: CorridorBarrier<T>,
        alpha: ClassK<T>,
        a: T,
        b: T,
    ) -> crate::Result<Self> {
        Self::new(Arc::new(corridor), alpha, a, b)
    }

    pub fn shape(&self) -> &dyn BarrierShape<T> {
        self.shape.as_ref()
    }

    pub fn alpha(&self) -> ClassK<T> {
        self.alpha
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn with_alpha(&self, alpha: ClassK<T>) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    pub fn with_widths(&self, a: T, b: T) -> crate::Result<Self> {
        Self::new(self.shape.clone(), self.alpha, a, b)
    }

    pub fn as_corridor(&self) -> Option<&CorridorBarrier<T>> {
        self.shape.as_corridor()
    }

    pub fn n_x(&self) -> usize {
        self.shape.n_x()
    }

    pub fn eval_h(&self, x: &[T], t: T) -> T {
        self.shape.value(x, t)
    }

    pub fn grad_x(&self, x: &[T], t: T) -> Vec<T> {
        self.shape.grad_x(x, t)
    }

    pub fn dh_dt(&self, x: &[T], t: T) -> T {
        self.shape.partial_t(x, t)
    }

    /// `h in [-b, a]`, closed on both ends.
    pub fn h_in_annulus(&self, h: T) -> bool {
        h >= -self.b && h <= self.a
    }

    pub fn in_annulus(&self, x: &[T], t: T) -> bool {
        self.h_in_annulus(self.eval_h(x, t))
    }

    /// `phi(x, . , t)` as an affine function of the input.
    pub fn phi_affine(&self, sys: &SystemDynamics<T>, x: &[T], t: T) -> AffineCondition<T> {
        let grad = self.grad_x(x, t);
        let h = self.eval_h(x, t);
        AffineCondition {
            coeff: sys.g(x).tr_mul_vec(&grad),
            offset: scalar::dot(&grad, &sys.f(x)) + self.dh_dt(x, t) + self.alpha.eval(h),
        }
    }

    /// Left side of the comparison condition, which omits `dh/dt`.
    pub fn phi_i_affine(&self, sys: &SystemDynamics<T>, x: &[T], t: T) -> AffineCondition<T> {
        let grad = self.grad_x(x, t);
        let h = self.eval_h(x, t);
        AffineCondition {
            coeff: sys.g(x).tr_mul_vec(&grad),
            offset: scalar::dot(&grad, &sys.f(x)) + self.alpha.eval(h),
        }
    }

    pub fn eval_phi(&self, sys: &SystemDynamics<T>, x: &[T], u: &[T], t: T) -> T {
        self.phi_affine(sys, x, t).eval(u)
    }

    pub fn check_condition_ii(
        &self,
        sys: &SystemDynamics<T>,
        consts: &BarrierConstants<T>,
        x: &[T],
        u: &[T],
        t: T,
    ) -> ConditionCheck<T> {
        ConditionCheck::from_slack(self.eval_phi(sys, x, u, t) - consts.margin_ii)
    }

    pub fn check_condition_i(
        &self,
        sys: &SystemDynamics<T>,
        consts: &BarrierConstants<T>,
        x: &[T],
        u: &[T],
        t: T,
    ) -> ConditionCheck<T> {
        ConditionCheck::from_slack(self.phi_i_affine(sys, x, t).eval(u) - consts.margin_i)
    }
}
