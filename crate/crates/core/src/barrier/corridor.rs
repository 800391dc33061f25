use crate::error::{Error, Result};
use crate::model::{BoxSet, InputSet, ReferenceTrajectory, SystemDynamics};
use crate::scalar::{self, Scalar};

use super::{BarrierShape, ClassK, RawBounds};

/// Tube `h(x, t) = epsilon - ||x - x_r(t)||^2` around a reference.
#[derive(Clone, Debug)]
pub struct CorridorBarrier<T: Scalar> {
    epsilon: T,
    reference: ReferenceTrajectory<T>,
}

impl<T: Scalar> CorridorBarrier<T> {
    pub fn new(epsilon: T, reference: ReferenceTrajectory<T>) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidParameter(
                "corridor epsilon must be > 0".into(),
            ));
        }
        Ok(Self { epsilon, reference })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn reference(&self) -> &ReferenceTrajectory<T> {
        &self.reference
    }

    /// Tracking error `x - x_r(t)`.
    pub fn error(&self, x: &[T], t: T) -> Vec<T> {
        scalar::sub(x, &self.reference.value(t))
    }

    /// Largest tracking-error norm on `h >= -b`.
    pub fn outer_radius(&self, b: T) -> T {
        (self.epsilon + b).sqrt()
    }

    /// Input that makes the affine barrier condition hold with equality:
    ///
    /// `u = [x_r'] - A x - e / (2 ||e||^2) * (margin - alpha(h))`
    ///
    /// where the reference velocity term is present only when the condition
    /// carries `dh/dt` on its left side. Requires `g = I` and a linear drift.
    pub(crate) fn equalizing_input(
        &self,
        sys: &SystemDynamics<T>,
        alpha: ClassK<T>,
        margin: T,
        with_reference_velocity: bool,
        x: &[T],
        t: T,
    ) -> Result<Vec<T>> {
        let a = sys.linear_drift().ok_or_else(|| {
            Error::UnsupportedModel("corridor backup law needs a linear drift".into())
        })?;
        if !sys.constant_gain().is_some_and(|g| g.is_identity()) {
            return Err(Error::UnsupportedModel(
                "corridor backup law needs an identity input gain".into(),
            ));
        }
        let e = self.error(x, t);
        let e2 = scalar::dot(&e, &e);
        if !(e2 > T::zero()) {
            return Err(Error::BackupPrecondition {
                t: t.as_f64(),
                reason: "state coincides with the reference".into(),
            });
        }
        let h = self.epsilon - e2;
        let gain = (margin - alpha.eval(h)) / (T::lit(2.0) * e2);
        let ax = a.mul_vec(x);
        let vel = if with_reference_velocity {
            self.reference.velocity(t)
        } else {
            vec![T::zero(); x.len()]
        };
        Ok(vel
            .iter()
            .zip(&ax)
            .zip(&e)
            .map(|((&v, &ax), &ei)| v - ax - ei * gain)
            .collect())
    }

    /// Worst-case infinity norm of the equalizing input over the annulus:
    /// `v_r + ||A||_inf (sqrt(eps + b) + x_r) + sqrt(n) / (2 sqrt(eps - a)) (margin + alpha max(a, b))`.
    pub fn backup_norm_bound(
        &self,
        sys: &SystemDynamics<T>,
        alpha: ClassK<T>,
        margin: T,
        a: T,
        b: T,
        with_reference_velocity: bool,
    ) -> Option<T> {
        let a_mat = sys.linear_drift()?;
        if !(a < self.epsilon) {
            return None;
        }
        let n = T::idx(self.reference.n_x());
        let vel = if with_reference_velocity {
            self.reference.v_bar_r()
        } else {
            T::zero()
        };
        Some(
            vel + a_mat.norm_inf() * (self.outer_radius(b) + self.reference.x_bar_r())
                + n.sqrt() / (T::lit(2.0) * (self.epsilon - a).sqrt())
                    * (margin + alpha.eval(a.max(b))),
        )
    }
}

impl<T: Scalar> BarrierShape<T> for CorridorBarrier<T> {
    fn n_x(&self) -> usize {
        self.reference.n_x()
    }

    fn value(&self, x: &[T], t: T) -> T {
        let e = self.error(x, t);
        self.epsilon - scalar::dot(&e, &e)
    }

    fn grad_x(&self, x: &[T], t: T) -> Vec<T> {
        scalar::scale(&self.error(x, t), T::lit(-2.0))
    }

    fn partial_t(&self, x: &[T], t: T) -> T {
        T::lit(2.0) * scalar::dot(&self.error(x, t), &self.reference.velocity(t))
    }

    /// Bounds from `||e|| <= rho = sqrt(eps + b)`, `||x|| <= x_r + rho`:
    ///
    /// ```text
    /// L_h,x  = h_bar_x = 2 rho          L_h,t = h_bar_t = 2 rho v_r
    /// L_hf,x = 2 |A| (x_r + 2 rho)      L_hf,t = 2 |A| v_r (x_r + rho)
    /// L_hg,x = 2 |G|                    L_hg,t = 2 |G| v_r
    /// L_ht,x = 2 v_r                    L_ht,t = 2 (v_r^2 + rho a_r)
    /// chi    = |A| (x_r + rho) + |G| u_bar
    /// ```
    fn closed_form_bounds(
        &self,
        sys: &SystemDynamics<T>,
        input: &InputSet<T>,
        b: T,
    ) -> Option<RawBounds<T>> {
        let a = sys.linear_drift()?.norm_frobenius();
        let g = sys.constant_gain()?.norm_frobenius();
        let two = T::lit(2.0);
        let rho = self.outer_radius(b);
        let xr = self.reference.x_bar_r();
        let vr = self.reference.v_bar_r();
        let ar = self.reference.a_bar_r();
        Some(RawBounds {
            l_h_x: two * rho,
            l_h_t: two * rho * vr,
            l_hf_x: two * a * (xr + two * rho),
            l_hf_t: two * a * vr * (xr + rho),
            l_hg_x: two * g,
            l_hg_t: two * g * vr,
            l_ht_x: two * vr,
            l_ht_t: two * (vr * vr + rho * ar),
            h_bar_x: two * rho,
            h_bar_t: two * rho * vr,
            chi: a * (xr + rho) + g * input.euclidean_bound(),
        })
    }

    fn region_box(&self, b: T) -> Option<BoxSet<T>> {
        let reach = self.reference.x_bar_r() + self.outer_radius(b);
        let pad = reach * T::lit(1e-3);
        let n = self.n_x();
        Some(BoxSet {
            lower: vec![-(reach + pad); n],
            upper: vec![reach + pad; n],
        })
    }

    fn time_span(&self) -> Option<T> {
        self.reference.period()
    }

    fn as_corridor(&self) -> Option<&CorridorBarrier<T>> {
        Some(self)
    }
}
