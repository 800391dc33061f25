//! Scalar comparison system behind the annulus construction: if
//! `psi' >= -alpha(psi)` is only enforced while `psi` is in `[-b, a]` and
//! `psi(0) >= 0`, then `psi` never becomes negative.

use crate::scalar::Scalar;

use super::ClassK;

/// Forward-Euler integration of `psi' = -alpha(psi) + s(t)` where the raw
/// forcing is clipped to `max(s, 0)` whenever `psi` lies in `[-b, a]` and
/// left untouched elsewhere. Returns `psi` at every step, including `psi0`.
///
/// The step must be small enough that one step cannot cross the whole band,
/// i.e. `dt * (alpha(psi) + |s|) < a` along the run.
pub fn integrate_band_forced<T: Scalar>(
    alpha: ClassK<T>,
    a: T,
    b: T,
    psi0: T,
    forcing: impl Fn(T) -> T,
    dt: T,
    steps: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut psi = psi0;
    out.push(psi);
    for k in 0..steps {
        let t = dt * T::idx(k);
        let raw = forcing(t);
        let s = if psi >= -b && psi <= a {
            raw.max(T::zero())
        } else {
            raw
        };
        psi += dt * (s - alpha.eval(psi));
        out.push(psi);
    }
    out
}
