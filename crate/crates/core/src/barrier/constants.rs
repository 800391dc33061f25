//! Lipschitz constants and bounds feeding the sampled-data robustness margin.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BoxSet, InputSet, SystemDynamics};
use crate::scalar::{self, Scalar};

use super::{BarrierFunction, ClassK};

/// Alpha-independent primitives. `l_h_*` are the constants of `h` itself;
/// the constants of `alpha o h` follow from the Lipschitz constant of alpha.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawBounds<T> {
    pub l_h_x: T,
    pub l_h_t: T,
    pub l_hf_x: T,
    pub l_hf_t: T,
    pub l_hg_x: T,
    pub l_hg_t: T,
    pub l_ht_x: T,
    pub l_ht_t: T,
    pub h_bar_x: T,
    pub h_bar_t: T,
    pub chi: T,
}

impl<T: Scalar> RawBounds<T> {
    pub fn zero() -> Self {
        Self {
            l_h_x: T::zero(),
            l_h_t: T::zero(),
            l_hf_x: T::zero(),
            l_hf_t: T::zero(),
            l_hg_x: T::zero(),
            l_hg_t: T::zero(),
            l_ht_x: T::zero(),
            l_ht_t: T::zero(),
            h_bar_x: T::zero(),
            h_bar_t: T::zero(),
            chi: T::zero(),
        }
    }

    fn fields(&self) -> [T; 11] {
        [
            self.l_h_x,
            self.l_h_t,
            self.l_hf_x,
            self.l_hf_t,
            self.l_hg_x,
            self.l_hg_t,
            self.l_ht_x,
            self.l_ht_t,
            self.h_bar_x,
            self.h_bar_t,
            self.chi,
        ]
    }

    fn from_fields(f: [T; 11]) -> Self {
        Self {
            l_h_x: f[0],
            l_h_t: f[1],
            l_hf_x: f[2],
            l_hf_t: f[3],
            l_hg_x: f[4],
            l_hg_t: f[5],
            l_ht_x: f[6],
            l_ht_t: f[7],
            h_bar_x: f[8],
            h_bar_t: f[9],
            chi: f[10],
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self::from_fields(self.fields().map(|v| v * factor))
    }

    pub fn max(&self, other: &Self) -> Self {
        let (a, b) = (self.fields(), other.fields());
        Self::from_fields(std::array::from_fn(|i| a[i].max(b[i])))
    }

    /// True when every field is `<=` the matching field of `other` (up to `tol`).
    pub fn dominated_by(&self, other: &Self, tol: T) -> bool {
        self.fields()
            .iter()
            .zip(other.fields())
            .all(|(&a, b)| a <= b + tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantSource {
    ClosedForm,
    Grid,
}

impl ConstantSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstantSource::ClosedForm => "closed-form",
            ConstantSource::Grid => "grid",
        }
    }
}

/// Composed constants for one `(alpha, u_bar, w_bar, dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierConstants<T> {
    pub l_ah_x: T,
    pub l_hf_x: T,
    pub l_hg_x: T,
    pub l_ht_x: T,
    pub l_ah_t: T,
    pub l_hf_t: T,
    pub l_hg_t: T,
    pub l_ht_t: T,
    pub l_h_x: T,
    pub h_bar_x: T,
    pub h_bar_t: T,
    pub chi: T,
    pub eta: T,
    pub nu_bar: T,
    pub nu: T,
    pub margin_ii: T,
    pub margin_i: T,
    pub h_bar_reach: T,
    pub u_bar: T,
    pub w_bar: T,
    pub dt: T,
    pub raw: RawBounds<T>,
    pub source: ConstantSource,
}

impl<T: Scalar> BarrierConstants<T> {
    /// `u_bar` is the largest input norm over `U`.
    pub fn compose(
        raw: RawBounds<T>,
        alpha: ClassK<T>,
        u_bar: T,
        w_bar: T,
        dt: T,
        source: ConstantSource,
    ) -> Self {
        let l_ah_x = alpha.lipschitz() * raw.l_h_x;
        let l_ah_t = alpha.lipschitz() * raw.l_h_t;
        let eta = raw.chi + w_bar;
        let nu_bar = (l_ah_x + raw.l_hf_x + raw.l_ht_x + raw.l_hg_x * u_bar) * eta
            + l_ah_t
            + raw.l_hf_t
            + raw.l_ht_t
            + raw.l_hg_t * u_bar;
        let nu = (l_ah_x + raw.l_hf_x + raw.l_hg_x * u_bar) * (raw.chi + w_bar)
            + (l_ah_t + raw.l_hf_t + raw.l_hg_t * u_bar);
        Self {
            l_ah_x,
            l_hf_x: raw.l_hf_x,
            l_hg_x: raw.l_hg_x,
            l_ht_x: raw.l_ht_x,
            l_ah_t,
            l_hf_t: raw.l_hf_t,
            l_hg_t: raw.l_hg_t,
            l_ht_t: raw.l_ht_t,
            l_h_x: raw.l_h_x,
            h_bar_x: raw.h_bar_x,
            h_bar_t: raw.h_bar_t,
            chi: raw.chi,
            eta,
            nu_bar,
            nu,
            margin_ii: nu_bar * dt + raw.h_bar_x * w_bar,
            margin_i: nu * dt + raw.h_bar_t + raw.h_bar_x * w_bar,
            h_bar_reach: raw.l_h_x * eta * dt,
            u_bar,
            w_bar,
            dt,
            raw,
            source,
        }
    }

    /// Same primitives under a different alpha.
    pub fn with_alpha(&self, alpha: ClassK<T>) -> Self {
        Self::compose(
            self.raw,
            alpha,
            self.u_bar,
            self.w_bar,
            self.dt,
            self.source,
        )
    }

    /// All-zero constants, mostly useful in tests.
    pub fn zeroed() -> Self {
        Self::compose(
            RawBounds::zero(),
            ClassK::Linear(T::one()),
            T::zero(),
            T::zero(),
            T::zero(),
            ConstantSource::Grid,
        )
    }

    pub fn all_nonnegative(&self) -> bool {
        [
            self.l_ah_x,
            self.l_hf_x,
            self.l_hg_x,
            self.l_ht_x,
            self.l_ah_t,
            self.l_hf_t,
            self.l_hg_t,
            self.l_ht_t,
            self.l_h_x,
            self.h_bar_x,
            self.h_bar_t,
            self.chi,
            self.eta,
            self.nu_bar,
            self.nu,
            self.margin_ii,
            self.margin_i,
            self.h_bar_reach,
        ]
        .iter()
        .all(|&v| v >= T::zero())
    }

    pub fn fields(&self) -> Vec<(&'static str, T)> {
        vec![
            ("L_ah_x", self.l_ah_x),
            ("L_hf_x", self.l_hf_x),
            ("L_hg_x", self.l_hg_x),
            ("L_ht_x", self.l_ht_x),
            ("L_ah_t", self.l_ah_t),
            ("L_hf_t", self.l_hf_t),
            ("L_hg_t", self.l_hg_t),
            ("L_ht_t", self.l_ht_t),
            ("L_h_x", self.l_h_x),
            ("h_bar_x", self.h_bar_x),
            ("h_bar_t", self.h_bar_t),
            ("chi", self.chi),
            ("eta", self.eta),
            ("nu_bar", self.nu_bar),
            ("nu", self.nu),
            ("margin_ii", self.margin_ii),
            ("margin_i", self.margin_i),
            ("h_bar_reach", self.h_bar_reach),
            ("u_bar", self.u_bar),
            ("w_bar", self.w_bar),
            ("dt", self.dt),
        ]
    }
}

/// Minimum annulus width: the largest `h` reachable from the boundary within
/// one sampling period. The upper width `a` must exceed it.
pub fn compute_min_annulus_width<T: Scalar>(consts: &BarrierConstants<T>) -> T {
    consts.h_bar_reach
}

/// Which part of state space the grid quantities are taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// `h in [-b, a]`
    Annulus,
    /// `h >= -b`, the safe set together with the annulus.
    SafeAndAnnulus,
}

#[derive(Clone, Debug)]
pub struct GridSpec<T> {
    /// Defaults to the barrier's own region box.
    pub state_box: Option<BoxSet<T>>,
    pub points_per_axis: usize,
    pub time_samples: usize,
    pub t_start: T,
    /// Defaults to the barrier's period.
    pub t_span: Option<T>,
    pub safety_factor: T,
    pub region: Region,
}

impl<T: Scalar> Default for GridSpec<T> {
    fn default() -> Self {
        Self {
            state_box: None,
            points_per_axis: 201,
            time_samples: 401,
            t_start: T::zero(),
            t_span: None,
            safety_factor: T::lit(1.2),
            region: Region::Annulus,
        }
    }
}

impl<T: Scalar> GridSpec<T> {
    pub fn with_region(mut self, region: Region) -> Self {
        self.region = region;
        self
    }
}

/// Evaluated grid: state points, per-axis strides and time samples.
pub(crate) struct Grid<T> {
    pub states: Vec<Vec<T>>,
    pub strides: Vec<usize>,
    pub points_per_axis: usize,
    pub spacing: Vec<T>,
    pub times: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn build(bf: &BarrierFunction<T>, spec: &GridSpec<T>) -> Result<Self> {
        let bx = spec
            .state_box
            .clone()
            .or_else(|| bf.shape().region_box(bf.b()))
            .ok_or_else(|| Error::Estimation("grid needs an explicit state box".into()))?;
        if bx.dim() != bf.n_x() {
            return Err(Error::Shape("grid box dimension".into()));
        }
        if bx.lower.iter().chain(&bx.upper).any(|v| !v.is_finite()) {
            return Err(Error::Estimation("grid box must be bounded".into()));
        }
        let p = spec.points_per_axis;
        if p < 2 || spec.time_samples < 1 {
            return Err(Error::InvalidParameter(
                "grid needs >= 2 points per axis and >= 1 time sample".into(),
            ));
        }
        let n = bx.dim();
        let total = p
            .checked_pow(n as u32)
            .ok_or_else(|| Error::InvalidParameter("grid too large".into()))?;
        let spacing: Vec<T> = (0..n)
            .map(|d| (bx.upper[d] - bx.lower[d]) / T::idx(p - 1))
            .collect();
        let strides: Vec<usize> = (0..n).map(|d| p.pow(d as u32)).collect();
        let states = (0..total)
            .map(|idx| {
                (0..n)
                    .map(|d| bx.lower[d] + spacing[d] * T::idx((idx / strides[d]) % p))
                    .collect()
            })
            .collect();
        let span = spec
            .t_span
            .or_else(|| bf.shape().time_span())
            .unwrap_or_else(T::one);
        let nt = spec.time_samples;
        let times = (0..nt)
            .map(|j| {
                if nt == 1 {
                    spec.t_start
                } else {
                    spec.t_start + span * T::idx(j) / T::idx(nt - 1)
                }
            })
            .collect();
        Ok(Self {
            states,
            strides,
            points_per_axis: p,
            spacing,
            times,
        })
    }

    /// Neighbour of `idx` one step up along axis `d`, if inside the grid.
    pub fn neighbour(&self, idx: usize, d: usize) -> Option<usize> {
        let coord = (idx / self.strides[d]) % self.points_per_axis;
        (coord + 1 < self.points_per_axis).then(|| idx + self.strides[d])
    }

    pub fn in_region(bf: &BarrierFunction<T>, region: Region, h: T) -> bool {
        match region {
            Region::Annulus => bf.h_in_annulus(h),
            Region::SafeAndAnnulus => h >= -bf.b(),
        }
    }
}

struct PointEval<T> {
    h: T,
    hf: T,
    hg: Vec<T>,
    ht: T,
    grad_norm: T,
    chi: T,
}

fn eval_slice<T: Scalar>(
    bf: &BarrierFunction<T>,
    sys: &SystemDynamics<T>,
    vertices: &[Vec<T>],
    grid: &Grid<T>,
    region: Region,
    t: T,
) -> Vec<Option<PointEval<T>>> {
    grid.states
        .iter()
        .map(|x| {
            let h = bf.eval_h(x, t);
            if !Grid::in_region(bf, region, h) {
                return None;
            }
            let grad = bf.grad_x(x, t);
            let f = sys.f(x);
            let g = sys.g(x);
            let chi = vertices.iter().fold(T::zero(), |m, u| {
                m.max(scalar::norm2(&scalar::add(&f, &g.mul_vec(u))))
            });
            Some(PointEval {
                h,
                hf: scalar::dot(&grad, &f),
                hg: g.tr_mul_vec(&grad),
                ht: bf.dh_dt(x, t),
                grad_norm: scalar::norm2(&grad),
                chi,
            })
        })
        .collect()
}

fn quotient<T: Scalar>(a: T, b: T, dist: T) -> T {
    (a - b).abs() / dist
}

/// Unscaled grid maxima of every primitive over the requested region.
/// Lipschitz constants are maxima of finite-difference quotients over
/// adjacent grid pairs lying in the region. Returns the bounds and the
/// number of (state, time) grid points in the region.
pub fn grid_bounds<T: Scalar>(
    bf: &BarrierFunction<T>,
    sys: &SystemDynamics<T>,
    input: &InputSet<T>,
    spec: &GridSpec<T>,
) -> Result<(RawBounds<T>, usize)> {
    if sys.n_x() != bf.n_x() || sys.n_u() != input.dim() {
        return Err(Error::Shape("barrier, plant and input set disagree".into()));
    }
    let grid = Grid::build(bf, spec)?;
    let vertices = input.vertices();
    let nt = grid.times.len();
    let dt_grid = if nt > 1 {
        grid.times[1] - grid.times[0]
    } else {
        T::one()
    };

    let (bounds, count) = (0..nt)
        .into_par_iter()
        .map(|j| {
            let cur = eval_slice(bf, sys, &vertices, &grid, spec.region, grid.times[j]);
            let mut acc = RawBounds::<T>::zero();
            let mut count = 0usize;
            for (idx, p) in cur.iter().enumerate() {
                let Some(p) = p else { continue };
                count += 1;
                acc.h_bar_x = acc.h_bar_x.max(p.grad_norm);
                acc.h_bar_t = acc.h_bar_t.max(p.ht.abs());
                acc.chi = acc.chi.max(p.chi);
                for d in 0..grid.strides.len() {
                    let Some(nb) = grid.neighbour(idx, d) else {
                        continue;
                    };
                    let Some(q) = &cur[nb] else { continue };
                    let dist = grid.spacing[d];
                    acc.l_h_x = acc.l_h_x.max(quotient(p.h, q.h, dist));
                    acc.l_hf_x = acc.l_hf_x.max(quotient(p.hf, q.hf, dist));
                    acc.l_hg_x = acc
                        .l_hg_x
                        .max(scalar::norm2(&scalar::sub(&p.hg, &q.hg)) / dist);
                    acc.l_ht_x = acc.l_ht_x.max(quotient(p.ht, q.ht, dist));
                }
            }
            if j + 1 < nt {
                let next = eval_slice(bf, sys, &vertices, &grid, spec.region, grid.times[j + 1]);
                for (p, q) in cur.iter().zip(&next) {
                    let (Some(p), Some(q)) = (p, q) else { continue };
                    acc.l_h_t = acc.l_h_t.max(quotient(p.h, q.h, dt_grid));
                    acc.l_hf_t = acc.l_hf_t.max(quotient(p.hf, q.hf, dt_grid));
                    acc.l_hg_t = acc
                        .l_hg_t
                        .max(scalar::norm2(&scalar::sub(&p.hg, &q.hg)) / dt_grid);
                    acc.l_ht_t = acc.l_ht_t.max(quotient(p.ht, q.ht, dt_grid));
                }
            }
            (acc, count)
        })
        .reduce(
            || (RawBounds::zero(), 0),
            |(a, ca), (b, cb)| (a.max(&b), ca + cb),
        );
    if count == 0 {
        return Err(Error::Estimation(
            "no grid point falls inside the requested region".into(),
        ));
    }
    Ok((bounds, count))
}

#[derive(Clone, Debug)]
pub struct ConstantEstimate<T> {
    pub constants: BarrierConstants<T>,
    /// Raw grid maxima before the safety factor.
    pub grid: RawBounds<T>,
    pub closed_form: Option<RawBounds<T>>,
    pub grid_points: usize,
}

/// Grid estimate inflated by the safety factor, replaced by closed-form
/// bounds whenever the barrier provides them.
pub fn estimate_constants_detailed<T: Scalar>(
    bf: &BarrierFunction<T>,
    sys: &SystemDynamics<T>,
    input: &InputSet<T>,
    w_bar: T,
    dt: T,
    spec: &GridSpec<T>,
) -> Result<ConstantEstimate<T>> {
    if !(dt >= T::zero()) || !(w_bar >= T::zero()) {
        return Err(Error::InvalidParameter("dt and w_bar must be >= 0".into()));
    }
    let (grid, grid_points) = grid_bounds(bf, sys, input, spec)?;
    let closed_form = bf.shape().closed_form_bounds(sys, input, bf.b());
    let (raw, source) = match closed_form {
        Some(cf) => (cf, ConstantSource::ClosedForm),
        None => (grid.scaled(spec.safety_factor), ConstantSource::Grid),
    };
    let constants =
        BarrierConstants::compose(raw, bf.alpha(), input.euclidean_bound(), w_bar, dt, source);
    Ok(ConstantEstimate {
        constants,
        grid,
        closed_form,
        grid_points,
    })
}

pub fn estimate_constants<T: Scalar>(
    bf: &BarrierFunction<T>,
    sys: &SystemDynamics<T>,
    input: &InputSet<T>,
    w_bar: T,
    dt: T,
    spec: &GridSpec<T>,
) -> Result<BarrierConstants<T>> {
    estimate_constants_detailed(bf, sys, input, w_bar, dt, spec).map(|e| e.constants)
}
