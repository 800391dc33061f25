//! Grid certification of the annulus barrier condition for a given backup
//! law, plus the whole-safe-set comparison certifier.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{InputSet, SystemDynamics};
use crate::scalar::{self, Scalar};

use super::constants::Grid;
use super::{estimate_constants, BarrierConstants, BarrierFunction, ClassK, GridSpec, Region};

/// Slack tolerance for inputs that satisfy the condition with equality.
const EQUALITY_TOL: f64 = 1e-9;

/// A state-feedback law evaluated at sampling instants.
pub trait ControlLaw<T: Scalar>: Sync {
    fn input(&self, x: &[T], t: T) -> Result<Vec<T>>;
}

impl<T: Scalar, F> ControlLaw<T> for F
where
    F: Fn(&[T], T) -> Result<Vec<T>> + Sync,
{
    fn input(&self, x: &[T], t: T) -> Result<Vec<T>> {
        self(x, t)
    }
}

/// Whether the analysed region `D` lies inside the plant's domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TheoremCase {
    /// `D` inside `X`: safety for all time from any safe initial state.
    DomainContained,
    /// `D` not inside `X`: safety as long as the trajectory stays in `X`.
    DomainExceeded,
}

impl TheoremCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            TheoremCase::DomainContained => "i (D inside X)",
            TheoremCase::DomainExceeded => "ii (D not inside X)",
        }
    }

    fn detect<T: Scalar>(
        bf: &BarrierFunction<T>,
        sys: &SystemDynamics<T>,
        spec: &GridSpec<T>,
    ) -> Self {
        let bx = spec
            .state_box
            .clone()
            .or_else(|| bf.shape().region_box(bf.b()));
        let dom = sys.domain();
        match bx {
            Some(bx) if dom.contains(&bx.lower) && dom.contains(&bx.upper) => {
                TheoremCase::DomainContained
            }
            _ => TheoremCase::DomainExceeded,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CertReport<T> {
    pub theorem_case: TheoremCase,
    pub alpha: T,
    pub a: T,
    pub b: T,
    pub dt: T,
    pub u_bar: T,
    pub w_bar: T,
    pub h_bar_reach: T,
    pub annulus_width_ok: bool,
    pub grid_points: usize,
    pub feasible_points: usize,
    pub backup_failures: usize,
    pub min_slack: T,
    pub max_input_norm: T,
    pub input_norm_ok: bool,
    /// Worst-case bound of the corridor backup law, when it applies.
    pub analytic_norm_bound: Option<T>,
    pub constants: BarrierConstants<T>,
    pub pass: bool,
}

impl<T: Scalar> CertReport<T> {
    pub fn feasible_fraction(&self) -> f64 {
        if self.grid_points == 0 {
            0.0
        } else {
            self.feasible_points as f64 / self.grid_points as f64
        }
    }

    pub fn summary_fields(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("condition".to_string(), "annulus (SD-ZCBFII)".to_string()),
            (
                "verdict".into(),
                if self.pass { "pass" } else { "fail" }.into(),
            ),
            ("theorem_case".into(), self.theorem_case.as_str().into()),
            ("alpha".into(), self.alpha.to_string()),
            ("a".into(), self.a.to_string()),
            ("b".into(), self.b.to_string()),
            ("dt".into(), self.dt.to_string()),
            ("u_bar".into(), self.u_bar.to_string()),
            ("w_bar".into(), self.w_bar.to_string()),
            ("h_bar_reach".into(), self.h_bar_reach.to_string()),
            ("annulus_width_ok".into(), self.annulus_width_ok.to_string()),
            ("grid_points".into(), self.grid_points.to_string()),
            ("feasible_points".into(), self.feasible_points.to_string()),
            ("backup_failures".into(), self.backup_failures.to_string()),
            ("min_slack".into(), self.min_slack.to_string()),
            (
                "max_backup_norm_inf".into(),
                self.max_input_norm.to_string(),
            ),
            ("backup_norm_ok".into(), self.input_norm_ok.to_string()),
            (
                "analytic_backup_norm_bound".into(),
                self.analytic_norm_bound
                    .map_or_else(|| "n/a".into(), |v| v.to_string()),
            ),
            (
                "constants_source".into(),
                self.constants.source.as_str().into(),
            ),
        ];
        out.extend(
            self.constants
                .fields()
                .into_iter()
                .map(|(k, v)| (format!("const.{k}"), v.to_string())),
        );
        out
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        render(&self.summary_fields())
    }
}

fn render(fields: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in fields {
        let _ = writeln!(s, "{k}: {v}");
    }
    s
}

struct Tally<T> {
    points: usize,
    feasible: usize,
    failures: usize,
    min_slack: T,
    max_norm: T,
}

impl<T: Scalar> Tally<T> {
    fn empty() -> Self {
        Self {
            points: 0,
            feasible: 0,
            failures: 0,
            min_slack: T::infinity(),
            max_norm: T::zero(),
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            points: self.points + o.points,
            feasible: self.feasible + o.feasible,
            failures: self.failures + o.failures,
            min_slack: self.min_slack.min(o.min_slack),
            max_norm: self.max_norm.max(o.max_norm),
        }
    }
}

/// Checks the annulus condition with `backup` at every grid point of the
/// annulus over the grid's time window. Failures are recorded, not raised.
pub fn certify_sdzcbf2<T: Scalar>(
    bf: &BarrierFunction<T>,
    sys: &SystemDynamics<T>,
    input: &InputSet<T>,
    consts: &BarrierConstants<T>,
    backup: &dyn ControlLaw<T>,
    spec: &GridSpec<T>,
) -> Result<CertReport<T>> {
    let grid = Grid::build(bf, spec)?;
    let tol = T::lit(EQUALITY_TOL);
    let box_tol = T::lit(1e-12);
    let tally = grid
        .times
        .par_iter()
        .map(|&t| {
            let mut acc = Tally::<T>::empty();
            for x in &grid.states {
                if !bf.in_annulus(x, t) {
                    continue;
                }
                acc.points += 1;
                match backup.input(x, t) {
                    Ok(u) => {
                        let slack = bf.check_condition_ii(sys, consts, x, &u, t).slack;
                        let norm = scalar::norm_inf(&u);
                        acc.min_slack = acc.min_slack.min(slack);
                        acc.max_norm = acc.max_norm.max(norm);
                        if slack >= -tol && input.contains_tol(&u, box_tol) {
                            acc.feasible += 1;
                        }
                    }
                    Err(_) => acc.failures += 1,
                }
            }
            acc
        })
        .reduce(Tally::empty, Tally::merge);

    let annulus_width_ok = bf.a() > consts.h_bar_reach;
    let input_norm_ok = tally.failures == 0 && tally.max_norm <= input.u_bar() + box_tol;
    let analytic_norm_bound = bf
        .as_corridor()
        .and_then(|c| c.backup_norm_bound(sys, bf.alpha(), consts.margin_ii, bf.a(), bf.b(), true));
    let pass =
        annulus_width_ok && input_norm_ok && tally.points > 0 && tally.feasible == tally.points;
    Ok(CertReport {
        theorem_case: TheoremCase::detect(bf, sys, spec),
        alpha: bf.alpha().gain(),
        a: bf.a(),
        b: bf.b(),
        dt: consts.dt,
        u_bar: input.u_bar(),
        w_bar: consts.w_bar,
        h_bar_reach: consts.h_bar_reach,
        annulus_width_ok,
        grid_points: tally.points,
        feasible_points: tally.feasible,
        backup_failures: tally.failures,
        min_slack: if tally.points > 0 {
            tally.min_slack
        } else {
            T::zero()
        },
        max_input_norm: tally.max_norm,
        input_norm_ok,
        analytic_norm_bound,
        constants: consts.clone(),
        pass,
    })
}

/// Outcome of checking the whole-safe-set condition: zero input wherever
/// `h > a`, the corridor equalizing input on the annulus.
#[derive(Clone, Debug)]
pub struct Def1Report<T> {
    pub alpha: T,
    pub u_bar: T,
    pub constants: BarrierConstants<T>,
    pub interior_points: usize,
    pub interior_failures: usize,
    pub annulus_points: usize,
    pub annulus_failures: usize,
    pub max_backup_norm: T,
    /// Smallest gain for which zero input satisfies the condition at every
    /// interior grid point, with the margin held at the configured gain.
    /// `None` without interior points.
    pub required_alpha: Option<T>,
    /// Largest annulus backup input once the constants are recomposed with
    /// the required gain.
    pub backup_norm_at_required: Option<T>,
    pub pass: bool,
    pub tuned_pass: bool,
}

impl<T: Scalar> Def1Report<T> {
    pub fn verdict(&self) -> String {
        if self.pass {
            "pass".into()
        } else if self.required_alpha.is_none() {
            "fail: no interior grid points".into()
        } else if !self.tuned_pass {
            "fail: requires control authority beyond u_bar".into()
        } else {
            "fail at configured alpha; passes with the required alpha".into()
        }
    }

    pub fn summary_fields(&self) -> Vec<(String, String)> {
        let opt = |v: Option<T>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        vec![
            (
                "condition".to_string(),
                "whole safe set (SD-ZCBF)".to_string(),
            ),
            ("verdict".into(), self.verdict()),
            ("alpha".into(), self.alpha.to_string()),
            ("u_bar".into(), self.u_bar.to_string()),
            ("nu".into(), self.constants.nu.to_string()),
            ("margin_i".into(), self.constants.margin_i.to_string()),
            ("interior_points".into(), self.interior_points.to_string()),
            (
                "interior_failures".into(),
                self.interior_failures.to_string(),
            ),
            ("annulus_points".into(), self.annulus_points.to_string()),
            ("annulus_failures".into(), self.annulus_failures.to_string()),
            (
                "max_backup_norm_inf".into(),
                self.max_backup_norm.to_string(),
            ),
            ("required_alpha".into(), opt(self.required_alpha)),
            (
                "backup_norm_at_required_alpha".into(),
                opt(self.backup_norm_at_required),
            ),
            ("tuned_pass".into(), self.tuned_pass.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        render(&self.summary_fields())
    }
}

struct Def1Scan<T> {
    interior: usize,
    interior_fail: usize,
    annulus: Vec<(Vec<T>, T)>,
    lo: T,
}

impl<T: Scalar> Def1Scan<T> {
    fn empty() -> Self {
        Self {
            interior: 0,
            interior_fail: 0,
            annulus: Vec::new(),
            lo: T::zero(),
        }
    }

    fn merge(mut self, o: Self) -> Self {
        self.interior += o.interior;
        self.interior_fail += o.interior_fail;
        self.annulus.extend(o.annulus);
        self.lo = self.lo.max(o.lo);
        self
    }
}

/// Comparison certifier for the whole-safe-set condition over
/// `D = {h >= -b}`. Needs a corridor barrier for the annulus backup.
pub fn certify_sdzcbf1<T: Scalar>(
    bf: &BarrierFunction<T>,
    sys: &SystemDynamics<T>,
    input: &InputSet<T>,
    w_bar: T,
    dt: T,
    spec: &GridSpec<T>,
) -> Result<Def1Report<T>> {
    let corridor = bf.as_corridor().ok_or_else(|| {
        Error::UnsupportedModel("comparison certifier needs a corridor barrier".into())
    })?;
    let spec = spec.clone().with_region(Region::SafeAndAnnulus);
    let consts = estimate_constants(bf, sys, input, w_bar, dt, &spec)?;
    let grid = Grid::build(bf, &spec)?;
    let zero_u = vec![T::zero(); sys.n_u()];

    let scan = grid
        .times
        .par_iter()
        .map(|&t| {
            let mut acc = Def1Scan::empty();
            for x in &grid.states {
                let h = bf.eval_h(x, t);
                if h < -bf.b() {
                    continue;
                }
                if h <= bf.a() {
                    acc.annulus.push((x.clone(), t));
                    continue;
                }
                acc.interior += 1;
                if !bf.check_condition_i(sys, &consts, x, &zero_u, t).satisfied {
                    acc.interior_fail += 1;
                }
                // alpha h >= margin_i - grad h . f, margin held at the configured gain
                let hf = scalar::dot(&bf.grad_x(x, t), &sys.f(x));
                acc.lo = acc.lo.max((consts.margin_i - hf) / h);
            }
            acc
        })
        .reduce(Def1Scan::empty, Def1Scan::merge);

    let backup_pass = |c: &BarrierConstants<T>, alpha: ClassK<T>| -> (usize, T) {
        scan.annulus
            .par_iter()
            .map(
                |(x, t)| match corridor.equalizing_input(sys, alpha, c.margin_i, false, x, *t) {
                    Ok(u) => {
                        let slack = bf
                            .with_alpha(alpha)
                            .check_condition_i(sys, c, x, &u, *t)
                            .slack;
                        let norm = scalar::norm_inf(&u);
                        let bad =
                            slack < -T::lit(EQUALITY_TOL) || !input.contains_tol(&u, T::lit(1e-12));
                        (usize::from(bad), norm)
                    }
                    Err(_) => (1, T::infinity()),
                },
            )
            .reduce(|| (0, T::zero()), |a, b| (a.0 + b.0, a.1.max(b.1)))
    };

    let (annulus_failures, max_backup_norm) = backup_pass(&consts, bf.alpha());
    let required_alpha = (scan.interior > 0).then_some(scan.lo);
    let backup_norm_at_required = required_alpha.map(|ra| {
        let alpha = ClassK::Linear(ra);
        backup_pass(&consts.with_alpha(alpha), alpha).1
    });
    let pass = scan.interior_fail == 0 && annulus_failures == 0 && !scan.annulus.is_empty();
    let tuned_pass = backup_norm_at_required.is_some_and(|n| n <= input.u_bar());
    Ok(Def1Report {
        alpha: bf.alpha().gain(),
        u_bar: input.u_bar(),
        constants: consts,
        interior_points: scan.interior,
        interior_failures: scan.interior_fail,
        annulus_points: scan.annulus.len(),
        annulus_failures,
        max_backup_norm,
        required_alpha,
        backup_norm_at_required,
        pass,
        tuned_pass,
    })
}
