//! Per-fold Anderson-Rubin statistics and confidence sets with Bonferroni
//! combination, plus Wald intervals.
//!
//! On fold j with held-out rows and an off-fold-trained instrument, the AR
//! statistic at tau0 is V' Omega^{-1} V where V collects the covariance
//! between the instrument and the implied residuals (partialled on [1, X])
//! and Omega is its variance estimate. Because the residual is affine in tau,
//! the scalar-treatment confidence set is a quadratic inequality solved in
//! closed form: a finite interval, two rays, the whole line, or empty.

use crate::data::Dataset;
use crate::error::{Error, Result, Warning};
use crate::estimator::EstimateResult;
use crate::instruments::{InstrumentMatrix, WeightingScheme};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Fold-level inputs for the AR machinery. The instrument rows must come from
/// predictors trained off this fold.
#[derive(Debug, Clone)]
pub struct ARFoldInput {
    /// Off-fold-trained treatment-block instrument, n-bar x p_d.
    pub upsilon: DMatrix<f64>,
    pub y: DVector<f64>,
    pub d: DMatrix<f64>,
    /// [1, X] on the fold.
    pub xbar: DMatrix<f64>,
}

impl ARFoldInput {
    /// Extract fold `j`'s AR inputs from a cross-fitted instrument. Requires
    /// identity weighting, where the instrument's treatment block is the
    /// predicted treatment.
    pub fn from_instrument(inst: &InstrumentMatrix, ds: &Dataset, fold: usize) -> Result<Self> {
        if inst.weighting != WeightingScheme::Identity {
            return Err(Error::InvalidConfig(
                "Anderson-Rubin inference requires identity weighting".into(),
            ));
        }
        let rows: Vec<usize> =
            (0..ds.n()).filter(|&i| inst.fold_of[i] == fold).collect();
        if rows.is_empty() {
            return Err(Error::InvalidData(format!("fold {fold} has no rows")));
        }
        let p_d = inst.excluded_block.len();
        let upsilon = DMatrix::from_fn(rows.len(), p_d, |i, j| {
            inst.upsilon[(rows[i], inst.excluded_block[j])]
        });
        let xbar_full = ds.xbar();
        let xbar = DMatrix::from_fn(rows.len(), xbar_full.ncols(), |i, j| xbar_full[(rows[i], j)]);
        Ok(ARFoldInput {
            upsilon,
            y: DVector::from_fn(rows.len(), |i, _| ds.y()[rows[i]]),
            d: DMatrix::from_fn(rows.len(), p_d, |i, j| ds.d()[(rows[i], j)]),
            xbar,
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.upsilon.nrows() != n || self.d.nrows() != n || self.xbar.nrows() != n {
            return Err(Error::DimensionMismatch("AR fold blocks disagree on rows".into()));
        }
        if n <= self.xbar.ncols() {
            return Err(Error::InvalidData(format!(
                "fold has {n} rows but partialling needs more than {}",
                self.xbar.ncols()
            )));
        }
        Ok(())
    }

    /// Instrument columns scaled to unit in-fold sum of squares. A zero
    /// column is left unscaled (the statistic degenerates downstream).
    fn normalized_upsilon(&self) -> DMatrix<f64> {
        let mut out = self.upsilon.clone();
        for mut col in out.column_iter_mut() {
            let ss: f64 = col.iter().map(|v| v * v).sum();
            if ss > 0.0 {
                col /= ss.sqrt();
            }
        }
        out
    }
}

/// Closed interval with infinite endpoints allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }
    fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// Shape tag of an AR confidence set: a bounded set, an unbounded proper
/// subset of the line (rays), the whole line, or empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArShape {
    FiniteInterval,
    TwoRays,
    WholeLine,
    Empty,
}

/// A confidence set for a scalar tau: disjoint sorted closed intervals.
#[derive(Debug, Clone, Serialize)]
pub struct ARSet {
    pub intervals: Vec<Interval>,
    pub shape: ArShape,
    pub warnings: Vec<Warning>,
}

impl ARSet {
    fn from_intervals(mut intervals: Vec<Interval>, warnings: Vec<Warning>) -> Self {
        intervals.retain(|iv| iv.lo <= iv.hi);
        intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let shape = Self::classify(&intervals);
        ARSet { intervals, shape, warnings }
    }

    fn classify(intervals: &[Interval]) -> ArShape {
        if intervals.is_empty() {
            return ArShape::Empty;
        }
        if intervals.len() == 1
            && intervals[0].lo == f64::NEG_INFINITY
            && intervals[0].hi == f64::INFINITY
        {
            return ArShape::WholeLine;
        }
        if intervals.iter().all(Interval::is_bounded) {
            ArShape::FiniteInterval
        } else {
            ArShape::TwoRays
        }
    }

    pub fn whole_line(warnings: Vec<Warning>) -> Self {
        ARSet::from_intervals(vec![Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }], warnings)
    }

    pub fn empty() -> Self {
        ARSet::from_intervals(Vec::new(), Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(t))
    }

    /// Set intersection; interval lists stay sorted and disjoint.
    pub fn intersect(&self, other: &ARSet) -> ARSet {
        let mut out = Vec::new();
        for a in &self.intervals {
            for b in &other.intervals {
                let lo = a.lo.max(b.lo);
                let hi = a.hi.min(b.hi);
                if lo <= hi {
                    out.push(Interval { lo, hi });
                }
            }
        }
        let mut warnings: Vec<Warning> = self.warnings.clone();
        warnings.extend(other.warnings.iter().cloned());
        ARSet::from_intervals(out, warnings)
    }
}

/// The Anderson-Rubin statistic at tau0 on one fold. Returns +inf when the
/// variance matrix is singular.
pub fn ar_statistic(inp: &ARFoldInput, tau0: &DVector<f64>) -> Result<f64> {
    inp.validate()?;
    let p_d = inp.d.ncols();
    if tau0.len() != p_d {
        return Err(Error::DimensionMismatch(format!(
            "tau0 has {} entries for {p_d} treatments",
            tau0.len()
        )));
    }
    let n_bar = inp.y.len();
    let ups = inp.normalized_upsilon();

    let u = &inp.y - &inp.d * tau0;
    let u_mat = DMatrix::from_fn(n_bar, 1, |i, _| u[i]);
    let (u_tilde, _) = linalg::residualize(&u_mat, &inp.xbar);
    let (ups_tilde, _) = linalg::residualize(&ups, &inp.xbar);

    // V uses the unpartialled instrument; the in-fold orthogonality of the
    // partialled residual makes it equal to the partialled version.
    let mut v = DVector::zeros(p_d);
    for k in 0..p_d {
        v[k] = (0..n_bar).map(|i| ups[(i, k)] * u_tilde[(i, 0)]).sum::<f64>()
            / (n_bar as f64).sqrt();
    }
    let mut omega = DMatrix::zeros(p_d, p_d);
    for i in 0..n_bar {
        let u2 = u_tilde[(i, 0)] * u_tilde[(i, 0)];
        for r in 0..p_d {
            for c in 0..p_d {
                omega[(r, c)] += u2 * ups_tilde[(i, r)] * ups_tilde[(i, c)];
            }
        }
    }
    omega /= n_bar as f64;

    if linalg::condition_number(&omega) > 1e14 {
        return Ok(f64::INFINITY);
    }
    match linalg::solve_square(&omega, &v) {
        Some(x) => Ok((v.transpose() * x)[(0, 0)].max(0.0)),
        None => Ok(f64::INFINITY),
    }
}

/// In-fold partialled pieces for the scalar closed form.
struct FoldQuadratic {
    a: f64,
    b: f64,
    big_a: f64,
    big_b: f64,
    big_c: f64,
}

/// Zero a residualized block whose sum of squares is numerically null
/// relative to the unresidualized block, so exact degeneracies (a constant
/// treatment, say) produce exact zero coefficients instead of round-off.
fn squash_null_residual(res: &mut DMatrix<f64>, raw_ss: f64) {
    let res_ss: f64 = res.iter().map(|v| v * v).sum();
    if res_ss <= 1e-24 * raw_ss.max(f64::MIN_POSITIVE) {
        res.fill(0.0);
    }
}

fn fold_quadratic(inp: &ARFoldInput) -> Result<FoldQuadratic> {
    inp.validate()?;
    if inp.d.ncols() != 1 {
        return Err(Error::InvalidConfig(
            "closed-form AR sets require a scalar treatment; use ar_grid".into(),
        ));
    }
    let n_bar = inp.y.len();
    let ups = inp.normalized_upsilon();
    let y_mat = DMatrix::from_fn(n_bar, 1, |i, _| inp.y[i]);
    let (mut y_t, _) = linalg::residualize(&y_mat, &inp.xbar);
    let (mut d_t, _) = linalg::residualize(&inp.d, &inp.xbar);
    let (mut u_t, _) = linalg::residualize(&ups, &inp.xbar);
    squash_null_residual(&mut y_t, y_mat.iter().map(|v| v * v).sum());
    squash_null_residual(&mut d_t, inp.d.iter().map(|v| v * v).sum());
    squash_null_residual(&mut u_t, ups.iter().map(|v| v * v).sum());
    let mut q = FoldQuadratic { a: 0.0, b: 0.0, big_a: 0.0, big_b: 0.0, big_c: 0.0 };
    for i in 0..n_bar {
        let (yt, dt, ut) = (y_t[(i, 0)], d_t[(i, 0)], u_t[(i, 0)]);
        let ut2 = ut * ut;
        q.a += ut * yt;
        q.b += ut * dt;
        q.big_a += yt * yt * ut2;
        q.big_b += yt * dt * ut2;
        q.big_c += dt * dt * ut2;
    }
    Ok(q)
}

/// Closed-form AR confidence set at level `alpha_prime` for the fold:
/// { tau : AR_j(tau) <= chi2_{1, 1 - alpha_prime} }.
pub fn ar_set_fold(inp: &ARFoldInput, alpha_prime: f64) -> Result<ARSet> {
    if !(alpha_prime > 0.0 && alpha_prime < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "AR level must lie in (0, 1), got {alpha_prime}"
        )));
    }
    let q = fold_quadratic(inp)?;
    let chi = ChiSquared::new(1.0).expect("chi-squared with 1 dof");
    let c = chi.inverse_cdf(1.0 - alpha_prime);

    // (a - b tau)^2 - c (A - 2 B tau + C tau^2) <= 0, written as
    // q2 tau^2 + q1 tau + q0 <= 0.
    let q2 = q.b * q.b - c * q.big_c;
    let q1 = 2.0 * (c * q.big_b - q.a * q.b);
    let q0 = q.a * q.a - c * q.big_a;

    let s2 = q.b * q.b + c * q.big_c;
    let s1 = 2.0 * (q.a.abs() * q.b.abs() + c * q.big_b.abs());
    let s0 = q.a * q.a + c * q.big_a;
    let eps = 1e-12;

    if q2.abs() > eps * s2 {
        let disc = q1 * q1 - 4.0 * q2 * q0;
        if q2 > 0.0 {
            if disc < 0.0 {
                // Cannot occur with exact arithmetic (the fold's own IV
                // estimate always satisfies the inequality); round-off only.
                return Ok(ARSet::empty());
            }
            let (r1, r2) = quadratic_roots(q2, q1, q0, disc);
            return Ok(ARSet::from_intervals(vec![Interval { lo: r1, hi: r2 }], Vec::new()));
        }
        if disc <= 0.0 {
            return Ok(ARSet::whole_line(Vec::new()));
        }
        let (r1, r2) = quadratic_roots(q2, q1, q0, disc);
        return Ok(ARSet::from_intervals(
            vec![
                Interval { lo: f64::NEG_INFINITY, hi: r1 },
                Interval { lo: r2, hi: f64::INFINITY },
            ],
            Vec::new(),
        ));
    }
    if q1.abs() > eps * s1.max(f64::MIN_POSITIVE) {
        let root = -q0 / q1;
        let iv = if q1 > 0.0 {
            Interval { lo: f64::NEG_INFINITY, hi: root }
        } else {
            Interval { lo: root, hi: f64::INFINITY }
        };
        return Ok(ARSet::from_intervals(vec![iv], Vec::new()));
    }
    if q0 > eps * s0.max(f64::MIN_POSITIVE) {
        return Ok(ARSet::empty());
    }
    // All coefficients vanish: degenerate fold.
    let warnings = if s2 == 0.0 && s0 == 0.0 {
        vec![Warning::DegenerateFold { fold: 0 }]
    } else {
        Vec::new()
    };
    Ok(ARSet::whole_line(warnings))
}

/// Sorted real roots of q2 x^2 + q1 x + q0 with disc = q1^2 - 4 q2 q0 >= 0,
/// computed in the cancellation-stable form.
fn quadratic_roots(q2: f64, q1: f64, q0: f64, disc: f64) -> (f64, f64) {
    let sq = disc.max(0.0).sqrt();
    let qq = -0.5 * (q1 + q1.signum() * sq);
    let (r1, r2) = if qq == 0.0 { (0.0, 0.0) } else { (qq / q2, q0 / qq) };
    if r1 <= r2 { (r1, r2) } else { (r2, r1) }
}

/// The fold's own IV point estimate: the ratio of partialled covariances.
/// The AR statistic vanishes here, so the estimate always lies in the fold's
/// AR set.
pub fn fold_point_estimate(inp: &ARFoldInput) -> Result<f64> {
    let q = fold_quadratic(inp)?;
    if q.b == 0.0 {
        return Err(Error::Degenerate(
            "fold instrument is orthogonal to the treatment".into(),
        ));
    }
    Ok(q.a / q.b)
}

/// Per-fold AR sets at level alpha / K and their Bonferroni intersection.
#[derive(Debug, Clone, Serialize)]
pub struct CombinedArSets {
    pub per_fold: Vec<ARSet>,
    pub combined: ARSet,
}

pub fn ar_set_combined(folds: &[ARFoldInput], alpha: f64) -> Result<CombinedArSets> {
    if folds.is_empty() {
        return Err(Error::InvalidData("no folds for AR combination".into()));
    }
    let k = folds.len();
    let per_fold: Vec<ARSet> = folds
        .iter()
        .map(|inp| ar_set_fold(inp, alpha / k as f64))
        .collect::<Result<_>>()?;
    let mut combined = per_fold[0].clone();
    for set in &per_fold[1..] {
        combined = combined.intersect(set);
    }
    // Per-fold sets are never empty, but the intersection can be.
    if combined.is_empty() {
        combined.warnings.push(Warning::EmptyIntersection);
    }
    Ok(CombinedArSets { per_fold, combined })
}

/// Boolean grid evaluation for multi-dimensional treatments: accept tau where
/// every fold's AR statistic is at or below the chi-squared(dim D) quantile
/// at 1 - alpha / K.
pub fn ar_grid(folds: &[ARFoldInput], grid: &[DVector<f64>], alpha: f64) -> Result<Vec<bool>> {
    if folds.is_empty() {
        return Err(Error::InvalidData("no folds for AR grid".into()));
    }
    let p_d = folds[0].d.ncols();
    let chi = ChiSquared::new(p_d as f64)
        .map_err(|e| Error::Degenerate(format!("chi-squared dof {p_d}: {e}")))?;
    let c = chi.inverse_cdf(1.0 - alpha / folds.len() as f64);
    grid.iter()
        .map(|tau| {
            for inp in folds {
                if ar_statistic(inp, tau)? > c {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect()
}

/// Two-sided Wald interval for one coefficient.
pub fn wald_ci(est: &EstimateResult, index: usize, alpha: f64) -> Result<(f64, f64)> {
    if index >= est.theta_hat.len() {
        return Err(Error::InvalidConfig(format!("coefficient index {index} out of range")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let var = est.vcov[(index, index)];
    if !var.is_finite() {
        return Err(Error::Degenerate("non-finite variance for Wald interval".into()));
    }
    let z = if alpha >= 1.0 {
        0.0
    } else {
        Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0)
    };
    let half = z * var.max(0.0).sqrt();
    Ok((est.theta_hat[index] - half, est.theta_hat[index] + half))
}
