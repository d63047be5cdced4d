//! The plug-in split-sample IV estimator and its companions: sandwich
//! variance, FWL subvector path, classical TSLS baselines, first-stage F
//! diagnostics, and a Hausman test between two estimates.
//!
//! theta-hat solves the just-identified moment conditions
//! sum_i Upsilon_i (Y_i - T_i' theta) = 0 exactly; the variance estimate is
//! (1/n) G^{-1} Omega G^{-T} with G = (1/n) sum Upsilon_i T_i' and
//! Omega = (1/n) sum U-hat_i^2 Upsilon_i Upsilon_i'.

use crate::data::{design_matrices, Dataset, DesignPair};
use crate::error::{Error, Result, Warning};
use crate::instruments::{InstrumentMatrix, WeightingScheme};
use crate::learner::expand_features;
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Condition-number ceiling for G; beyond this the estimator refuses to
/// report a point estimate and signals weak identification.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Cap applied to a first-stage F statistic when the fit is numerically
/// perfect.
const F_CAP: f64 = 1e12;

/// First-stage Wald statistic for one treatment column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FStat {
    pub value: f64,
    /// (numerator, denominator) degrees of freedom.
    pub dof: (usize, usize),
    /// True when the standard error is heteroskedasticity robust (HC1).
    pub robust: bool,
}

/// Diagnostics attached to an estimate.
#[derive(Debug, Clone)]
pub struct EstimateDiagnostics {
    /// First-stage F per treatment column (identity weighting only).
    pub first_stage_f: Vec<FStat>,
    /// Pooled hold-out R-squared per treatment column. For non-split TSLS
    /// this is the in-sample first-stage R-squared.
    pub oos_r2: Vec<f64>,
    pub g_condition: f64,
    pub warnings: Vec<Warning>,
}

/// A fitted coefficient vector with its sandwich covariance.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// (alpha, tau', beta')' in T's column order.
    pub theta_hat: DVector<f64>,
    /// Covariance of theta-hat (already divided by n), HC0 scaling.
    pub vcov: DMatrix<f64>,
    pub g_hat: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub n: usize,
    pub diagnostics: EstimateDiagnostics,
    /// Coefficient names matching theta-hat.
    pub names: Vec<String>,
}

impl EstimateResult {
    pub fn std_errors(&self) -> DVector<f64> {
        DVector::from_fn(self.theta_hat.len(), |i, _| self.vcov[(i, i)].max(0.0).sqrt())
    }

    /// HC1 rescaling of the covariance: n / (n - dim theta).
    pub fn vcov_hc1(&self) -> DMatrix<f64> {
        let k = self.theta_hat.len();
        &self.vcov * (self.n as f64 / (self.n - k) as f64)
    }
}

fn weak_identification_check(g: &DMatrix<f64>) -> Result<f64> {
    let cond = linalg::condition_number(g);
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(Error::WeakIdentification { condition: cond, limit: CONDITION_LIMIT });
    }
    Ok(cond)
}

struct MomentSolution {
    theta: DVector<f64>,
    vcov: DMatrix<f64>,
    g: DMatrix<f64>,
    omega: DMatrix<f64>,
    residuals: DVector<f64>,
    condition: f64,
}

/// Shared core: solve the moment conditions for an arbitrary instrument
/// matrix and form the sandwich covariance.
fn solve_moments(
    upsilon: &DMatrix<f64>,
    t: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<MomentSolution> {
    let n = t.nrows();
    let dim = t.ncols();
    if upsilon.nrows() != n || y.len() != n || upsilon.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "instrument {}x{}, regressors {}x{}, outcome {}",
            upsilon.nrows(),
            upsilon.ncols(),
            n,
            dim,
            y.len()
        )));
    }
    let g = upsilon.transpose() * t / n as f64;
    let cond = weak_identification_check(&g)?;
    let gy = upsilon.transpose() * y / n as f64;
    let theta = linalg::solve_square(&g, &gy)
        .ok_or(Error::WeakIdentification { condition: cond, limit: CONDITION_LIMIT })?;
    let residuals = y - t * &theta;

    let mut omega = DMatrix::zeros(dim, dim);
    for i in 0..n {
        let u2 = residuals[i] * residuals[i];
        for r in 0..dim {
            let ur = upsilon[(i, r)];
            for c in 0..dim {
                omega[(r, c)] += u2 * ur * upsilon[(i, c)];
            }
        }
    }
    omega /= n as f64;

    // vcov = (1/n) G^{-1} Omega G^{-T}, symmetrized against round-off.
    let ginv_omega = linalg::solve_square_mat(&g, &omega)
        .ok_or(Error::WeakIdentification { condition: cond, limit: CONDITION_LIMIT })?;
    let vcov_t = linalg::solve_square_mat(&g, &ginv_omega.transpose())
        .ok_or(Error::WeakIdentification { condition: cond, limit: CONDITION_LIMIT })?;
    let raw = vcov_t.transpose() / n as f64;
    let vcov = (&raw + raw.transpose()) / 2.0;

    Ok(MomentSolution { theta, vcov, g, omega, residuals, condition: cond })
}

/// The plug-in MLSS estimator for the full coefficient vector.
pub fn mlss_estimate(
    inst: &InstrumentMatrix,
    pair: &DesignPair,
    y: &DVector<f64>,
) -> Result<EstimateResult> {
    let sol = solve_moments(&inst.upsilon, &pair.t, y)?;
    let n = pair.t.nrows();
    let p_d = inst.excluded_block.len();
    let d = pair.t.columns(1, p_d).into_owned();

    let mut warnings = inst.all_warnings();
    let first_stage_f = if inst.weighting == WeightingScheme::Identity {
        f_statistics(&inst.excluded(), pair, &mut warnings)?
    } else {
        Vec::new()
    };

    Ok(EstimateResult {
        theta_hat: sol.theta,
        vcov: sol.vcov,
        g_hat: sol.g,
        omega_hat: sol.omega,
        residuals: sol.residuals,
        n,
        diagnostics: EstimateDiagnostics {
            first_stage_f,
            oos_r2: inst.pooled_oos_r2(&d),
            g_condition: sol.condition,
            warnings,
        },
        names: (0..pair.t.ncols()).map(|i| format!("t{i}")).collect(),
    })
}

/// Residualize the columns of `m` against xbar = [1, X] by least squares.
/// Returns the residuals; a rank-deficient xbar falls back to ridge and is
/// flagged through the second return.
pub fn fwl_residualize(m: &DMatrix<f64>, xbar: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    linalg::residualize(m, xbar)
}

/// The treatment subvector via the FWL route: residualize the instrument's
/// treatment block, Y, and D against [1, X], then solve the residualized
/// moment conditions. Matches the tau block of [`mlss_estimate`] exactly.
pub fn subvector_tau(
    inst: &InstrumentMatrix,
    pair: &DesignPair,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if inst.weighting != WeightingScheme::Identity {
        return Err(Error::InvalidConfig(
            "subvector_tau requires identity weighting".into(),
        ));
    }
    let n = pair.t.nrows();
    let p_d = inst.excluded_block.len();
    let p_x = pair.t.ncols() - 1 - p_d;

    let mut xbar = DMatrix::zeros(n, 1 + p_x);
    xbar.column_mut(0).copy_from(&pair.t.column(0));
    xbar.view_mut((0, 1), (n, p_x)).copy_from(&pair.t.columns(1 + p_d, p_x));

    let (ups_t, _) = fwl_residualize(&inst.excluded(), &xbar);
    let (d_t, _) = fwl_residualize(&pair.t.columns(1, p_d).into_owned(), &xbar);
    let y_mat = DMatrix::from_fn(n, 1, |i, _| y[i]);
    let (y_t, _) = fwl_residualize(&y_mat, &xbar);
    let y_t = DVector::from_fn(n, |i, _| y_t[(i, 0)]);

    let sol = solve_moments(&ups_t, &d_t, &y_t)?;
    Ok((sol.theta, sol.vcov))
}

/// Instrument transforms for the classical TSLS baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TslsTransform {
    Linear,
    Quadratic,
    QuadraticInteract,
    CubicInteract,
    Discretized,
}

/// Excluded-instrument columns f(W) for a TSLS transform.
pub(crate) fn transform_instruments(w: &DMatrix<f64>, transform: TslsTransform) -> DMatrix<f64> {
    match transform {
        TslsTransform::Linear => w.clone(),
        TslsTransform::Quadratic => expand_features(w, 2, false),
        TslsTransform::QuadraticInteract => expand_features(w, 2, true),
        TslsTransform::CubicInteract => expand_features(w, 3, true),
        TslsTransform::Discretized => discretized_dummies(w),
    }
}

/// Indicator columns for occupied threshold cells at {-1, 0, 1}, dropping the
/// first occupied cell as the reference category.
fn discretized_dummies(w: &DMatrix<f64>) -> DMatrix<f64> {
    let thresholds = [-1.0, 0.0, 1.0];
    let n = w.nrows();
    let keys: Vec<Vec<u16>> = (0..n)
        .map(|i| {
            (0..w.ncols())
                .map(|j| thresholds.iter().filter(|t| w[(i, j)] > **t).count() as u16)
                .collect()
        })
        .collect();
    let mut cells: Vec<Vec<u16>> = keys.clone();
    cells.sort_unstable();
    cells.dedup();
    // Reference cell dropped to avoid collinearity with the constant.
    let dummies: Vec<&Vec<u16>> = cells.iter().skip(1).collect();
    DMatrix::from_fn(n, dummies.len(), |i, c| f64::from(keys[i] == *dummies[c]))
}

/// Classical two-stage least squares of Y on T = [1, D, X] using
/// [1, f(W), X] as instruments, with the HC0 sandwich covariance. The
/// overidentified case is solved through the first-stage projection.
pub fn tsls(ds: &Dataset, transform: TslsTransform) -> Result<EstimateResult> {
    let n = ds.n();
    let pair = design_matrices(ds);
    let fw = transform_instruments(ds.w(), transform);
    if fw.ncols() < ds.p_d() {
        return Err(Error::InvalidConfig(format!(
            "{} transformed instruments cannot identify {} treatments",
            fw.ncols(),
            ds.p_d()
        )));
    }
    let mut z = DMatrix::zeros(n, 1 + fw.ncols() + ds.p_x());
    z.column_mut(0).fill(1.0);
    z.view_mut((0, 1), (n, fw.ncols())).copy_from(&fw);
    z.view_mut((0, 1 + fw.ncols()), (n, ds.p_x())).copy_from(ds.x());

    // First stage: fitted values of every T column on the instrument space.
    let proj = linalg::lstsq(&z, &pair.t);
    let t_hat = &z * &proj.coefficients;
    let mut warnings = Vec::new();
    if proj.ridge_fallback {
        warnings.push(Warning::RidgeFallback { context: "tsls first stage".into() });
    }

    let sol = solve_moments(&t_hat, &pair.t, ds.y())?;

    // In-sample first-stage R-squared and F per treatment.
    let d = pair.t.columns(1, ds.p_d()).into_owned();
    let d_hat = t_hat.columns(1, ds.p_d()).into_owned();
    let r2: Vec<f64> = (0..ds.p_d())
        .map(|c| {
            let mean = d.column(c).sum() / n as f64;
            let num: f64 = (0..n).map(|i| (d[(i, c)] - d_hat[(i, c)]).powi(2)).sum();
            let den: f64 = (0..n).map(|i| (d[(i, c)] - mean).powi(2)).sum();
            if den == 0.0 { 0.0 } else { 1.0 - num / den }
        })
        .collect();
    let first_stage_f = f_statistics(&d_hat, &pair, &mut warnings)?;

    let mut names = vec!["const".to_string()];
    names.extend(ds.d_names().iter().cloned());
    names.extend(ds.x_names().iter().cloned());

    Ok(EstimateResult {
        theta_hat: sol.theta,
        vcov: sol.vcov,
        g_hat: sol.g,
        omega_hat: sol.omega,
        residuals: sol.residuals,
        n,
        diagnostics: EstimateDiagnostics {
            first_stage_f,
            oos_r2: r2,
            g_condition: sol.condition,
            warnings,
        },
        names,
    })
}

/// First-stage F statistic per treatment column: regress d on
/// [1, upsilon_d, X] and square the HC1 t ratio of the constructed
/// instrument. The constructed instrument is a single column, so the
/// numerator degree of freedom is 1.
pub fn first_stage_f(inst: &InstrumentMatrix, pair: &DesignPair) -> Result<Vec<FStat>> {
    if inst.weighting != WeightingScheme::Identity {
        return Err(Error::InvalidConfig("first_stage_f requires identity weighting".into()));
    }
    let mut warnings = Vec::new();
    f_statistics(&inst.excluded(), pair, &mut warnings)
}

fn f_statistics(
    upsilon_d: &DMatrix<f64>,
    pair: &DesignPair,
    warnings: &mut Vec<Warning>,
) -> Result<Vec<FStat>> {
    let n = pair.t.nrows();
    let p_d = upsilon_d.ncols();
    let p_x = pair.t.ncols() - 1 - p_d;
    let k = 2 + p_x;
    if n <= k {
        return Err(Error::InvalidData(format!(
            "need more than {k} rows for the first-stage regression, got {n}"
        )));
    }
    let mut out = Vec::with_capacity(p_d);
    for c in 0..p_d {
        let mut design = DMatrix::zeros(n, k);
        design.column_mut(0).fill(1.0);
        design.column_mut(1).copy_from(&upsilon_d.column(c));
        design.view_mut((0, 2), (n, p_x)).copy_from(&pair.t.columns(1 + p_d, p_x));
        let d_col = DMatrix::from_fn(n, 1, |i, _| pair.t[(i, 1 + c)]);
        let fit = linalg::lstsq(&design, &d_col);
        let resid = &d_col - &design * &fit.coefficients;

        // HC1 sandwich on the OLS coefficients.
        let gram = design.transpose() * &design;
        let mut meat = DMatrix::zeros(k, k);
        for i in 0..n {
            let e2 = resid[(i, 0)] * resid[(i, 0)];
            for r in 0..k {
                for s in 0..k {
                    meat[(r, s)] += e2 * design[(i, r)] * design[(i, s)];
                }
            }
        }
        let dof_den = n - k;
        let scale = n as f64 / dof_den as f64;
        let value = match linalg::solve_square_mat(&gram, &meat)
            .and_then(|gm| linalg::solve_square_mat(&gram.transpose(), &gm.transpose()))
        {
            Some(bread) => {
                let var = bread.transpose()[(1, 1)] * scale;
                if var > 0.0 {
                    let f = fit.coefficients[(1, 0)].powi(2) / var;
                    if f.is_finite() && f < F_CAP {
                        f
                    } else {
                        warnings.push(Warning::PerfectFirstStage { treatment: c });
                        F_CAP
                    }
                } else {
                    warnings.push(Warning::PerfectFirstStage { treatment: c });
                    F_CAP
                }
            }
            None => {
                warnings.push(Warning::PerfectFirstStage { treatment: c });
                F_CAP
            }
        };
        out.push(FStat { value, dof: (1, dof_den), robust: true });
    }
    Ok(out)
}

/// Hausman test between two estimates of the same coefficient vector.
#[derive(Debug, Clone, Serialize)]
pub struct HausmanResult {
    pub stat: f64,
    pub dof: usize,
    pub pvalue: f64,
    /// Set when the variance gap is numerically zero but the estimates
    /// differ, so the test carries no information.
    pub inconclusive: bool,
}

/// d' (V_a - V_b)^+ d on the given coefficient block, with the pseudoinverse
/// cutoff at 1e-10 times the spectral norm of V_a's block. `b` is the
/// presumed-efficient estimate.
pub fn hausman_test(
    a: &EstimateResult,
    b: &EstimateResult,
    block: &[usize],
) -> Result<HausmanResult> {
    let dim = a.theta_hat.len();
    if b.theta_hat.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "estimates have {dim} and {} coefficients",
            b.theta_hat.len()
        )));
    }
    if block.is_empty() || block.iter().any(|&i| i >= dim) {
        return Err(Error::InvalidConfig("hausman block indices out of range".into()));
    }
    let k = block.len();
    let d = DVector::from_fn(k, |i, _| a.theta_hat[block[i]] - b.theta_hat[block[i]]);
    let gap = DMatrix::from_fn(k, k, |i, j| {
        a.vcov[(block[i], block[j])] - b.vcov[(block[i], block[j])]
    });
    let va_block = DMatrix::from_fn(k, k, |i, j| a.vcov[(block[i], block[j])]);
    let cutoff = 1e-10 * linalg::sym_spectral_norm(&va_block);
    let pinv = linalg::sym_pinv(&gap, cutoff);
    if pinv.rank == 0 {
        let inconclusive = d.iter().any(|v| v.abs() > 0.0);
        return Ok(HausmanResult { stat: 0.0, dof: 0, pvalue: 1.0, inconclusive });
    }
    let stat = (d.transpose() * &pinv.pinv * &d)[(0, 0)];
    let chi = ChiSquared::new(pinv.rank as f64)
        .map_err(|e| Error::Degenerate(format!("chi-squared dof {}: {e}", pinv.rank)))?;
    let pvalue = 1.0 - chi.cdf(stat.max(0.0));
    Ok(HausmanResult { stat, dof: pinv.rank, pvalue, inconclusive: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_folds, SplitPlan};
    use crate::instruments::{generate_instrument, CovariateMode};
    use crate::learner::LearnerSpec;
    use crate::rng::{seed_rng, standard_normal};

    fn instrument_from_matrix(upsilon: DMatrix<f64>, p_d: usize) -> InstrumentMatrix {
        let n = upsilon.nrows();
        let predictions = upsilon.columns(1, p_d).into_owned();
        InstrumentMatrix {
            upsilon,
            excluded_block: (1..=p_d).collect(),
            fold_of: vec![0; n],
            diagnostics: Vec::new(),
            weighting: WeightingScheme::Identity,
            predictions,
            train_means: vec![vec![0.0; p_d]],
        }
    }

    #[test]
    fn hand_computed_two_by_two_solve() {
        // Rows (upsilon, D, Y) = (0,0,0), (1,1,2), (2,1,2).
        let upsilon = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let t = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![0.0, 2.0, 2.0]);
        let inst = instrument_from_matrix(upsilon, 1);
        let pair = DesignPair { t: t.clone(), z: t };
        let est = mlss_estimate(&inst, &pair, &y).unwrap();
        assert!((est.theta_hat[0] - 0.0).abs() < 1e-12);
        assert!((est.theta_hat[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn instrument_equal_to_regressors_collapses_to_ols() {
        let mut rng = seed_rng(3);
        let n = 50;
        let t = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { standard_normal(&mut rng) + i as f64 * 0.0 });
        let y = DVector::from_fn(n, |i, _| {
            1.0 + 2.0 * t[(i, 1)] - t[(i, 2)] + standard_normal(&mut rng)
        });
        let inst = instrument_from_matrix(t.clone(), 1);
        let pair = DesignPair { t: t.clone(), z: t.clone() };
        let est = mlss_estimate(&inst, &pair, &y).unwrap();
        let y_mat = DMatrix::from_fn(n, 1, |i, _| y[i]);
        let ols = linalg::lstsq(&t, &y_mat).coefficients;
        for i in 0..3 {
            assert!((est.theta_hat[i] - ols[(i, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_outcome_recovers_theta_with_zero_omega() {
        let mut rng = seed_rng(4);
        let n = 30;
        let t = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { standard_normal(&mut rng) });
        let theta0 = DVector::from_vec(vec![0.5, -1.25]);
        let y = &t * &theta0;
        let inst = instrument_from_matrix(t.clone(), 1);
        let pair = DesignPair { t: t.clone(), z: t };
        let est = mlss_estimate(&inst, &pair, &y).unwrap();
        assert!((&est.theta_hat - &theta0).abs().max() < 1e-10);
        assert!(est.omega_hat.abs().max() < 1e-18);
    }

    #[test]
    fn normal_equations_hold_at_the_solution() {
        let mut rng = seed_rng(5);
        let n = 80;
        let t = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { standard_normal(&mut rng) });
        let upsilon =
            DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { t[(i, 1)] + 0.3 * standard_normal(&mut rng) });
        let y = DVector::from_fn(n, |i, _| t[(i, 1)] * 2.0 + standard_normal(&mut rng));
        let inst = instrument_from_matrix(upsilon.clone(), 1);
        let pair = DesignPair { t: t.clone(), z: t };
        let est = mlss_estimate(&inst, &pair, &y).unwrap();
        let moment = upsilon.transpose() * &est.residuals;
        let scale = (upsilon.transpose() * &y).abs().max().max(1.0);
        assert!(moment.abs().max() <= 1e-8 * scale, "residual moment {}", moment.abs().max());
    }

    #[test]
    fn weak_identification_error_carries_condition() {
        let n = 20;
        let t = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { 2.0 });
        let y = DVector::from_element(n, 1.0);
        let inst = instrument_from_matrix(t.clone(), 1);
        let pair = DesignPair { t: t.clone(), z: t };
        match mlss_estimate(&inst, &pair, &y) {
            Err(Error::WeakIdentification { condition, .. }) => {
                assert!(condition > CONDITION_LIMIT || !condition.is_finite());
            }
            other => panic!("expected weak identification, got {other:?}"),
        }
    }

    #[test]
    fn fwl_residualize_cases() {
        let xbar = DMatrix::from_element(3, 1, 1.0);
        let m = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let (r, ridge) = fwl_residualize(&m, &xbar);
        assert!(!ridge);
        assert!((r[(0, 0)] + 1.0).abs() < 1e-12);
        assert!(r[(1, 0)].abs() < 1e-12);
        assert!((r[(2, 0)] - 1.0).abs() < 1e-12);

        // Already orthogonal: unchanged.
        let (r2, _) = fwl_residualize(&r, &xbar);
        assert!((&r2 - &r).abs().max() < 1e-10);

        // Pure projection: zeros.
        let (r3, _) = fwl_residualize(&(&xbar * 2.5), &xbar);
        assert!(r3.abs().max() < 1e-12);
    }

    fn synthetic_iv_dataset(n: usize, p_x: usize, seed: u64) -> Dataset {
        let mut rng = seed_rng(seed);
        let w = DMatrix::from_fn(n, 3, |_, _| standard_normal(&mut rng));
        let x = DMatrix::from_fn(n, p_x, |_, _| standard_normal(&mut rng));
        let mut d = DMatrix::zeros(n, 1);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let u = standard_normal(&mut rng);
            let xsum: f64 = (0..p_x).map(|j| x[(i, j)]).sum();
            d[(i, 0)] = w[(i, 0)] - 0.5 * w[(i, 1)] + 0.2 * xsum + u + standard_normal(&mut rng);
            y[i] = 1.0 + 2.0 * d[(i, 0)] + 0.3 * xsum + u;
        }
        Dataset::new(y, d, x, w).unwrap()
    }

    #[test]
    fn subvector_tau_matches_full_estimate() {
        for p_x in [1usize, 3] {
            let ds = synthetic_iv_dataset(120, p_x, 40 + p_x as u64);
            let pair = design_matrices(&ds);
            let inst = generate_instrument(
                &ds,
                &SplitPlan::Folds(make_folds(120, 2, 7).unwrap()),
                &LearnerSpec::ols(),
                WeightingScheme::Identity,
                CovariateMode::PartialLinear,
            )
            .unwrap();
            let full = mlss_estimate(&inst, &pair, ds.y()).unwrap();
            let (tau, vcov_tau) = subvector_tau(&inst, &pair, ds.y()).unwrap();
            assert!((tau[0] - full.theta_hat[1]).abs() < 1e-8);
            assert!((vcov_tau[(0, 0)] - full.vcov[(1, 1)]).abs() < 1e-8 * full.vcov[(1, 1)].abs().max(1e-12));
        }
    }

    #[test]
    fn subvector_tau_is_ratio_of_covariances_without_covariates() {
        let ds = synthetic_iv_dataset(100, 0, 50);
        let pair = design_matrices(&ds);
        let inst = generate_instrument(
            &ds,
            &SplitPlan::Folds(make_folds(100, 2, 3).unwrap()),
            &LearnerSpec::ols(),
            WeightingScheme::Identity,
            CovariateMode::PartialLinear,
        )
        .unwrap();
        let (tau, _) = subvector_tau(&inst, &pair, ds.y()).unwrap();
        let ups = inst.excluded();
        let n = ds.n() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let u: Vec<f64> = (0..ds.n()).map(|i| ups[(i, 0)]).collect();
        let yv: Vec<f64> = ds.y().iter().copied().collect();
        let dv: Vec<f64> = (0..ds.n()).map(|i| ds.d()[(i, 0)]).collect();
        let (mu, my, md) = (mean(&u), mean(&yv), mean(&dv));
        let cov_uy: f64 = (0..ds.n()).map(|i| (u[i] - mu) * (yv[i] - my)).sum();
        let cov_ud: f64 = (0..ds.n()).map(|i| (u[i] - mu) * (dv[i] - md)).sum();
        assert!((tau[0] - cov_uy / cov_ud).abs() < 1e-8);
    }

    #[test]
    fn shifting_y_by_a_constant_leaves_tau_unchanged() {
        let ds = synthetic_iv_dataset(90, 2, 60);
        let pair = design_matrices(&ds);
        let inst = generate_instrument(
            &ds,
            &SplitPlan::Folds(make_folds(90, 2, 3).unwrap()),
            &LearnerSpec::ols(),
            WeightingScheme::Identity,
            CovariateMode::PartialLinear,
        )
        .unwrap();
        let (tau, _) = subvector_tau(&inst, &pair, ds.y()).unwrap();
        let shifted = ds.y().add_scalar(17.5);
        let (tau2, _) = subvector_tau(&inst, &pair, &shifted).unwrap();
        assert!((tau[0] - tau2[0]).abs() < 1e-9);
    }

    #[test]
    fn tsls_with_treatment_as_own_instrument_equals_ols() {
        let mut rng = seed_rng(70);
        let n = 60;
        let d = DMatrix::from_fn(n, 1, |_, _| standard_normal(&mut rng));
        let y = DVector::from_fn(n, |i, _| 0.5 + 1.5 * d[(i, 0)] + standard_normal(&mut rng));
        let ds = Dataset::new(y.clone(), d.clone(), DMatrix::zeros(n, 0), d.clone()).unwrap();
        let est = tsls(&ds, TslsTransform::Linear).unwrap();
        let mut design = DMatrix::zeros(n, 2);
        design.column_mut(0).fill(1.0);
        design.column_mut(1).copy_from(&d.column(0));
        let y_mat = DMatrix::from_fn(n, 1, |i, _| y[i]);
        let ols = linalg::lstsq(&design, &y_mat).coefficients;
        assert!((est.theta_hat[0] - ols[(0, 0)]).abs() < 1e-9);
        assert!((est.theta_hat[1] - ols[(1, 0)]).abs() < 1e-9);
    }

    #[test]
    fn full_sample_ols_mlss_equals_tsls_linear() {
        let ds = synthetic_iv_dataset(150, 2, 80);
        let pair = design_matrices(&ds);
        let inst = generate_instrument(
            &ds,
            &SplitPlan::FullSample,
            &LearnerSpec::ols(),
            WeightingScheme::Identity,
            CovariateMode::PartialLinear,
        )
        .unwrap();
        let mlss = mlss_estimate(&inst, &pair, ds.y()).unwrap();
        let base = tsls(&ds, TslsTransform::Linear).unwrap();
        assert!((&mlss.theta_hat - &base.theta_hat).abs().max() < 1e-8);
    }

    #[test]
    fn quadratic_transform_width() {
        let w = DMatrix::from_fn(10, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        assert_eq!(transform_instruments(&w, TslsTransform::Quadratic).ncols(), 6);
        assert_eq!(transform_instruments(&w, TslsTransform::QuadraticInteract).ncols(), 9);
        assert_eq!(crate::learner::expanded_width(3, 3, true), 19);
    }

    #[test]
    fn first_stage_f_detects_irrelevant_and_perfect_instruments() {
        let mut rng = seed_rng(90);
        let n = 400;
        let d = DMatrix::from_fn(n, 1, |_, _| standard_normal(&mut rng));
        let noise = DMatrix::from_fn(n, 1, |_, _| standard_normal(&mut rng));
        let t = {
            let mut t = DMatrix::zeros(n, 2);
            t.column_mut(0).fill(1.0);
            t.column_mut(1).copy_from(&d.column(0));
            t
        };
        let pair = DesignPair { t: t.clone(), z: t.clone() };

        // Irrelevant instrument: F should be near zero.
        let mut ups = DMatrix::zeros(n, 2);
        ups.column_mut(0).fill(1.0);
        ups.column_mut(1).copy_from(&noise.column(0));
        let inst = instrument_from_matrix(ups, 1);
        let f = first_stage_f(&inst, &pair).unwrap();
        assert!(f[0].value < 6.0, "noise F = {}", f[0].value);
        assert_eq!(f[0].dof.0, 1);

        // Perfect instrument: capped and flagged.
        let mut ups2 = DMatrix::zeros(n, 2);
        ups2.column_mut(0).fill(1.0);
        ups2.column_mut(1).copy_from(&d.column(0));
        let inst2 = instrument_from_matrix(ups2, 1);
        let f2 = first_stage_f(&inst2, &pair).unwrap();
        assert_eq!(f2[0].value, F_CAP);
    }

    #[test]
    fn hc1_flag_rescales_the_covariance() {
        let ds = synthetic_iv_dataset(80, 1, 95);
        let est = tsls(&ds, TslsTransform::Linear).unwrap();
        let k = est.theta_hat.len();
        let expected = est.vcov[(1, 1)] * 80.0 / (80 - k) as f64;
        assert!((est.vcov_hc1()[(1, 1)] - expected).abs() < 1e-15);
    }

    #[test]
    fn vcov_is_symmetric_positive_semidefinite() {
        for seed in [1u64, 2, 3, 4, 5] {
            let ds = synthetic_iv_dataset(120, 2, 900 + seed);
            let pair = design_matrices(&ds);
            let inst = generate_instrument(
                &ds,
                &SplitPlan::Folds(make_folds(120, 2, seed).unwrap()),
                &LearnerSpec::ols(),
                WeightingScheme::Identity,
                CovariateMode::PartialLinear,
            )
            .unwrap();
            let est = mlss_estimate(&inst, &pair, ds.y()).unwrap();
            let asym = (&est.vcov - est.vcov.transpose()).abs().max();
            assert!(asym <= 1e-14 * est.vcov.abs().max());
            let eig = est.vcov.clone().symmetric_eigen();
            let trace: f64 = (0..est.vcov.nrows()).map(|i| est.vcov[(i, i)]).sum();
            assert!(
                eig.eigenvalues.iter().all(|l| *l >= -1e-10 * trace),
                "negative eigenvalue in vcov (seed {seed})"
            );
        }
    }

    #[test]
    fn hausman_identical_estimates_give_zero() {
        let ds = synthetic_iv_dataset(100, 0, 91);
        let est = tsls(&ds, TslsTransform::Linear).unwrap();
        let h = hausman_test(&est, &est, &[1]).unwrap();
        assert_eq!(h.dof, 0);
        assert_eq!(h.stat, 0.0);
        assert_eq!(h.pvalue, 1.0);
        assert!(!h.inconclusive);
    }

    #[test]
    fn hausman_zero_gap_with_different_estimates_is_inconclusive() {
        let ds = synthetic_iv_dataset(100, 0, 92);
        let a = tsls(&ds, TslsTransform::Linear).unwrap();
        let mut b = a.clone();
        b.theta_hat[1] += 0.2;
        let h = hausman_test(&a, &b, &[1]).unwrap();
        assert_eq!(h.dof, 0);
        assert!(h.inconclusive);
    }
}
