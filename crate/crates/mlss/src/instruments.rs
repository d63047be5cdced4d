//! Cross-fitted construction of the estimated technical instrument.
//!
//! Each row of the instrument matrix is produced by nuisance models trained
//! on the other folds, so row i never sees its own fold's data. Under
//! identity weighting the instrument is [1, predicted treatment, X]; under
//! efficient weighting the rows carry the inverse-variance factor and, with
//! covariates, the orthogonalized covariate correction.

use crate::data::{design_matrices, make_folds, Dataset, SplitPlan};
use crate::error::{Error, Result, Warning};
use crate::learner::{fit, LearnerSpec, NuisanceRole, Predictor};
use crate::linalg;
use crate::rng::derive_seed;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Whether the instrument carries the 1/sigma^2(W) inverse-variance factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingScheme {
    Identity,
    Efficient,
}

/// How the treatment block is predicted when covariates are present:
/// the best partially linear prediction, or the conditional mean on W alone
/// (a consistent but less efficient robustness variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    PartialLinear,
    ConditionalMeanOnly,
}

/// Per-fold prediction quality and fit warnings.
#[derive(Debug, Clone)]
pub struct FoldDiagnostics {
    pub fold: usize,
    /// Hold-out R-squared per treatment column, benchmarked at the training
    /// mean.
    pub oos_r2: Vec<f64>,
    pub warnings: Vec<Warning>,
}

/// The estimated instrument: one row per observation, assembled fold by fold.
#[derive(Debug, Clone)]
pub struct InstrumentMatrix {
    /// n x (1 + p_d + p_x) instrument rows.
    pub upsilon: DMatrix<f64>,
    /// Column indices of the estimated-treatment block (always 1..=p_d).
    pub excluded_block: Vec<usize>,
    /// Fold id that each row was evaluated on.
    pub fold_of: Vec<usize>,
    pub diagnostics: Vec<FoldDiagnostics>,
    pub weighting: WeightingScheme,
    /// Raw first-stage predictions of D (before weighting), n x p_d.
    pub predictions: DMatrix<f64>,
    /// Training-fold mean of each treatment column, per fold.
    pub train_means: Vec<Vec<f64>>,
}

impl InstrumentMatrix {
    /// The estimated-treatment columns of upsilon.
    pub fn excluded(&self) -> DMatrix<f64> {
        let n = self.upsilon.nrows();
        DMatrix::from_fn(n, self.excluded_block.len(), |i, j| {
            self.upsilon[(i, self.excluded_block[j])]
        })
    }

    pub fn all_warnings(&self) -> Vec<Warning> {
        self.diagnostics.iter().flat_map(|d| d.warnings.iter().cloned()).collect()
    }

    /// Pooled hold-out R-squared per treatment column, benchmarking each row
    /// against the training mean of the fold that predicted it.
    pub fn pooled_oos_r2(&self, d: &DMatrix<f64>) -> Vec<f64> {
        let n = d.nrows();
        (0..d.ncols())
            .map(|c| {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..n {
                    let baseline = self.train_means[self.fold_of[i]][c];
                    num += (d[(i, c)] - self.predictions[(i, c)]).powi(2);
                    den += (d[(i, c)] - baseline).powi(2);
                }
                if den == 0.0 {
                    if num == 0.0 { 0.0 } else { f64::NEG_INFINITY }
                } else {
                    1.0 - num / den
                }
            })
            .collect()
    }
}

/// Estimated nuisances for efficient weighting: cross-fitted conditional
/// variances (floored away from zero) and, with covariates, E[X U^2 | W].
#[derive(Debug)]
pub struct EfficientNuisances {
    /// Cross-fitted sigma^2(W_i), already floored.
    pub sigma2_hat: DVector<f64>,
    /// Cross-fitted E[X_i U_i^2 | W_i]; absent when p_x = 0.
    pub xu2_hat: Option<DMatrix<f64>>,
    pub per_fold: Vec<FoldNuisance>,
    pub warnings: Vec<Warning>,
}

/// Fold-level nuisance state, kept so downstream steps can re-evaluate the
/// same models in-sample on the training rows.
#[derive(Debug)]
pub struct FoldNuisance {
    pub fold: usize,
    /// Identity-weighted preliminary estimate used to form residuals.
    pub prelim_theta: DVector<f64>,
    /// Variance floor for this fold: 1e-6 * Var(U-hat) on the training rows.
    pub floor: f64,
    pub sigma2_model: Predictor,
    pub xu2_model: Option<Predictor>,
}

fn rows_of(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

fn vec_of(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).sum() / m.nrows() as f64).collect()
}

/// Flag treatment-prediction columns that are numerically constant on the
/// hold-out fold; a constant instrument makes G singular downstream.
fn degeneracy_warnings(pred: &DMatrix<f64>, fold: usize, warnings: &mut Vec<Warning>) {
    let m = pred.nrows() as f64;
    for c in 0..pred.ncols() {
        let mean = pred.column(c).sum() / m;
        let var = pred.column(c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        if var <= 1e-20 * mean.mul_add(mean, 1.0) {
            warnings.push(Warning::DegenerateInstrument { fold, column: c });
        }
    }
}

fn fold_r2(pred: &DMatrix<f64>, actual: &DMatrix<f64>, train_means: &[f64]) -> Vec<f64> {
    (0..pred.ncols())
        .map(|c| {
            let p: Vec<f64> = pred.column(c).iter().copied().collect();
            let a: Vec<f64> = actual.column(c).iter().copied().collect();
            crate::learner::oos_r2(&p, &a, train_means[c]).unwrap_or(f64::NEG_INFINITY)
        })
        .collect()
}

/// Result of [`partial_linear_predict`]: cross-fitted best partially linear
/// predictions of the treatments, with per-fold warnings.
#[derive(Debug, Clone)]
pub struct PartialLinearFit {
    /// n x p_d predictions of E_PL[D | X, W].
    pub predictions: DMatrix<f64>,
    /// Warnings per split, in fold order.
    pub fold_warnings: Vec<Vec<Warning>>,
}

/// Cross-fitted best partially linear prediction of D from (X, W).
///
/// Per fold: fit E[D|W] and E[X|W] on the training rows, regress the
/// treatment residuals on the covariate residuals in-sample (no intercept;
/// the instrument's constant column absorbs it), and evaluate
/// g_D(W) + (X - g_X(W))' l-hat on the held-out rows.
pub fn partial_linear_predict(
    ds: &Dataset,
    plan: &SplitPlan,
    spec: &LearnerSpec,
) -> Result<PartialLinearFit> {
    if ds.p_x() == 0 {
        return Err(Error::InvalidConfig(
            "partial_linear_predict requires at least one covariate".into(),
        ));
    }
    let n = ds.n();
    let mut predictions = DMatrix::zeros(n, ds.p_d());
    let mut fold_warnings = Vec::new();
    for split in plan.splits(n)? {
        let mut warnings = Vec::new();
        let w_tr = rows_of(ds.w(), &split.train);
        let g_d = fit(&spec.for_role(NuisanceRole::TreatmentMean)?, &w_tr, &rows_of(ds.d(), &split.train))?;
        let g_x = fit(&spec.for_role(NuisanceRole::CovariateMean)?, &w_tr, &rows_of(ds.x(), &split.train))?;
        warnings.extend(g_d.warnings().iter().cloned());
        warnings.extend(g_x.warnings().iter().cloned());

        let d_res = rows_of(ds.d(), &split.train) - g_d.predict(&w_tr)?;
        let x_res = rows_of(ds.x(), &split.train) - g_x.predict(&w_tr)?;
        let ell = linalg::lstsq(&x_res, &d_res);
        if ell.ridge_fallback {
            warnings.push(Warning::RidgeFallback { context: "partial linear projection".into() });
        }

        let w_ev = rows_of(ds.w(), &split.eval);
        let pred = g_d.predict(&w_ev)?
            + (rows_of(ds.x(), &split.eval) - g_x.predict(&w_ev)?) * &ell.coefficients;
        for (k, &i) in split.eval.iter().enumerate() {
            for c in 0..ds.p_d() {
                predictions[(i, c)] = pred[(k, c)];
            }
        }
        fold_warnings.push(warnings);
    }
    Ok(PartialLinearFit { predictions, fold_warnings })
}

/// Estimate the nuisances needed for efficient weighting.
///
/// Per fold: run the identity-weighted estimator on the training rows (with
/// an internal 2-fold split) to get a preliminary theta, predict the squared
/// residuals from W (and X U^2 when covariates are present), and evaluate on
/// the held-out rows. Variance predictions are floored at
/// 1e-6 * Var(U-hat) per training fold.
pub fn efficient_nuisances(
    ds: &Dataset,
    plan: &SplitPlan,
    spec: &LearnerSpec,
    covariate_mode: CovariateMode,
) -> Result<EfficientNuisances> {
    let n = ds.n();
    let mut sigma2 = DVector::zeros(n);
    let mut xu2 = if ds.p_x() > 0 { Some(DMatrix::zeros(n, ds.p_x())) } else { None };
    let mut per_fold = Vec::new();
    let mut warnings = Vec::new();

    for split in plan.splits(n)? {
        let m = split.train.len();
        if m < 4 {
            return Err(Error::InvalidData(format!(
                "training fold {} has {m} rows; the internal split needs at least 4",
                split.fold
            )));
        }
        let sub = ds.subset(&split.train);
        let internal_seed = derive_seed(plan.seed() ^ spec.seed, 0x70f0 + split.fold as u64);
        let internal = make_folds(m, 2, internal_seed)?;
        let inst = generate_instrument(
            &sub,
            &SplitPlan::Folds(internal),
            spec,
            WeightingScheme::Identity,
            covariate_mode,
        )?;
        let pair = design_matrices(&sub);
        let prelim = crate::estimator::mlss_estimate(&inst, &pair, sub.y())?;
        let uhat = &prelim.residuals;

        let u2 = DMatrix::from_fn(m, 1, |i, _| uhat[i] * uhat[i]);
        let w_tr = rows_of(ds.w(), &split.train);
        let sigma2_model = fit(&spec.for_role(NuisanceRole::ResidualVariance)?, &w_tr, &u2)?;

        let mean_u = uhat.sum() / m as f64;
        let var_u = uhat.iter().map(|u| (u - mean_u) * (u - mean_u)).sum::<f64>() / (m - 1) as f64;
        let eps = if var_u > 0.0 { 1e-6 * var_u } else { 1e-12 };

        // Noise in sigma2-hat is correlated with the first-stage fit through
        // the shared training rows; unchecked it can tilt the inverse-variance
        // weights against the instrument's relevance and blow up the
        // estimator. Flooring at the lower quartile of the model's own
        // in-sample predictions bounds that amplification while leaving the
        // upper weight gradient intact. A constant prediction is its own
        // quartile, so exact oracles pass through unchanged.
        let s2_tr = sigma2_model.predict(&w_tr)?;
        let mut sorted_preds: Vec<f64> = s2_tr.column(0).iter().copied().collect();
        sorted_preds.sort_by(f64::total_cmp);
        let floor = sorted_preds[(m - 1) / 4].max(eps);

        let w_ev = rows_of(ds.w(), &split.eval);
        let s2_ev = sigma2_model.predict(&w_ev)?;
        let mut floored = 0usize;
        for (k, &i) in split.eval.iter().enumerate() {
            let s2 = s2_ev[(k, 0)];
            if s2 < floor {
                floored += 1;
                sigma2[i] = floor;
            } else {
                sigma2[i] = s2;
            }
        }
        if floored > 0 {
            warnings.push(Warning::VarianceFloored { count: floored });
        }

        let xu2_model = if let Some(xu2_acc) = xu2.as_mut() {
            let x_tr = rows_of(ds.x(), &split.train);
            let targets = DMatrix::from_fn(m, ds.p_x(), |i, j| x_tr[(i, j)] * uhat[i] * uhat[i]);
            let model = fit(&spec.for_role(NuisanceRole::CovariateResidualVariance)?, &w_tr, &targets)?;
            let pred = model.predict(&w_ev)?;
            for (k, &i) in split.eval.iter().enumerate() {
                for j in 0..ds.p_x() {
                    xu2_acc[(i, j)] = pred[(k, j)];
                }
            }
            Some(model)
        } else {
            None
        };

        per_fold.push(FoldNuisance {
            fold: split.fold,
            prelim_theta: prelim.theta_hat.clone(),
            floor,
            sigma2_model,
            xu2_model,
        });
    }

    Ok(EfficientNuisances { sigma2_hat: sigma2, xu2_hat: xu2, per_fold, warnings })
}

/// Assemble the heteroskedasticity-optimal instrument with covariates:
///
/// ```text
/// Upsilon(Z) = E[T|W] / sigma^2(W) + E[T Xt'] E[U^2 Xt Xt']^{-1} Xt,
/// Xt = X - E[X U^2 | W] / sigma^2(W)
/// ```
///
/// The unconditional moments are sample means over each training fold, so a
/// held-out row's instrument never uses its own fold.
pub fn hetero_optimal_instrument(
    ds: &Dataset,
    plan: &SplitPlan,
    spec: &LearnerSpec,
    nuis: &EfficientNuisances,
) -> Result<InstrumentMatrix> {
    if ds.p_x() == 0 {
        return Err(Error::InvalidConfig(
            "hetero_optimal_instrument requires at least one covariate".into(),
        ));
    }
    let n = ds.n();
    let p_d = ds.p_d();
    let p_x = ds.p_x();
    let width = 1 + p_d + p_x;
    let splits = plan.splits(n)?;
    if nuis.per_fold.len() != splits.len() {
        return Err(Error::DimensionMismatch(
            "nuisances were built under a different split plan".into(),
        ));
    }
    let xu2_hat = nuis.xu2_hat.as_ref().ok_or_else(|| {
        Error::InvalidConfig("nuisances lack E[X U^2 | W]; rebuild with covariates".into())
    })?;
    let pair = design_matrices(ds);

    let mut upsilon = DMatrix::zeros(n, width);
    let mut predictions = DMatrix::zeros(n, p_d);
    let mut diagnostics = Vec::new();
    let mut train_means = Vec::new();

    for split in &splits {
        let fnuis = &nuis.per_fold[split.fold];
        let mut warnings = Vec::new();
        let m = split.train.len();

        // In-sample nuisance evaluations on the training rows.
        let w_tr = rows_of(ds.w(), &split.train);
        let s2_tr = fnuis.sigma2_model.predict(&w_tr)?;
        let xu2_tr = fnuis
            .xu2_model
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing per-fold E[X U^2 | W] model".into()))?
            .predict(&w_tr)?;
        let x_tr = rows_of(ds.x(), &split.train);
        let t_tr = rows_of(&pair.t, &split.train);
        let y_tr = vec_of(ds.y(), &split.train);
        let uhat_tr = &y_tr - &t_tr * &fnuis.prelim_theta;

        let mut xtil_tr = DMatrix::zeros(m, p_x);
        for i in 0..m {
            let s2 = s2_tr[(i, 0)].max(fnuis.floor);
            for j in 0..p_x {
                xtil_tr[(i, j)] = x_tr[(i, j)] - xu2_tr[(i, j)] / s2;
            }
        }

        // Training-fold moments E[T Xt'] and E[U^2 Xt Xt'].
        let mut a = DMatrix::zeros(width, p_x);
        let mut b = DMatrix::zeros(p_x, p_x);
        for i in 0..m {
            let u2 = uhat_tr[i] * uhat_tr[i];
            for r in 0..width {
                for c in 0..p_x {
                    a[(r, c)] += t_tr[(i, r)] * xtil_tr[(i, c)];
                }
            }
            for r in 0..p_x {
                for c in 0..p_x {
                    b[(r, c)] += u2 * xtil_tr[(i, r)] * xtil_tr[(i, c)];
                }
            }
        }
        a /= m as f64;
        b /= m as f64;
        if linalg::condition_number(&b) > 1e12 {
            let trace: f64 = (0..p_x).map(|i| b[(i, i)]).sum();
            let lambda = if trace > 0.0 { 1e-8 * trace / p_x as f64 } else { 1e-8 };
            for i in 0..p_x {
                b[(i, i)] += lambda;
            }
            warnings.push(Warning::RidgeFallback { context: "E[U^2 Xt Xt'] moment".into() });
        }
        let correction = linalg::solve_square_mat(&b.transpose(), &a.transpose())
            .ok_or_else(|| Error::Degenerate("E[U^2 Xt Xt'] is singular".into()))?
            .transpose(); // A B^{-1}, using B's symmetry up to round-off

        // Conditional means E[T|W] = [1, E[D|W], E[X|W]] on the held-out rows.
        let mu = fit(&spec.for_role(NuisanceRole::TreatmentMean)?, &w_tr, &rows_of(ds.d(), &split.train))?;
        let mx = fit(&spec.for_role(NuisanceRole::CovariateMean)?, &w_tr, &x_tr)?;
        warnings.extend(mu.warnings().iter().cloned());
        warnings.extend(mx.warnings().iter().cloned());

        let w_ev = rows_of(ds.w(), &split.eval);
        let mu_ev = mu.predict(&w_ev)?;
        let mx_ev = mx.predict(&w_ev)?;

        for (k, &i) in split.eval.iter().enumerate() {
            let s2 = nuis.sigma2_hat[i];
            let mut et = DVector::zeros(width);
            et[0] = 1.0;
            for c in 0..p_d {
                et[1 + c] = mu_ev[(k, c)];
            }
            for j in 0..p_x {
                et[1 + p_d + j] = mx_ev[(k, j)];
            }
            let xtil = DVector::from_fn(p_x, |j, _| ds.x()[(i, j)] - xu2_hat[(i, j)] / s2);
            let row = et / s2 + &correction * xtil;
            for c in 0..width {
                upsilon[(i, c)] = row[c];
            }
            for c in 0..p_d {
                predictions[(i, c)] = mu_ev[(k, c)];
            }
        }

        let d_tr_means = column_means(&rows_of(ds.d(), &split.train));
        let d_ev = rows_of(ds.d(), &split.eval);
        degeneracy_warnings(&mu_ev, split.fold, &mut warnings);
        diagnostics.push(FoldDiagnostics {
            fold: split.fold,
            oos_r2: fold_r2(&mu_ev, &d_ev, &d_tr_means),
            warnings,
        });
        train_means.push(d_tr_means);
    }

    Ok(InstrumentMatrix {
        upsilon,
        excluded_block: (1..=p_d).collect(),
        fold_of: plan.fold_of(n),
        diagnostics,
        weighting: WeightingScheme::Efficient,
        predictions,
        train_means,
    })
}

/// Build the cross-fitted instrument under the requested weighting and
/// covariate mode. See the module docs for the row formulas.
pub fn generate_instrument(
    ds: &Dataset,
    plan: &SplitPlan,
    spec: &LearnerSpec,
    weighting: WeightingScheme,
    covariate_mode: CovariateMode,
) -> Result<InstrumentMatrix> {
    let n = ds.n();
    let p_d = ds.p_d();
    let p_x = ds.p_x();
    let width = 1 + p_d + p_x;
    let splits = plan.splits(n)?;
    for split in &splits {
        if split.train.len() < 2 || split.eval.len() < 2 {
            return Err(Error::InvalidData(format!(
                "fold {} has fewer than 2 observations",
                split.fold
            )));
        }
    }

    if weighting == WeightingScheme::Efficient {
        let nuis = efficient_nuisances(ds, plan, spec, covariate_mode)?;
        if p_x > 0 {
            let mut inst = hetero_optimal_instrument(ds, plan, spec, &nuis)?;
            if let Some(first) = inst.diagnostics.first_mut() {
                first.warnings.extend(nuis.warnings.iter().cloned());
            }
            return Ok(inst);
        }
        // No covariates: rows are [1, mu-hat(W)] / sigma2-hat(W).
        let mut upsilon = DMatrix::zeros(n, width);
        let mut predictions = DMatrix::zeros(n, p_d);
        let mut diagnostics = Vec::new();
        let mut train_means = Vec::new();
        for split in &splits {
            let mut warnings = Vec::new();
            let w_tr = rows_of(ds.w(), &split.train);
            let mu = fit(&spec.for_role(NuisanceRole::TreatmentMean)?, &w_tr, &rows_of(ds.d(), &split.train))?;
            warnings.extend(mu.warnings().iter().cloned());
            let mu_ev = mu.predict(&rows_of(ds.w(), &split.eval))?;
            for (k, &i) in split.eval.iter().enumerate() {
                let s2 = nuis.sigma2_hat[i];
                upsilon[(i, 0)] = 1.0 / s2;
                for c in 0..p_d {
                    upsilon[(i, 1 + c)] = mu_ev[(k, c)] / s2;
                    predictions[(i, c)] = mu_ev[(k, c)];
                }
            }
            let d_tr_means = column_means(&rows_of(ds.d(), &split.train));
            degeneracy_warnings(&mu_ev, split.fold, &mut warnings);
            diagnostics.push(FoldDiagnostics {
                fold: split.fold,
                oos_r2: fold_r2(&mu_ev, &rows_of(ds.d(), &split.eval), &d_tr_means),
                warnings,
            });
            train_means.push(d_tr_means);
        }
        if let Some(first) = diagnostics.first_mut() {
            first.warnings.extend(nuis.warnings.iter().cloned());
        }
        return Ok(InstrumentMatrix {
            upsilon,
            excluded_block: (1..=p_d).collect(),
            fold_of: plan.fold_of(n),
            diagnostics,
            weighting,
            predictions,
            train_means,
        });
    }

    // Identity weighting.
    let mut upsilon = DMatrix::zeros(n, width);
    let mut predictions = DMatrix::zeros(n, p_d);
    let mut diagnostics = Vec::new();
    let mut train_means = Vec::new();

    let pl = if p_x > 0 && covariate_mode == CovariateMode::PartialLinear {
        Some(partial_linear_predict(ds, plan, spec)?)
    } else {
        None
    };

    for (split_idx, split) in splits.iter().enumerate() {
        let mut warnings = Vec::new();
        let pred_ev: DMatrix<f64> = match &pl {
            Some(fit_result) => {
                warnings.extend(fit_result.fold_warnings[split_idx].iter().cloned());
                rows_of(&fit_result.predictions, &split.eval)
            }
            None => {
                let w_tr = rows_of(ds.w(), &split.train);
                let mu = fit(
                    &spec.for_role(NuisanceRole::TreatmentMean)?,
                    &w_tr,
                    &rows_of(ds.d(), &split.train),
                )?;
                warnings.extend(mu.warnings().iter().cloned());
                mu.predict(&rows_of(ds.w(), &split.eval))?
            }
        };

        for (k, &i) in split.eval.iter().enumerate() {
            upsilon[(i, 0)] = 1.0;
            for c in 0..p_d {
                upsilon[(i, 1 + c)] = pred_ev[(k, c)];
                predictions[(i, c)] = pred_ev[(k, c)];
            }
            for j in 0..p_x {
                upsilon[(i, 1 + p_d + j)] = ds.x()[(i, j)];
            }
        }

        let d_tr_means = column_means(&rows_of(ds.d(), &split.train));
        degeneracy_warnings(&pred_ev, split.fold, &mut warnings);
        diagnostics.push(FoldDiagnostics {
            fold: split.fold,
            oos_r2: fold_r2(&pred_ev, &rows_of(ds.d(), &split.eval), &d_tr_means),
            warnings,
        });
        train_means.push(d_tr_means);
    }

    Ok(InstrumentMatrix {
        upsilon,
        excluded_block: (1..=p_d).collect(),
        fold_of: plan.fold_of(n),
        diagnostics,
        weighting,
        predictions,
        train_means,
    })
}
