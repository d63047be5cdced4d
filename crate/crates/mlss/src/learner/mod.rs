//! Pluggable supervised learners for the first-stage nuisance regressions,
//! plus prediction-quality diagnostics.
//!
//! Every learner fits through the same [`fit`] / [`predict`] contract and is
//! deterministic given `(spec, data)`, including its seed. Multi-output
//! targets fit one independent single-output model per column.

mod boosting;
mod discretize;
mod forest;
mod linear;
mod tree;

pub use boosting::{BoostModel, BoostParams};
pub use forest::{ForestModel, ForestParams};
pub use linear::{expand_features, expanded_width, LinearModel};
pub use tree::Tree;

use crate::error::{Error, Result, Warning};
use discretize::DiscretizedModel;
use nalgebra::DMatrix;
use std::sync::Arc;

/// Truth function for simulation use: maps a feature row to the target
/// conditional mean(s).
pub type OracleFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Closed-form nuisance truths carried by an oracle learner. Only `mean_d`
/// is required; the others back the covariate and efficient-weighting paths
/// when available.
#[derive(Clone)]
pub struct OracleSet {
    /// E[D | W] (also the primary function used by a plain `fit`).
    pub mean_d: OracleFn,
    /// E[X | W].
    pub mean_x: Option<OracleFn>,
    /// E[U^2 | W].
    pub var_u: Option<OracleFn>,
    /// E[X U^2 | W].
    pub x_var_u: Option<OracleFn>,
}

impl OracleSet {
    pub fn new(mean_d: OracleFn) -> Self {
        OracleSet { mean_d, mean_x: None, var_u: None, x_var_u: None }
    }
}

impl std::fmt::Debug for OracleSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleSet")
            .field("mean_x", &self.mean_x.is_some())
            .field("var_u", &self.var_u.is_some())
            .field("x_var_u", &self.x_var_u.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum LearnerKind {
    Ols,
    Polynomial { degree: usize, interactions: bool },
    Discretized { thresholds: Vec<f64> },
    RandomForest(ForestParams),
    GradientBoosting(BoostParams),
    /// Simulation-only learner that evaluates a known truth function.
    Oracle(OracleSet),
}

/// A learner choice plus its seed. Two fits with identical spec and data
/// produce bitwise-identical predictions.
#[derive(Debug, Clone)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn ols() -> Self {
        LearnerSpec { kind: LearnerKind::Ols, seed: 0 }
    }
    pub fn polynomial(degree: usize, interactions: bool) -> Self {
        LearnerSpec { kind: LearnerKind::Polynomial { degree, interactions }, seed: 0 }
    }
    pub fn discretized() -> Self {
        LearnerSpec { kind: LearnerKind::Discretized { thresholds: vec![-1.0, 0.0, 1.0] }, seed: 0 }
    }
    pub fn random_forest() -> Self {
        LearnerSpec { kind: LearnerKind::RandomForest(ForestParams::default()), seed: 0 }
    }
    pub fn gradient_boosting() -> Self {
        LearnerSpec { kind: LearnerKind::GradientBoosting(BoostParams::default()), seed: 0 }
    }
    pub fn oracle(set: OracleSet) -> Self {
        LearnerSpec { kind: LearnerKind::Oracle(set), seed: 0 }
    }
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Stable name for reports and seed derivation.
    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            LearnerKind::Ols => "ols",
            LearnerKind::Polynomial { .. } => "polynomial",
            LearnerKind::Discretized { .. } => "discretized",
            LearnerKind::RandomForest(_) => "random_forest",
            LearnerKind::GradientBoosting(_) => "gradient_boosting",
            LearnerKind::Oracle(_) => "oracle",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            LearnerKind::Polynomial { degree, .. } => {
                if !(1..=3).contains(degree) {
                    return Err(Error::InvalidConfig(format!(
                        "polynomial degree must be 1..=3, got {degree}"
                    )));
                }
            }
            LearnerKind::Discretized { thresholds } => {
                if thresholds.is_empty() {
                    return Err(Error::InvalidConfig("discretized needs thresholds".into()));
                }
                if thresholds.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidConfig(
                        "discretized thresholds must be strictly increasing".into(),
                    ));
                }
            }
            LearnerKind::RandomForest(p) => {
                if p.n_trees == 0 || p.min_leaf == 0 {
                    return Err(Error::InvalidConfig(
                        "random forest needs n_trees >= 1 and min_leaf >= 1".into(),
                    ));
                }
            }
            LearnerKind::GradientBoosting(p) => {
                if p.min_leaf == 0 || !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    return Err(Error::InvalidConfig(
                        "gradient boosting needs min_leaf >= 1 and learning_rate in (0, 1]".into(),
                    ));
                }
            }
            LearnerKind::Ols | LearnerKind::Oracle(_) => {}
        }
        Ok(())
    }
}

/// Which nuisance a fit targets; selects the matching component of an oracle
/// learner and is a no-op for every other kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NuisanceRole {
    TreatmentMean,
    CovariateMean,
    ResidualVariance,
    CovariateResidualVariance,
}

impl LearnerSpec {
    pub(crate) fn for_role(&self, role: NuisanceRole) -> Result<LearnerSpec> {
        let LearnerKind::Oracle(set) = &self.kind else {
            return Ok(self.clone());
        };
        let chosen = match role {
            NuisanceRole::TreatmentMean => Some(set.mean_d.clone()),
            NuisanceRole::CovariateMean => set.mean_x.clone(),
            NuisanceRole::ResidualVariance => set.var_u.clone(),
            NuisanceRole::CovariateResidualVariance => set.x_var_u.clone(),
        };
        let Some(f) = chosen else {
            return Err(Error::InvalidConfig(format!(
                "oracle learner does not carry a truth function for {role:?}"
            )));
        };
        Ok(LearnerSpec { kind: LearnerKind::Oracle(OracleSet::new(f)), seed: self.seed })
    }
}

/// Fitted model state behind a [`Predictor`].
#[derive(Clone)]
pub enum FittedModel {
    Linear(LinearModel),
    Discretized(DiscretizedModel),
    /// One forest per target column.
    Forest(Vec<ForestModel>),
    /// One boosting model per target column.
    Boost(Vec<BoostModel>),
    Oracle(OracleFn),
    /// Per-target constant fallback (training means).
    Constant(Vec<f64>),
}

/// Immutable fitted model; safe for concurrent prediction.
#[derive(Clone)]
pub struct Predictor {
    model: FittedModel,
    n_features: usize,
    n_targets: usize,
    warnings: Vec<Warning>,
}

impl std::fmt::Debug for Predictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.model {
            FittedModel::Linear(_) => "linear",
            FittedModel::Discretized(_) => "discretized",
            FittedModel::Forest(_) => "forest",
            FittedModel::Boost(_) => "boost",
            FittedModel::Oracle(_) => "oracle",
            FittedModel::Constant(_) => "constant",
        };
        f.debug_struct("Predictor")
            .field("model", &kind)
            .field("n_features", &self.n_features)
            .field("n_targets", &self.n_targets)
            .finish()
    }
}

impl Predictor {
    pub fn n_features(&self) -> usize {
        self.n_features
    }
    pub fn n_targets(&self) -> usize {
        self.n_targets
    }
    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }
    pub fn model(&self) -> &FittedModel {
        &self.model
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        predict(self, features)
    }

    /// For forest models: per-tree predictions, one m x r matrix per tree.
    pub fn per_tree_predictions(&self, features: &DMatrix<f64>) -> Option<Vec<DMatrix<f64>>> {
        let FittedModel::Forest(forests) = &self.model else {
            return None;
        };
        let m = features.nrows();
        let n_trees = forests.first().map_or(0, |f| f.trees.len());
        let mut out = vec![DMatrix::zeros(m, forests.len()); n_trees];
        let mut row = vec![0.0f64; features.ncols()];
        for i in 0..m {
            for (f, v) in row.iter_mut().enumerate() {
                *v = features[(i, f)];
            }
            for (t, forest) in forests.iter().enumerate() {
                for (k, preds) in forest.tree_predictions_row(&row).into_iter().enumerate() {
                    out[k][(i, t)] = preds;
                }
            }
        }
        Some(out)
    }
}

/// Fit a learner to `targets` (m x r) from `features` (m x q). Multi-output
/// targets fit r independent single-output models, each seeded identically,
/// so a joint fit matches r separate fits bit for bit.
pub fn fit(spec: &LearnerSpec, features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Predictor> {
    spec.validate()?;
    let m = features.nrows();
    let q = features.ncols();
    let r = targets.ncols();
    if targets.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "features have {m} rows, targets {}",
            targets.nrows()
        )));
    }
    if m < 2 {
        return Err(Error::InvalidData(format!("need at least 2 training rows, got {m}")));
    }
    if q == 0 || r == 0 {
        return Err(Error::InvalidData("features and targets must be non-empty".into()));
    }
    if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in training data".into()));
    }

    let mut warnings = Vec::new();
    let model = match &spec.kind {
        LearnerKind::Ols => {
            let m = linear::fit_linear(features, targets, 1, false);
            if m.ridge_fallback {
                warnings.push(Warning::RidgeFallback { context: "ols fit".into() });
            }
            FittedModel::Linear(m)
        }
        LearnerKind::Polynomial { degree, interactions } => {
            let m = linear::fit_linear(features, targets, *degree, *interactions);
            if m.ridge_fallback {
                warnings.push(Warning::RidgeFallback { context: "polynomial fit".into() });
            }
            FittedModel::Linear(m)
        }
        LearnerKind::Discretized { thresholds } => {
            FittedModel::Discretized(discretize::fit_discretized(features, targets, thresholds))
        }
        LearnerKind::RandomForest(params) => {
            if m < params.min_leaf.max(2) {
                warnings.push(Warning::ConstantFallback { context: "random forest".into() });
                FittedModel::Constant(column_means(targets))
            } else {
                let cols = to_columns(features);
                let forests = (0..r)
                    .map(|t| {
                        let target: Vec<f64> = targets.column(t).iter().copied().collect();
                        forest::fit_forest(&cols, &target, params, spec.seed)
                    })
                    .collect();
                FittedModel::Forest(forests)
            }
        }
        LearnerKind::GradientBoosting(params) => {
            if m < params.min_leaf.max(2) {
                warnings.push(Warning::ConstantFallback { context: "gradient boosting".into() });
                FittedModel::Constant(column_means(targets))
            } else {
                let cols = to_columns(features);
                let boosts = (0..r)
                    .map(|t| {
                        let target: Vec<f64> = targets.column(t).iter().copied().collect();
                        boosting::fit_boost(&cols, &target, params)
                    })
                    .collect();
                FittedModel::Boost(boosts)
            }
        }
        LearnerKind::Oracle(set) => FittedModel::Oracle(set.mean_d.clone()),
    };

    Ok(Predictor { model, n_features: q, n_targets: r, warnings })
}

/// Evaluate a fitted predictor on new rows.
pub fn predict(p: &Predictor, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != p.n_features {
        return Err(Error::DimensionMismatch(format!(
            "predictor was fitted on {} features, got {}",
            p.n_features,
            features.ncols()
        )));
    }
    let m = features.nrows();
    let r = p.n_targets;
    let out = match &p.model {
        FittedModel::Linear(model) => linear::predict_linear(model, features),
        FittedModel::Discretized(model) => by_row(features, r, |row| model.predict_row(row)),
        FittedModel::Forest(forests) => by_row(features, r, |row| {
            forests.iter().map(|f| f.predict_row(row)).collect()
        }),
        FittedModel::Boost(boosts) => by_row(features, r, |row| {
            boosts.iter().map(|b| b.predict_row(row)).collect()
        }),
        FittedModel::Oracle(f) => {
            let mut out = DMatrix::zeros(m, r);
            let mut row = vec![0.0f64; features.ncols()];
            for i in 0..m {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = features[(i, j)];
                }
                let vals = f(&row);
                if vals.len() != r {
                    return Err(Error::DimensionMismatch(format!(
                        "oracle returned {} values for {} targets",
                        vals.len(),
                        r
                    )));
                }
                for (j, v) in vals.into_iter().enumerate() {
                    out[(i, j)] = v;
                }
            }
            out
        }
        FittedModel::Constant(means) => {
            DMatrix::from_fn(m, r, |_, j| means[j])
        }
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite prediction".into()));
    }
    Ok(out)
}

fn by_row(features: &DMatrix<f64>, r: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let m = features.nrows();
    let mut out = DMatrix::zeros(m, r);
    let mut row = vec![0.0f64; features.ncols()];
    for i in 0..m {
        for (j, v) in row.iter_mut().enumerate() {
            *v = features[(i, j)];
        }
        for (j, v) in f(&row).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

fn to_columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect()
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).sum() / m.nrows() as f64).collect()
}

/// Out-of-sample R-squared of `pred` against `actual`, benchmarked at the
/// training mean: 1 - SS_res / SS_base. May be negative. A zero benchmark
/// sum of squares returns 0 for a perfect fit and -inf otherwise.
pub fn oos_r2(pred: &[f64], actual: &[f64], train_mean: f64) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction length {} vs actual {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidData("oos_r2 needs at least one observation".into()));
    }
    let num: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).sum();
    let den: f64 = actual.iter().map(|a| (a - train_mean) * (a - train_mean)).sum();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seed_rng, standard_normal};

    fn random_matrix(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed_rng(seed);
        DMatrix::from_fn(n, q, |_, _| standard_normal(&mut rng))
    }

    #[test]
    fn ols_interpolates_its_own_column_space() {
        let x = random_matrix(30, 3, 1);
        let p = fit(&LearnerSpec::ols(), &x, &x).unwrap();
        let pred = p.predict(&x).unwrap();
        assert!((&pred - &x).abs().max() < 1e-10);
    }

    #[test]
    fn every_learner_fits_a_constant() {
        let x = random_matrix(40, 2, 2);
        let c = DMatrix::from_element(40, 1, 3.25);
        for spec in [
            LearnerSpec::ols(),
            LearnerSpec::polynomial(2, true),
            LearnerSpec::discretized(),
            LearnerSpec::random_forest().with_seed(5),
            LearnerSpec::gradient_boosting().with_seed(5),
        ] {
            let p = fit(&spec, &x, &c).unwrap();
            let pred = p.predict(&x).unwrap();
            let worst = (0..40).map(|i| (pred[(i, 0)] - 3.25).abs()).fold(0.0f64, f64::max);
            assert!(worst < 1e-10, "{} missed constant by {worst}", spec.kind_name());
        }
    }

    #[test]
    fn boosting_with_zero_trees_predicts_training_mean() {
        let x = random_matrix(20, 1, 3);
        let y = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let spec = LearnerSpec {
            kind: LearnerKind::GradientBoosting(BoostParams { n_trees: 0, ..Default::default() }),
            seed: 0,
        };
        let p = fit(&spec, &x, &y).unwrap();
        let pred = p.predict(&random_matrix(5, 1, 4)).unwrap();
        for i in 0..5 {
            assert!((pred[(i, 0)] - 9.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let x = random_matrix(80, 3, 7);
        let y = DMatrix::from_fn(80, 1, |i, _| (x[(i, 0)] * x[(i, 1)]).sin() + x[(i, 2)]);
        for spec in [LearnerSpec::random_forest().with_seed(11), LearnerSpec::gradient_boosting()] {
            let a = fit(&spec, &x, &y).unwrap().predict(&x).unwrap();
            let b = fit(&spec, &x, &y).unwrap().predict(&x).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn ols_equals_polynomial_degree_one() {
        let x = random_matrix(50, 2, 8);
        let y = DMatrix::from_fn(50, 1, |i, _| 1.0 + 2.0 * x[(i, 0)] - x[(i, 1)]);
        let a = fit(&LearnerSpec::ols(), &x, &y).unwrap().predict(&x).unwrap();
        let b = fit(&LearnerSpec::polynomial(1, false), &x, &y).unwrap().predict(&x).unwrap();
        assert!((a - b).abs().max() < 1e-10);
    }

    #[test]
    fn multi_output_matches_independent_fits() {
        let x = random_matrix(60, 2, 9);
        let y = DMatrix::from_fn(60, 2, |i, j| {
            if j == 0 { x[(i, 0)].max(0.0) } else { x[(i, 1)] * x[(i, 0)] }
        });
        for spec in [
            LearnerSpec::random_forest().with_seed(3),
            LearnerSpec::gradient_boosting(),
            LearnerSpec::ols(),
        ] {
            let joint = fit(&spec, &x, &y).unwrap().predict(&x).unwrap();
            for t in 0..2 {
                let single = fit(&spec, &x, &DMatrix::from_fn(60, 1, |i, _| y[(i, t)]))
                    .unwrap()
                    .predict(&x)
                    .unwrap();
                for i in 0..60 {
                    assert_eq!(joint[(i, t)].to_bits(), single[(i, 0)].to_bits());
                }
            }
        }
    }

    #[test]
    fn forest_fit_is_worker_count_invariant() {
        let x = random_matrix(100, 3, 21);
        let y = DMatrix::from_fn(100, 1, |i, _| (x[(i, 0)] * x[(i, 1)]).max(x[(i, 2)]));
        let spec = LearnerSpec::random_forest().with_seed(5);
        let with_pool = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| fit(&spec, &x, &y).unwrap().predict(&x).unwrap())
        };
        let a = with_pool(1);
        let b = with_pool(4);
        for (u, v) in a.iter().zip(b.iter()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn forest_mean_matches_per_tree_outputs() {
        let x = random_matrix(50, 2, 10);
        let y = DMatrix::from_fn(50, 1, |i, _| x[(i, 0)].abs());
        let p = fit(&LearnerSpec::random_forest().with_seed(2), &x, &y).unwrap();
        let fresh = random_matrix(10, 2, 11);
        let pred = p.predict(&fresh).unwrap();
        let per_tree = p.per_tree_predictions(&fresh).unwrap();
        for i in 0..10 {
            let mean: f64 =
                per_tree.iter().map(|m| m[(i, 0)]).sum::<f64>() / per_tree.len() as f64;
            assert!((pred[(i, 0)] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_passes_through_truth() {
        let set = OracleSet::new(Arc::new(|row: &[f64]| vec![row[0] * 2.0 + 1.0]));
        let x = random_matrix(10, 1, 12);
        let y = DMatrix::zeros(10, 1);
        let p = fit(&LearnerSpec::oracle(set), &x, &y).unwrap();
        let pred = p.predict(&x).unwrap();
        for i in 0..10 {
            assert_eq!(pred[(i, 0)], x[(i, 0)] * 2.0 + 1.0);
        }
    }

    #[test]
    fn tiny_samples_fall_back_to_constant_with_warning() {
        let x = random_matrix(3, 1, 13);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 6.0]);
        let p = fit(&LearnerSpec::random_forest(), &x, &y).unwrap();
        assert!(matches!(p.model(), FittedModel::Constant(_)));
        assert!(matches!(p.warnings()[0], Warning::ConstantFallback { .. }));
        let pred = p.predict(&x).unwrap();
        assert!((pred[(0, 0)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn oos_r2_cases() {
        // Perfect fit.
        assert_eq!(oos_r2(&[1.0, 2.0], &[1.0, 2.0], 0.0).unwrap(), 1.0);
        // Baseline prediction at the hold-out mean.
        assert_eq!(oos_r2(&[1.0, 1.0], &[0.0, 2.0], 1.0).unwrap(), 0.0);
        // Negative R2 is possible.
        assert!(oos_r2(&[10.0, -10.0], &[0.0, 2.0], 1.0).unwrap() < 0.0);
        // Zero-variance hold-out.
        assert_eq!(oos_r2(&[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(oos_r2(&[2.0, 1.0], &[1.0, 1.0], 1.0).unwrap(), f64::NEG_INFINITY);
        assert!(oos_r2(&[1.0], &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn discretized_is_constant_within_cells() {
        let mut rng = seed_rng(20);
        let x = DMatrix::from_fn(200, 1, |_, _| 3.0 * standard_normal(&mut rng));
        let y = DMatrix::from_fn(200, 1, |i, _| x[(i, 0)].powi(2));
        let p = fit(&LearnerSpec::discretized(), &x, &y).unwrap();
        // Points in the same cell get the same prediction.
        let probe = DMatrix::from_row_slice(2, 1, &[0.2, 0.9]);
        let pred = p.predict(&probe).unwrap();
        assert_eq!(pred[(0, 0)], pred[(1, 0)]);
        // And that prediction is the training cell mean.
        let in_cell: Vec<f64> = (0..200)
            .filter(|&i| x[(i, 0)] > 0.0 && x[(i, 0)] <= 1.0)
            .map(|i| y[(i, 0)])
            .collect();
        let mean: f64 = in_cell.iter().sum::<f64>() / in_cell.len() as f64;
        assert!((pred[(0, 0)] - mean).abs() < 1e-10);
    }
}
