//! Estimator-menu experiment runner: generate data, run every menu entry on
//! the same draw, and aggregate winsorized summaries and coverage rates.
//!
//! Per-replication seeds are derived from the master seed and the
//! replication index, so reports are byte-identical for any worker count.

use super::dgp::{DgpKind, SimDataset};
use super::{median, winsorized_sd};
use crate::data::{design_matrices, make_folds, SplitPlan};
use crate::error::{Error, Result};
use crate::estimator::{mlss_estimate, tsls, TslsTransform};
use crate::instruments::{generate_instrument, CovariateMode, WeightingScheme};
use crate::learner::LearnerSpec;
use crate::rng::{derive_seed, hash_name};
use crate::weakiv::{ar_set_combined, wald_ci, ARFoldInput, ArShape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn default_k() -> usize {
    2
}
fn default_alpha() -> f64 {
    0.05
}
fn default_winsor() -> f64 {
    0.01
}
fn default_weighting() -> WeightingScheme {
    WeightingScheme::Identity
}
fn default_cov_mode() -> CovariateMode {
    CovariateMode::PartialLinear
}

/// Experiment configuration; the JSON file uses the short key names shown in
/// the serde attributes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: DgpKind,
    #[serde(rename = "n")]
    pub n_values: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<String>,
    #[serde(rename = "K", default = "default_k")]
    pub k_folds: usize,
    #[serde(default = "default_weighting")]
    pub weighting: WeightingScheme,
    #[serde(default = "default_cov_mode")]
    pub covariate_mode: CovariateMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_winsor")]
    pub winsor_q: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_values.is_empty() {
            problems.push("`n` must list at least one sample size".to_string());
        }
        if self.reps == 0 {
            problems.push("`reps` must be at least 1".to_string());
        }
        if self.estimators.is_empty() {
            problems.push("`estimators` must be non-empty".to_string());
        }
        if self.k_folds < 2 {
            problems.push("`K` must be at least 2".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push(format!("`alpha` must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.winsor_q > 0.0 && self.winsor_q < 0.5) {
            problems.push(format!("`winsor_q` must lie in (0, 0.5), got {}", self.winsor_q));
        }
        for name in &self.estimators {
            if let Err(e) = parse_estimator(name) {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Learners available through the menu.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MenuLearner {
    Oracle,
    Lgb,
    Rf,
    Discretized,
    Lin,
    Quad,
    QuadInteract,
    CubicInteract,
}

/// A parsed menu entry: a split-sample estimator with an optional weighting
/// override or full-sample flag, or a classical TSLS baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MenuMethod {
    Mlss { learner: MenuLearner, weighting: Option<WeightingScheme>, full_sample: bool },
    Tsls(TslsTransform),
}

pub fn valid_estimator_names() -> Vec<&'static str> {
    vec![
        "oracle",
        "lgb",
        "rf",
        "discretized",
        "lin",
        "quad",
        "quad_interact",
        "cubic_interact",
        "tsls_linear",
        "tsls_quadratic",
        "tsls_quadratic_interact",
        "tsls_cubic_interact",
        "tsls_discretized",
        "<base>:efficient",
        "<base>:identity",
        "<base>:full",
    ]
}

/// Parse a menu entry. Split-sample bases take optional `:efficient`,
/// `:identity`, and `:full` suffixes, e.g. `discretized:efficient` or
/// `lin:full`.
pub fn parse_estimator(name: &str) -> Result<MenuMethod> {
    let mut parts = name.split(':');
    let base = parts.next().unwrap_or("");
    if let Some(transform) = match base {
        "tsls_linear" => Some(TslsTransform::Linear),
        "tsls_quadratic" => Some(TslsTransform::Quadratic),
        "tsls_quadratic_interact" => Some(TslsTransform::QuadraticInteract),
        "tsls_cubic_interact" => Some(TslsTransform::CubicInteract),
        "tsls_discretized" => Some(TslsTransform::Discretized),
        _ => None,
    } {
        if parts.next().is_some() {
            return Err(Error::InvalidConfig(format!(
                "estimator `{name}`: TSLS entries take no suffix"
            )));
        }
        return Ok(MenuMethod::Tsls(transform));
    }

    let learner = match base {
        "oracle" => MenuLearner::Oracle,
        "lgb" => MenuLearner::Lgb,
        "rf" => MenuLearner::Rf,
        "discretized" => MenuLearner::Discretized,
        "lin" => MenuLearner::Lin,
        "quad" => MenuLearner::Quad,
        "quad_interact" => MenuLearner::QuadInteract,
        "cubic_interact" => MenuLearner::CubicInteract,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown estimator `{other}`; valid names: {}",
                valid_estimator_names().join(", ")
            )))
        }
    };
    let mut weighting = None;
    let mut full_sample = false;
    for flag in parts {
        match flag {
            "efficient" => weighting = Some(WeightingScheme::Efficient),
            "identity" => weighting = Some(WeightingScheme::Identity),
            "full" => full_sample = true,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "estimator `{name}`: unknown suffix `{other}` (use efficient, identity, full)"
                )))
            }
        }
    }
    Ok(MenuMethod::Mlss { learner, weighting, full_sample })
}

fn learner_spec(learner: MenuLearner, dgp: DgpKind, seed: u64) -> LearnerSpec {
    match learner {
        MenuLearner::Oracle => LearnerSpec::oracle(dgp.oracle()),
        MenuLearner::Lgb => LearnerSpec::gradient_boosting(),
        MenuLearner::Rf => LearnerSpec::random_forest(),
        MenuLearner::Discretized => LearnerSpec::discretized(),
        MenuLearner::Lin => LearnerSpec::polynomial(1, false),
        MenuLearner::Quad => LearnerSpec::polynomial(2, false),
        MenuLearner::QuadInteract => LearnerSpec::polynomial(2, true),
        MenuLearner::CubicInteract => LearnerSpec::polynomial(3, true),
    }
    .with_seed(seed)
}

/// One replication's results for one estimator. `None` entries mean the
/// quantity is undefined for this estimator (e.g. AR sets for non-split
/// entries) or the estimator failed (see `error`).
#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub n: usize,
    pub estimator: String,
    pub rep: usize,
    pub tau_hat: Option<f64>,
    pub se: Option<f64>,
    pub oos_r2: Option<f64>,
    pub first_stage_f: Option<f64>,
    pub wald_lo: Option<f64>,
    pub wald_hi: Option<f64>,
    pub wald_covers: Option<bool>,
    pub ar_shape: Option<ArShape>,
    pub ar_covers: Option<bool>,
    pub error: Option<String>,
}

/// Per-(estimator, n) summary cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub estimator: String,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub median_estimate: Option<f64>,
    pub winsorized_sd: Option<f64>,
    pub median_se: Option<f64>,
    pub wald_coverage: Option<f64>,
    pub ar_coverage: Option<f64>,
    pub pct_ar_finite: Option<f64>,
    pub median_oos_r2: Option<f64>,
    pub median_first_stage_f: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
}

fn run_single(
    name: &str,
    method: MenuMethod,
    sim: &SimDataset,
    config: &ExperimentConfig,
    rep_seed: u64,
    fold_seed: u64,
) -> Result<RepRecord> {
    let ds = &sim.dataset;
    let truth = sim.tau_true;
    let mut record = RepRecord {
        n: ds.n(),
        estimator: name.to_string(),
        rep: 0,
        tau_hat: None,
        se: None,
        oos_r2: None,
        first_stage_f: None,
        wald_lo: None,
        wald_hi: None,
        wald_covers: None,
        ar_shape: None,
        ar_covers: None,
        error: None,
    };

    let est = match method {
        MenuMethod::Tsls(transform) => tsls(ds, transform)?,
        MenuMethod::Mlss { learner, weighting, full_sample } => {
            let weighting = weighting.unwrap_or(config.weighting);
            let spec = learner_spec(learner, config.dgp, derive_seed(rep_seed, hash_name(name)));
            let plan = if full_sample {
                SplitPlan::FullSample
            } else {
                SplitPlan::Folds(make_folds(ds.n(), config.k_folds, fold_seed)?)
            };
            let inst = generate_instrument(ds, &plan, &spec, weighting, config.covariate_mode)?;
            let pair = design_matrices(ds);
            let est = mlss_estimate(&inst, &pair, ds.y())?;
            if !full_sample && weighting == WeightingScheme::Identity {
                let fold_inputs: Vec<ARFoldInput> = (0..config.k_folds)
                    .map(|j| ARFoldInput::from_instrument(&inst, ds, j))
                    .collect::<Result<_>>()?;
                let sets = ar_set_combined(&fold_inputs, config.alpha)?;
                record.ar_shape = Some(sets.combined.shape);
                record.ar_covers = Some(sets.combined.contains(truth));
            }
            est
        }
    };

    let tau = est.theta_hat[1];
    let se = est.vcov[(1, 1)].max(0.0).sqrt();
    let (lo, hi) = wald_ci(&est, 1, config.alpha)?;
    record.tau_hat = Some(tau);
    record.se = Some(se);
    record.oos_r2 = est.diagnostics.oos_r2.first().copied();
    record.first_stage_f = est.diagnostics.first_stage_f.first().map(|f| f.value);
    record.wald_lo = Some(lo);
    record.wald_hi = Some(hi);
    record.wald_covers = Some(lo <= truth && truth <= hi);
    Ok(record)
}

/// Run the estimator menu over fresh draws. Returns the aggregated report
/// and the flat per-replication records (one row per estimator per rep).
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentReport, Vec<RepRecord>)> {
    config.validate()?;
    let methods: Vec<(String, MenuMethod)> = config
        .estimators
        .iter()
        .map(|name| parse_estimator(name).map(|m| (name.clone(), m)))
        .collect::<Result<_>>()?;

    let mut records: Vec<RepRecord> = Vec::new();
    for &n in &config.n_values {
        let mut per_rep: Vec<Vec<RepRecord>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = derive_seed(derive_seed(config.seed, n as u64), rep as u64);
                let sim = config.dgp.generate(n, derive_seed(rep_seed, 0));
                let fold_seed = derive_seed(rep_seed, 1);
                methods
                    .iter()
                    .map(|(name, method)| {
                        let mut record =
                            match run_single(name, *method, &sim, config, rep_seed, fold_seed) {
                                Ok(r) => r,
                                Err(e) => RepRecord {
                                    n,
                                    estimator: name.clone(),
                                    rep,
                                    tau_hat: None,
                                    se: None,
                                    oos_r2: None,
                                    first_stage_f: None,
                                    wald_lo: None,
                                    wald_hi: None,
                                    wald_covers: None,
                                    ar_shape: None,
                                    ar_covers: None,
                                    error: Some(e.to_string()),
                                },
                            };
                        record.rep = rep;
                        record
                    })
                    .collect()
            })
            .collect();
        for rep_records in per_rep.drain(..) {
            records.extend(rep_records);
        }
    }

    let mut cells = Vec::new();
    for (name, _) in &methods {
        for &n in &config.n_values {
            let subset: Vec<&RepRecord> =
                records.iter().filter(|r| r.estimator == *name && r.n == n).collect();
            let ok: Vec<&&RepRecord> = subset.iter().filter(|r| r.tau_hat.is_some()).collect();
            let taus: Vec<f64> = ok.iter().filter_map(|r| r.tau_hat).collect();
            let ses: Vec<f64> = ok.iter().filter_map(|r| r.se).collect();
            let r2s: Vec<f64> = ok.iter().filter_map(|r| r.oos_r2).collect();
            let fs: Vec<f64> = ok.iter().filter_map(|r| r.first_stage_f).collect();
            let wald: Vec<bool> = ok.iter().filter_map(|r| r.wald_covers).collect();
            let ar: Vec<bool> = ok.iter().filter_map(|r| r.ar_covers).collect();
            let shapes: Vec<ArShape> = ok.iter().filter_map(|r| r.ar_shape).collect();

            let w_sd = match taus.len() {
                0 => None,
                1 => Some(0.0),
                _ => Some(winsorized_sd(&taus, config.winsor_q)?),
            };
            cells.push(CellSummary {
                estimator: name.clone(),
                n,
                replications: subset.len(),
                failures: subset.len() - taus.len(),
                median_estimate: median(&taus),
                winsorized_sd: w_sd,
                median_se: median(&ses),
                wald_coverage: fraction(&wald),
                ar_coverage: fraction(&ar),
                pct_ar_finite: if shapes.is_empty() {
                    None
                } else {
                    Some(
                        shapes.iter().filter(|s| **s == ArShape::FiniteInterval).count() as f64
                            / shapes.len() as f64,
                    )
                },
                median_oos_r2: median(&r2s),
                median_first_stage_f: median(&fs),
            });
        }
    }

    Ok((ExperimentReport { config: config.clone(), cells }, records))
}

fn fraction(flags: &[bool]) -> Option<f64> {
    if flags.is_empty() {
        None
    } else {
        Some(flags.iter().filter(|b| **b).count() as f64 / flags.len() as f64)
    }
}
