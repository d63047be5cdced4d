//! Machine-readable report structures and the learner JSON config mapping.
//!
//! Every run embeds its fully resolved configuration and seed so the output
//! is reproducible from the report alone. Infinite interval endpoints are
//! serialized as the strings "-inf" / "inf" (JSON numbers cannot carry them).

use crate::error::{Error, Result, Warning};
use crate::estimator::{EstimateResult, FStat};
use crate::instruments::{CovariateMode, InstrumentMatrix, WeightingScheme};
use crate::learner::{BoostParams, ForestParams, LearnerKind, LearnerSpec};
use crate::montecarlo::RepRecord;
use crate::weakiv::{ARSet, ArShape, CombinedArSets};
use serde::Serialize;
use serde_json::{json, Value};

/// Resolved run configuration echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub data: Option<String>,
    pub folds: usize,
    pub full_sample: bool,
    pub learner: Value,
    pub weighting: WeightingScheme,
    pub covariate_mode: CovariateMode,
    pub alpha: f64,
    pub seed: u64,
}

/// JSON form of a learner spec: {"kind": ..., "params": {...}, "seed": n}.
pub fn learner_to_json(spec: &LearnerSpec) -> Value {
    let params = match &spec.kind {
        LearnerKind::Ols => json!({}),
        LearnerKind::Polynomial { degree, interactions } => {
            json!({ "degree": degree, "interactions": interactions })
        }
        LearnerKind::Discretized { thresholds } => json!({ "thresholds": thresholds }),
        LearnerKind::RandomForest(p) => json!({
            "n_trees": p.n_trees,
            "max_depth": p.max_depth,
            "min_leaf": p.min_leaf,
            "mtry": p.mtry,
        }),
        LearnerKind::GradientBoosting(p) => json!({
            "n_trees": p.n_trees,
            "max_depth": p.max_depth,
            "learning_rate": p.learning_rate,
            "min_leaf": p.min_leaf,
        }),
        LearnerKind::Oracle(_) => json!({}),
    };
    json!({ "kind": spec.kind_name(), "params": params, "seed": spec.seed })
}

/// Parse a CLI learner argument: either a bare kind name ("ols",
/// "gradient_boosting", ...) or an inline JSON object
/// {"kind": ..., "params": {...}, "seed": n}. The oracle kind is
/// simulation-only and rejected here.
pub fn learner_from_arg(arg: &str, default_seed: u64) -> Result<LearnerSpec> {
    let trimmed = arg.trim();
    if !trimmed.starts_with('{') {
        return spec_from_parts(trimmed, &Value::Null, default_seed);
    }
    let value: Value = serde_json::from_str(trimmed)
        .map_err(|e| Error::InvalidConfig(format!("learner JSON: {e}")))?;
    let kind = value
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::InvalidConfig("learner JSON needs a `kind` string".into()))?;
    let seed = value.get("seed").and_then(Value::as_u64).unwrap_or(default_seed);
    let params = value.get("params").cloned().unwrap_or(Value::Null);
    spec_from_parts(kind, &params, seed)
}

fn get_usize(params: &Value, key: &str, default: usize) -> Result<usize> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .map(|u| u as usize)
            .ok_or_else(|| Error::InvalidConfig(format!("learner param `{key}` must be an integer"))),
    }
}

fn spec_from_parts(kind: &str, params: &Value, seed: u64) -> Result<LearnerSpec> {
    let kind = match kind {
        "ols" => LearnerKind::Ols,
        "polynomial" => {
            let degree = get_usize(params, "degree", 2)?;
            let interactions =
                params.get("interactions").and_then(Value::as_bool).unwrap_or(false);
            LearnerKind::Polynomial { degree, interactions }
        }
        "discretized" => {
            let thresholds = match params.get("thresholds") {
                None => vec![-1.0, 0.0, 1.0],
                Some(v) => v
                    .as_array()
                    .map(|arr| arr.iter().filter_map(Value::as_f64).collect::<Vec<_>>())
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| {
                        Error::InvalidConfig("discretized thresholds must be numbers".into())
                    })?,
            };
            LearnerKind::Discretized { thresholds }
        }
        "random_forest" => {
            let d = ForestParams::default();
            LearnerKind::RandomForest(ForestParams {
                n_trees: get_usize(params, "n_trees", d.n_trees)?,
                max_depth: get_usize(params, "max_depth", d.max_depth)?,
                min_leaf: get_usize(params, "min_leaf", d.min_leaf)?,
                mtry: match params.get("mtry") {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(v.as_u64().ok_or_else(|| {
                        Error::InvalidConfig("learner param `mtry` must be an integer".into())
                    })? as usize),
                },
            })
        }
        "gradient_boosting" => {
            let d = BoostParams::default();
            LearnerKind::GradientBoosting(BoostParams {
                n_trees: get_usize(params, "n_trees", d.n_trees)?,
                max_depth: get_usize(params, "max_depth", d.max_depth)?,
                learning_rate: match params.get("learning_rate") {
                    None => d.learning_rate,
                    Some(v) => v.as_f64().ok_or_else(|| {
                        Error::InvalidConfig("learner param `learning_rate` must be a number".into())
                    })?,
                },
                min_leaf: get_usize(params, "min_leaf", d.min_leaf)?,
            })
        }
        "oracle" => {
            return Err(Error::InvalidConfig(
                "the oracle learner is simulation-only and not available from the CLI".into(),
            ))
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown learner kind `{other}` (ols, polynomial, discretized, random_forest, \
                 gradient_boosting)"
            )))
        }
    };
    let spec = LearnerSpec { kind, seed };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientReport {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub wald_ci: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub oos_r2: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub first_stage_f: Vec<FStat>,
    pub oos_r2_pooled: Vec<f64>,
    pub per_fold: Vec<FoldReport>,
    pub g_condition_number: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    pub guidance: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub command: String,
    pub config: ResolvedConfig,
    pub n: usize,
    pub coefficients: Vec<CoefficientReport>,
    pub diagnostics: DiagnosticsReport,
    pub error: Option<ErrorReport>,
}

impl EstimateReport {
    pub fn from_estimate(
        config: ResolvedConfig,
        n: usize,
        est: &EstimateResult,
        cis: &[(f64, f64)],
        inst: &InstrumentMatrix,
    ) -> Self {
        let ses = est.std_errors();
        let coefficients = est
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| CoefficientReport {
                name: name.clone(),
                estimate: est.theta_hat[i],
                std_error: ses[i],
                wald_ci: [cis[i].0, cis[i].1],
            })
            .collect();
        EstimateReport {
            command: "estimate".into(),
            config,
            n,
            coefficients,
            diagnostics: DiagnosticsReport {
                first_stage_f: est.diagnostics.first_stage_f.clone(),
                oos_r2_pooled: est.diagnostics.oos_r2.clone(),
                per_fold: fold_reports(inst),
                g_condition_number: Some(est.diagnostics.g_condition),
                warnings: est.diagnostics.warnings.iter().map(Warning::to_string).collect(),
            },
            error: None,
        }
    }
}

pub fn fold_reports(inst: &InstrumentMatrix) -> Vec<FoldReport> {
    inst.diagnostics
        .iter()
        .map(|d| FoldReport {
            fold: d.fold,
            oos_r2: d.oos_r2.clone(),
            warnings: d.warnings.iter().map(Warning::to_string).collect(),
        })
        .collect()
}

/// Interval endpoints with infinities mapped to "-inf" / "inf" strings.
fn endpoint(v: f64) -> Value {
    if v == f64::NEG_INFINITY {
        Value::String("-inf".into())
    } else if v == f64::INFINITY {
        Value::String("inf".into())
    } else {
        json!(v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SetReport {
    pub shape: ArShape,
    pub intervals: Vec<[Value; 2]>,
    pub empty: bool,
    pub warnings: Vec<String>,
}

impl SetReport {
    pub fn from_set(set: &ARSet) -> Self {
        SetReport {
            shape: set.shape,
            intervals: set
                .intervals
                .iter()
                .map(|iv| [endpoint(iv.lo), endpoint(iv.hi)])
                .collect(),
            empty: set.is_empty(),
            warnings: set.warnings.iter().map(Warning::to_string).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArReport {
    pub command: String,
    pub config: ResolvedConfig,
    pub n: usize,
    pub per_fold_level: f64,
    /// Pooled point estimate of tau (absent under weak identification).
    pub pooled_tau: Option<f64>,
    /// Per-fold IV point estimates.
    pub per_fold_tau: Vec<f64>,
    pub per_fold_sets: Vec<SetReport>,
    /// Share of per-fold sets that are finite intervals.
    pub pct_finite: f64,
    pub combined: SetReport,
}

impl ArReport {
    pub fn new(
        config: ResolvedConfig,
        n: usize,
        k: usize,
        sets: &CombinedArSets,
        pooled_tau: Option<f64>,
        per_fold_tau: Vec<f64>,
    ) -> Self {
        let finite =
            sets.per_fold.iter().filter(|s| s.shape == ArShape::FiniteInterval).count();
        ArReport {
            command: "ar".into(),
            per_fold_level: config.alpha / k as f64,
            config,
            n,
            pooled_tau,
            per_fold_tau,
            per_fold_sets: sets.per_fold.iter().map(SetReport::from_set).collect(),
            pct_finite: finite as f64 / sets.per_fold.len() as f64,
            combined: SetReport::from_set(&sets.combined),
        }
    }
}

fn csv_number(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn csv_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

/// Flat CSV of per-replication simulation results.
pub fn records_to_csv(records: &[RepRecord]) -> String {
    let mut out = String::from(
        "n,estimator,rep,tau_hat,se,oos_r2,first_stage_f,wald_lo,wald_hi,wald_covers,ar_shape,ar_covers,error\n",
    );
    for r in records {
        let shape = r
            .ar_shape
            .map(|s| match s {
                ArShape::FiniteInterval => "finite_interval",
                ArShape::TwoRays => "two_rays",
                ArShape::WholeLine => "whole_line",
                ArShape::Empty => "empty",
            })
            .unwrap_or("");
        let error = r
            .error
            .as_ref()
            .map(|e| format!("\"{}\"", e.replace('"', "\"\"")))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.estimator,
            r.rep,
            csv_number(r.tau_hat),
            csv_number(r.se),
            csv_number(r.oos_r2),
            csv_number(r.first_stage_f),
            csv_number(r.wald_lo),
            csv_number(r.wald_hi),
            csv_bool(r.wald_covers),
            shape,
            csv_bool(r.ar_covers),
            error,
        ));
    }
    out
}

/// Flatten an estimate report's coefficient table to CSV.
pub fn estimate_to_csv(report: &EstimateReport) -> String {
    let mut out = String::from("name,estimate,std_error,ci_lo,ci_hi\n");
    for c in &report.coefficients {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.name, c.estimate, c.std_error, c.wald_ci[0], c.wald_ci[1]
        ));
    }
    out
}
