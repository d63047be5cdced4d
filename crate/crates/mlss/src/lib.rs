//! Machine-learning split-sample (MLSS) instrumental variable estimation.
//!
//! The estimator predicts endogenous treatments from excluded instruments
//! with cross-fitted supervised learners, uses the predictions (and any
//! exogenous covariates) as technical instruments, and solves the resulting
//! just-identified moment conditions. The crate covers:
//!
//! - [`data`]: CSV ingestion, fold assignment, and design matrices;
//! - [`learner`]: OLS, polynomial, discretization, random forest, and
//!   gradient boosting first stages behind one deterministic contract;
//! - [`instruments`]: cross-fitted instrument construction under identity
//!   and efficient (inverse-variance) weighting, with and without
//!   covariates;
//! - [`estimator`]: the plug-in estimator with sandwich variance, the FWL
//!   subvector path, classical TSLS baselines, first-stage F diagnostics,
//!   and a Hausman test;
//! - [`weakiv`]: per-fold Anderson-Rubin confidence sets in closed form with
//!   Bonferroni combination, plus Wald intervals;
//! - [`montecarlo`]: simulation designs, an estimator-menu experiment
//!   runner, winsorized summaries, and marginal-treatment-effect weights;
//! - [`cli`]: the `estimate` / `ar` / `simulate` command-line entry points.
//!
//! The `examples/` directory has one runnable example per capability; start
//! with `estimate_csv`.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimator;
pub mod instruments;
pub mod learner;
pub mod linalg;
pub mod montecarlo;
pub mod report;
pub mod rng;
pub mod weakiv;

pub use data::{design_matrices, load_csv, make_folds, Dataset, DesignPair, FoldAssignment, SplitPlan};
pub use error::{Error, Result, Warning};
pub use estimator::{
    first_stage_f, fwl_residualize, hausman_test, mlss_estimate, subvector_tau, tsls,
    EstimateResult, FStat, TslsTransform,
};
pub use instruments::{
    efficient_nuisances, generate_instrument, hetero_optimal_instrument, partial_linear_predict,
    CovariateMode, EfficientNuisances, InstrumentMatrix, WeightingScheme,
};
pub use learner::{fit, oos_r2, predict, LearnerKind, LearnerSpec, OracleSet, Predictor};
pub use montecarlo::{
    coverage, dgp_cov, dgp_nocov, extra_sample_error, mte_weights, run_experiment, winsorized_sd,
    DgpKind, ExperimentConfig, ExperimentReport, SimDataset,
};
pub use weakiv::{
    ar_grid, ar_set_combined, ar_set_fold, ar_statistic, wald_ci, ARFoldInput, ARSet, ArShape,
    CombinedArSets, Interval,
};
