//! Command-line entry points: `estimate`, `ar`, and `simulate`.
//!
//! Exit codes: 0 success, 1 input/config error, 2 statistical degeneracy
//! (weak identification) with a partial report still written. The
//! `MLSS_THREADS` environment variable caps the worker count; output is
//! byte-identical for any cap because all seeds are derived up front.

use crate::data::{design_matrices, load_csv, make_folds, Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::estimator::{first_stage_f, mlss_estimate};
use crate::instruments::{generate_instrument, CovariateMode, WeightingScheme};
use crate::montecarlo::{run_experiment, ExperimentConfig};
use crate::report::{
    self, ArReport, DiagnosticsReport, ErrorReport, EstimateReport, ResolvedConfig,
};
use crate::rng::derive_seed;
use crate::weakiv::{ar_set_combined, fold_point_estimate, wald_ci, ARFoldInput};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "mlss",
    version,
    about = "Machine-learning split-sample instrumental variable estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the structural coefficients from a CSV dataset.
    Estimate(EstimateArgs),
    /// Weak-instrument-robust Anderson-Rubin confidence sets.
    Ar(ArArgs),
    /// Run a Monte Carlo experiment from a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// CSV file with columns y, d_*, w_*, and optional x_*.
    #[arg(long)]
    data: PathBuf,
    /// Number of cross-fitting folds.
    #[arg(long, default_value_t = 2)]
    folds: usize,
    /// Learner: a kind name or inline JSON {"kind":...,"params":{...},"seed":n}.
    #[arg(long, default_value = "gradient_boosting")]
    learner: String,
    /// identity or efficient.
    #[arg(long, default_value = "identity")]
    weighting: String,
    /// partial_linear or conditional_mean_only.
    #[arg(long, default_value = "partial_linear")]
    covariate_mode: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reject unrecognized CSV columns instead of ignoring them.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Train on the full sample with no splitting (TSLS-equivalence mode).
    #[arg(long)]
    full_sample: bool,
    /// json or csv.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Debug, Args)]
struct ArArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Grid lo:hi:step for multi-treatment AR evaluation.
    #[arg(long, allow_hyphen_values = true)]
    tau_grid: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json and replications.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Parse argv and run. Returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are input errors: exit 1 (clap would use 2,
            // which is reserved for statistical degeneracy here). Help and
            // version output keep exit 0.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_command(cli: Cli) -> Result<i32> {
    configure_threads();
    match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Ar(args) => cmd_ar(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

/// Cap the rayon worker count from MLSS_THREADS. Results do not depend on
/// the cap; it only bounds parallelism.
fn configure_threads() {
    if let Ok(value) = std::env::var("MLSS_THREADS") {
        if let Ok(threads) = value.trim().parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
            }
        }
    }
}

fn parse_weighting(s: &str) -> Result<WeightingScheme> {
    match s {
        "identity" => Ok(WeightingScheme::Identity),
        "efficient" => Ok(WeightingScheme::Efficient),
        other => Err(Error::InvalidConfig(format!(
            "unknown weighting `{other}` (identity, efficient)"
        ))),
    }
}

fn parse_covariate_mode(s: &str) -> Result<CovariateMode> {
    match s {
        "partial_linear" => Ok(CovariateMode::PartialLinear),
        "conditional_mean_only" => Ok(CovariateMode::ConditionalMeanOnly),
        other => Err(Error::InvalidConfig(format!(
            "unknown covariate mode `{other}` (partial_linear, conditional_mean_only)"
        ))),
    }
}

struct Prepared {
    ds: Dataset,
    plan: SplitPlan,
    spec: crate::learner::LearnerSpec,
    weighting: WeightingScheme,
    covariate_mode: CovariateMode,
    config: ResolvedConfig,
}

fn prepare(common: &CommonArgs, command: &str, full_sample: bool) -> Result<Prepared> {
    if !(common.alpha > 0.0 && common.alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1], got {}",
            common.alpha
        )));
    }
    let ds = load_csv(&common.data, common.strict)?;
    let weighting = parse_weighting(&common.weighting)?;
    let covariate_mode = parse_covariate_mode(&common.covariate_mode)?;
    let spec = report::learner_from_arg(&common.learner, derive_seed(common.seed, 2))?;
    let plan = if full_sample {
        SplitPlan::FullSample
    } else {
        SplitPlan::Folds(make_folds(ds.n(), common.folds, derive_seed(common.seed, 1))?)
    };
    let config = ResolvedConfig {
        command: command.into(),
        data: Some(common.data.display().to_string()),
        folds: if full_sample { 1 } else { common.folds },
        full_sample,
        learner: report::learner_to_json(&spec),
        weighting,
        covariate_mode,
        alpha: common.alpha,
        seed: common.seed,
    };
    Ok(Prepared { ds, plan, spec, weighting, covariate_mode, config })
}

fn emit(common: &CommonArgs, text: &str) -> Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            if text.ends_with('\n') {
                print!("{text}");
            } else {
                println!("{text}");
            }
            Ok(())
        }
    }
}

fn cmd_estimate(args: EstimateArgs) -> Result<i32> {
    let prep = prepare(&args.common, "estimate", args.full_sample)?;
    let inst = generate_instrument(
        &prep.ds,
        &prep.plan,
        &prep.spec,
        prep.weighting,
        prep.covariate_mode,
    )?;
    let pair = design_matrices(&prep.ds);

    match mlss_estimate(&inst, &pair, prep.ds.y()) {
        Ok(mut est) => {
            est.names = prep.ds.coefficient_names();
            let cis: Vec<(f64, f64)> = (0..est.theta_hat.len())
                .map(|i| wald_ci(&est, i, args.common.alpha))
                .collect::<Result<_>>()?;
            let report_data =
                EstimateReport::from_estimate(prep.config, prep.ds.n(), &est, &cis, &inst);
            let text = if args.format == "csv" {
                report::estimate_to_csv(&report_data)
            } else {
                serde_json::to_string_pretty(&report_data).expect("report serializes")
            };
            emit(&args.common, &text)?;
            Ok(0)
        }
        Err(e @ Error::WeakIdentification { .. }) => {
            // Still write a partial report: first-stage diagnostics remain
            // informative, and AR inference stays valid.
            let f = if prep.weighting == WeightingScheme::Identity {
                first_stage_f(&inst, &pair).unwrap_or_default()
            } else {
                Vec::new()
            };
            let d = pair.t.columns(1, prep.ds.p_d()).into_owned();
            let partial = EstimateReport {
                command: "estimate".into(),
                config: prep.config,
                n: prep.ds.n(),
                coefficients: Vec::new(),
                diagnostics: DiagnosticsReport {
                    first_stage_f: f,
                    oos_r2_pooled: inst.pooled_oos_r2(&d),
                    per_fold: report::fold_reports(&inst),
                    g_condition_number: None,
                    warnings: inst.all_warnings().iter().map(|w| w.to_string()).collect(),
                },
                error: Some(ErrorReport {
                    kind: "weak_identification".into(),
                    message: e.to_string(),
                    guidance: Some(
                        "point estimates are unreliable; run `mlss ar` for \
                         weak-instrument-robust confidence sets"
                            .into(),
                    ),
                }),
            };
            let text = serde_json::to_string_pretty(&partial).expect("report serializes");
            emit(&args.common, &text)?;
            Ok(2)
        }
        Err(e) => Err(e),
    }
}

fn parse_tau_grid(arg: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = arg.trim().split(':').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig("tau grid must be lo:hi:step".into()));
    }
    let lo: f64 = parts[0].parse().map_err(|_| Error::InvalidConfig("bad grid lo".into()))?;
    let hi: f64 = parts[1].parse().map_err(|_| Error::InvalidConfig("bad grid hi".into()))?;
    let step: f64 = parts[2].parse().map_err(|_| Error::InvalidConfig("bad grid step".into()))?;
    if step.is_nan() || step <= 0.0 || hi < lo {
        return Err(Error::InvalidConfig("grid needs hi >= lo and step > 0".into()));
    }
    let count = ((hi - lo) / step).floor() as usize + 1;
    if count > 2_000_000 {
        return Err(Error::InvalidConfig(format!("grid has {count} points; cap is 2000000")));
    }
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

fn cmd_ar(args: ArArgs) -> Result<i32> {
    let prep = prepare(&args.common, "ar", false)?;
    if prep.weighting != WeightingScheme::Identity {
        return Err(Error::InvalidConfig(
            "Anderson-Rubin inference requires --weighting identity".into(),
        ));
    }
    let inst = generate_instrument(
        &prep.ds,
        &prep.plan,
        &prep.spec,
        prep.weighting,
        prep.covariate_mode,
    )?;
    let pair = design_matrices(&prep.ds);
    let k = prep.plan.k();
    let fold_inputs: Vec<ARFoldInput> = (0..k)
        .map(|j| ARFoldInput::from_instrument(&inst, &prep.ds, j))
        .collect::<Result<_>>()?;

    if prep.ds.p_d() > 1 {
        let grid_arg = args.tau_grid.as_deref().ok_or_else(|| {
            Error::InvalidConfig(
                "closed-form AR sets need a scalar treatment; pass --tau-grid lo:hi:step".into(),
            )
        })?;
        let axis = parse_tau_grid(grid_arg)?;
        let p_d = prep.ds.p_d();
        let total = axis.len().pow(p_d as u32);
        if total > 2_000_000 {
            return Err(Error::InvalidConfig(format!(
                "grid has {total} points across {p_d} treatments; cap is 2000000"
            )));
        }
        let mut grid = Vec::with_capacity(total);
        let mut index = vec![0usize; p_d];
        loop {
            grid.push(DVector::from_fn(p_d, |r, _| axis[index[r]]));
            let mut carry = p_d;
            for r in (0..p_d).rev() {
                index[r] += 1;
                if index[r] < axis.len() {
                    carry = r;
                    break;
                }
                index[r] = 0;
            }
            if carry == p_d {
                break;
            }
        }
        let accepted = crate::weakiv::ar_grid(&fold_inputs, &grid, args.common.alpha)?;
        let accepted_points: Vec<Vec<f64>> = grid
            .iter()
            .zip(&accepted)
            .filter(|(_, ok)| **ok)
            .map(|(tau, _)| tau.iter().copied().collect())
            .collect();
        let out = serde_json::json!({
            "command": "ar",
            "config": serde_json::to_value(&prep.config).expect("config serializes"),
            "n": prep.ds.n(),
            "grid_axis": axis,
            "accepted_points": accepted_points,
        });
        emit(&args.common, &serde_json::to_string_pretty(&out).expect("serializes"))?;
        return Ok(0);
    }

    let sets = ar_set_combined(&fold_inputs, args.common.alpha)?;
    let pooled_tau = match mlss_estimate(&inst, &pair, prep.ds.y()) {
        Ok(est) => Some(est.theta_hat[1]),
        Err(Error::WeakIdentification { .. }) => None,
        Err(e) => return Err(e),
    };
    let per_fold_tau: Vec<f64> = fold_inputs
        .iter()
        .map(fold_point_estimate)
        .collect::<Result<_>>()?;
    let report_data =
        ArReport::new(prep.config, prep.ds.n(), k, &sets, pooled_tau, per_fold_tau);
    emit(&args.common, &serde_json::to_string_pretty(&report_data).expect("serializes"))?;
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| Error::Io {
        path: args.config.display().to_string(),
        source,
    })?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("experiment config: {e}")))?;
    config.validate()?;
    let (report_data, records) = run_experiment(&config)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.display().to_string(),
        source,
    })?;
    let write = |name: &str, content: &str| -> Result<()> {
        let path: &Path = &args.out_dir.join(name);
        std::fs::write(path, content).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    };
    let json = serde_json::to_string_pretty(&report_data).expect("report serializes");
    write("report.json", &json)?;
    write("replications.csv", &report::records_to_csv(&records))?;
    println!(
        "wrote {} and {}",
        args.out_dir.join("report.json").display(),
        args.out_dir.join("replications.csv").display()
    );
    Ok(0)
}
