//! A compact Monte Carlo experiment over the estimator menu, printing the
//! per-cell summary the simulate command would write as JSON.
//!
//! Run with:
//! ```bash
//! cargo run --release --example monte_carlo_menu
//! ```

use mlss::*;

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn main() -> Result<()> {
    let config = ExperimentConfig {
        dgp: DgpKind::Nocov,
        n_values: vec![1000, 4000],
        reps: 60,
        estimators: vec![
            "oracle".into(),
            "lgb".into(),
            "discretized".into(),
            "lin".into(),
            "tsls_linear".into(),
        ],
        k_folds: 2,
        weighting: WeightingScheme::Identity,
        covariate_mode: CovariateMode::PartialLinear,
        alpha: 0.05,
        seed: 99,
        winsor_q: 0.01,
    };
    let (report, records) = run_experiment(&config)?;

    println!(
        "{:<14} {:>6} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}",
        "estimator", "n", "med tau", "win SD", "med SE", "Wald", "AR", "fin.%", "med F"
    );
    for cell in &report.cells {
        println!(
            "{:<14} {:>6} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}",
            cell.estimator,
            cell.n,
            fmt(cell.median_estimate),
            fmt(cell.winsorized_sd),
            fmt(cell.median_se),
            fmt(cell.wald_coverage),
            fmt(cell.ar_coverage),
            fmt(cell.pct_ar_finite),
            fmt(cell.median_first_stage_f),
        );
    }
    println!(
        "\n{} per-replication rows collected (true tau = 1, nominal coverage 0.95)",
        records.len()
    );
    Ok(())
}
