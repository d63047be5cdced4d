//! End-to-end estimation from a CSV file: write a synthetic dataset, load it
//! back, build the cross-fitted instrument, and print the coefficient table.
//!
//! Run with:
//! ```bash
//! cargo run --example estimate_csv
//! ```

use mlss::rng::{seed_rng, standard_normal};
use mlss::*;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<()> {
    // A small IV dataset: one endogenous dose, one excluded instrument, one
    // exogenous covariate. The structural effect of the dose is 1.5.
    let n = 500;
    let mut rng = seed_rng(42);
    let w = DMatrix::from_fn(n, 1, |_, _| standard_normal(&mut rng));
    let x = DMatrix::from_fn(n, 1, |_, _| standard_normal(&mut rng));
    let mut d = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let u = standard_normal(&mut rng);
        // Nonlinear first stage: the instrument acts through a threshold.
        d[(i, 0)] = 2.0 * f64::from(w[(i, 0)] > 0.5) + 0.3 * x[(i, 0)] + 0.8 * u
            + 0.5 * standard_normal(&mut rng);
        y[i] = 1.0 + 1.5 * d[(i, 0)] + 0.4 * x[(i, 0)] + u;
    }
    let ds = Dataset::with_names(
        y,
        d,
        x,
        w,
        vec!["d_dose".into()],
        vec!["x_age".into()],
        vec!["w_assignment".into()],
    )?;

    let dir = std::env::temp_dir().join("mlss_estimate_csv_example");
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join("demo.csv");
    data::write_csv(&ds, &path)?;
    println!("wrote {}", path.display());

    let loaded = load_csv(&path, true)?;
    let folds = make_folds(loaded.n(), 2, 7)?;
    let spec = LearnerSpec::gradient_boosting().with_seed(1);
    let inst = generate_instrument(
        &loaded,
        &SplitPlan::Folds(folds),
        &spec,
        WeightingScheme::Identity,
        CovariateMode::PartialLinear,
    )?;
    let pair = design_matrices(&loaded);
    let mut est = mlss_estimate(&inst, &pair, loaded.y())?;
    est.names = loaded.coefficient_names();

    println!("\n{:<14} {:>10} {:>10} {:>22}", "coefficient", "estimate", "std err", "95% Wald CI");
    for i in 0..est.theta_hat.len() {
        let (lo, hi) = wald_ci(&est, i, 0.05)?;
        println!(
            "{:<14} {:>10.4} {:>10.4} {:>22}",
            est.names[i],
            est.theta_hat[i],
            est.std_errors()[i],
            format!("[{lo:.4}, {hi:.4}]")
        );
    }
    println!("\nfirst-stage F: {:.1}", est.diagnostics.first_stage_f[0].value);
    println!("hold-out R2:   {:.4}", est.diagnostics.oos_r2[0]);
    Ok(())
}
