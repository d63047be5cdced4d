//! Marginal-treatment-effect weights implied by an instrument choice under
//! a selection model: nonnegative for monotone transforms of the propensity,
//! integrating to one.
//!
//! Run with:
//! ```bash
//! cargo run --example mte_weights
//! ```

use mlss::rng::{seed_rng, uniform};
use mlss::*;

fn main() -> Result<()> {
    // Two-point propensity: the weight is constant 5/3 between the two
    // support points and zero outside.
    let a = [1.0, 1.0];
    let mu = [0.2, 0.8];
    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let w = mte_weights(&a, &mu, &mu, &grid)?;
    println!("two-point propensity {{0.2, 0.8}}, identity weighting (a = 1, b = mu):");
    for (v, wv) in grid.iter().zip(&w) {
        println!("  omega({v:.1}) = {wv:.6}");
    }

    // Continuous propensity with inverse-variance weighting a(W).
    let mut rng = seed_rng(3);
    let n = 20_000;
    let mu_c: Vec<f64> = (0..n).map(|_| uniform(&mut rng)).collect();
    let a_var: Vec<f64> = mu_c.iter().map(|m| 1.0 / (0.5 + m)).collect();
    let fine: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();

    for (label, a_fn) in [("identity (a = 1)", None), ("precision-weighted", Some(&a_var))] {
        let ones = vec![1.0; n];
        let a_used: &[f64] = a_fn.map(|v| v.as_slice()).unwrap_or(&ones);
        let w = mte_weights(a_used, &mu_c, &mu_c, &fine)?;
        let mut integral = 0.0;
        for k in 1..fine.len() {
            integral += 0.5 * (w[k] + w[k - 1]) * (fine[k] - fine[k - 1]);
        }
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "\n{label}: integral = {integral:.4}, min weight = {min:.4} (b = mu, so weights stay nonnegative)"
        );
    }
    Ok(())
}
