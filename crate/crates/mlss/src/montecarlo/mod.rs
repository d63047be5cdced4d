//! Monte Carlo machinery: simulation designs, the estimator-menu runner,
//! winsorized summaries, coverage counting, the extra-sample-error
//! diagnostic, and marginal-treatment-effect weights.

mod dgp;
mod experiment;

pub use dgp::{dgp_cov, dgp_nocov, DgpKind, SimDataset, A_MATRIX, BETA_X};
pub use experiment::{
    parse_estimator, run_experiment, valid_estimator_names, CellSummary, ExperimentConfig,
    ExperimentReport, MenuLearner, MenuMethod, RepRecord,
};

use crate::error::{Error, Result};
use crate::weakiv::{ARSet, Interval};

/// Linear-interpolation (type 7) empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Median; `None` on empty input.
pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, 0.5))
}

/// Sample standard deviation after clipping to the empirical [q, 1-q]
/// quantiles (linear-interpolation quantiles, denominator n-1). Used because
/// the finite-sample variance of linear IV estimators may not exist.
pub fn winsorized_sd(values: &[f64], q: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidData("winsorized_sd needs at least 2 values".into()));
    }
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::InvalidConfig(format!("winsor q must lie in (0, 0.5), got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, q);
    let hi = quantile_sorted(&sorted, 1.0 - q);
    let clipped: Vec<f64> = values.iter().map(|v| v.clamp(lo, hi)).collect();
    let n = clipped.len() as f64;
    let mean = clipped.iter().sum::<f64>() / n;
    let ss: f64 = clipped.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

/// Anything that can be asked whether it covers a scalar truth.
pub trait ContainsTruth {
    fn contains_truth(&self, truth: f64) -> bool;
}

impl ContainsTruth for (f64, f64) {
    fn contains_truth(&self, truth: f64) -> bool {
        self.0 <= truth && truth <= self.1
    }
}

impl ContainsTruth for Interval {
    fn contains_truth(&self, truth: f64) -> bool {
        self.contains(truth)
    }
}

impl ContainsTruth for ARSet {
    fn contains_truth(&self, truth: f64) -> bool {
        self.contains(truth)
    }
}

/// Fraction of sets containing the truth. Empty sets never contain.
/// Panics on an empty list.
pub fn coverage<S: ContainsTruth>(sets: &[S], truth: f64) -> f64 {
    assert!(!sets.is_empty(), "coverage needs at least one set");
    sets.iter().filter(|s| s.contains_truth(truth)).count() as f64 / sets.len() as f64
}

/// Extra-sample error of a fixed instrument function on a fresh draw:
/// n * (cov_n(upsilon(W), Y) / cov_n(upsilon(W), D) - tau)^2.
/// Returns +inf when the denominator covariance is zero.
pub fn extra_sample_error(
    upsilon: &dyn Fn(&[f64]) -> f64,
    fresh: &SimDataset,
    tau: f64,
) -> f64 {
    let ds = &fresh.dataset;
    let n = ds.n();
    let mut row = vec![0.0f64; ds.p_w()];
    let ups: Vec<f64> = (0..n)
        .map(|i| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ds.w()[(i, j)];
            }
            upsilon(&row)
        })
        .collect();
    let nf = n as f64;
    let mean_u = ups.iter().sum::<f64>() / nf;
    let mean_y = ds.y().sum() / nf;
    let mean_d = ds.d().column(0).sum() / nf;
    let mut cov_uy = 0.0;
    let mut cov_ud = 0.0;
    for (i, u) in ups.iter().enumerate() {
        cov_uy += (u - mean_u) * (ds.y()[i] - mean_y);
        cov_ud += (u - mean_u) * (ds.d()[(i, 0)] - mean_d);
    }
    if cov_ud == 0.0 {
        return f64::INFINITY;
    }
    nf * (cov_uy / cov_ud - tau).powi(2)
}

/// Plug-in marginal-treatment-effect weights on a grid of selection values:
///
/// ```text
/// b-tilde_i = b_i - sum(a b) / sum(a),
/// omega(v) = mean(a b-tilde 1{mu > v}) / mean(a b-tilde mu).
/// ```
///
/// The weights integrate to 1 over [0, 1] and are nonnegative whenever b is
/// a monotone transformation of mu.
pub fn mte_weights(a: &[f64], b: &[f64], mu: &[f64], v_grid: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    if b.len() != n || mu.len() != n {
        return Err(Error::DimensionMismatch("a, b, mu must share a length".into()));
    }
    if n == 0 {
        return Err(Error::InvalidData("mte_weights needs observations".into()));
    }
    if a.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidData("a(W) must be nonnegative".into()));
    }
    let sum_a: f64 = a.iter().sum();
    if sum_a <= 0.0 {
        return Err(Error::InvalidData("mean of a(W) must be positive".into()));
    }
    if mu.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidData("mu values must lie in [0, 1]".into()));
    }
    if v_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("v grid must be sorted".into()));
    }
    let ab: f64 = a.iter().zip(b).map(|(ai, bi)| ai * bi).sum();
    let center = ab / sum_a;
    let btilde: Vec<f64> = b.iter().map(|bi| bi - center).collect();
    let nf = n as f64;
    let denom: f64 =
        a.iter().zip(&btilde).zip(mu).map(|((ai, bt), m)| ai * bt * m).sum::<f64>() / nf;
    if denom == 0.0 {
        return Err(Error::Degenerate("MTE weight denominator is zero".into()));
    }
    Ok(v_grid
        .iter()
        .map(|v| {
            let num: f64 = a
                .iter()
                .zip(&btilde)
                .zip(mu)
                .map(|((ai, bt), m)| if *m > *v { ai * bt } else { 0.0 })
                .sum::<f64>()
                / nf;
            num / denom
        })
        .collect())
}
