//! Simulation designs: a no-covariate design with an XOR-like nonlinear
//! propensity, and a covariate extension that contaminates the treatment
//! when the first covariate is positive. Both have true tau = 1 and
//! E[U | W] = 0 by construction.

use crate::data::Dataset;
use crate::learner::{OracleFn, OracleSet};
use crate::rng::{seed_rng, standard_normal, uniform};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::Arc;

/// Covariate loading matrix for the covariate design: X = A W + V.
pub const A_MATRIX: [[f64; 3]; 2] = [[1.0, 0.4, 0.3], [0.5, 2.0, 0.2]];

/// Structural covariate coefficients in the covariate design.
pub const BETA_X: [f64; 2] = [0.1, 0.3];

/// A generated dataset together with its oracle truths.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub dataset: Dataset,
    /// P(D = 1 | W) per row (pre-contamination in the covariate design).
    pub propensity: Vec<f64>,
    /// The raw error U per row.
    pub structural_error: Vec<f64>,
    /// The scale v(W) per row.
    pub error_scale: Vec<f64>,
    pub tau_true: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Nocov,
    Cov,
}

impl DgpKind {
    pub fn generate(self, n: usize, seed: u64) -> SimDataset {
        match self {
            DgpKind::Nocov => dgp_nocov(n, seed),
            DgpKind::Cov => dgp_cov(n, seed),
        }
    }

    /// Closed-form nuisance truths for oracle-instrument runs.
    pub fn oracle(self) -> OracleSet {
        match self {
            DgpKind::Nocov => {
                let mean_d: OracleFn = Arc::new(|w: &[f64]| vec![propensity(w[0], w[1], w[2])]);
                let var_u: OracleFn = Arc::new(|w: &[f64]| {
                    let p = propensity(w[0], w[1], w[2]);
                    let v = error_scale(w[0], w[1], w[2]);
                    vec![v * v * (0.25 * p * (1.0 - p) + 0.75)]
                });
                OracleSet { mean_d, mean_x: None, var_u: Some(var_u), x_var_u: None }
            }
            DgpKind::Cov => {
                let mean_d: OracleFn = Arc::new(|w: &[f64]| vec![contaminated_mean(w)]);
                let mean_x: OracleFn = Arc::new(|w: &[f64]| {
                    vec![
                        A_MATRIX[0][0] * w[0] + A_MATRIX[0][1] * w[1] + A_MATRIX[0][2] * w[2],
                        A_MATRIX[1][0] * w[0] + A_MATRIX[1][1] * w[1] + A_MATRIX[1][2] * w[2],
                    ]
                });
                let var_u: OracleFn = Arc::new(|w: &[f64]| {
                    let p = propensity(w[0], w[1], w[2]);
                    vec![0.25 * p * (1.0 - p) + 0.75]
                });
                let x_var_u: OracleFn = Arc::new(|w: &[f64]| {
                    let p = propensity(w[0], w[1], w[2]);
                    let eu2 = 0.25 * p * (1.0 - p) + 0.75;
                    vec![
                        (A_MATRIX[0][0] * w[0] + A_MATRIX[0][1] * w[1] + A_MATRIX[0][2] * w[2]) * eu2,
                        (A_MATRIX[1][0] * w[0] + A_MATRIX[1][1] * w[1] + A_MATRIX[1][2] * w[2]) * eu2,
                    ]
                });
                OracleSet {
                    mean_d,
                    mean_x: Some(mean_x),
                    var_u: Some(var_u),
                    x_var_u: Some(x_var_u),
                }
            }
        }
    }
}

pub(crate) fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The XOR-like index: 0.1 outside the unit disk, sgn(w0 w1) (w0^2 + w1^2)
/// inside.
pub(crate) fn mu_xor(w0: f64, w1: f64) -> f64 {
    let s = w0 * w0 + w1 * w1;
    if s > 1.0 {
        0.1
    } else {
        sgn(w0 * w1) * s
    }
}

/// P(D = 1 | W) = logistic(3 mu(W0, W1)) sin(2 W2)^2.
pub(crate) fn propensity(w0: f64, w1: f64, w2: f64) -> f64 {
    logistic(3.0 * mu_xor(w0, w1)) * (2.0 * w2).sin().powi(2)
}

fn error_scale(w0: f64, w1: f64, w2: f64) -> f64 {
    0.1 + logistic((w0 + w1) * w2)
}

/// E[D-tilde | W] in the covariate design: flipping happens with probability
/// 0.3 conditional on X0 > 0, and X0 | W is normal around the first row of
/// A W.
fn contaminated_mean(w: &[f64]) -> f64 {
    let p = propensity(w[0], w[1], w[2]);
    let loc = A_MATRIX[0][0] * w[0] + A_MATRIX[0][1] * w[1] + A_MATRIX[0][2] * w[2];
    let phi = Normal::new(0.0, 1.0).expect("standard normal").cdf(loc);
    let f = 0.3 * phi;
    p + f * (1.0 - 2.0 * p)
}

struct RawDraw {
    w: [f64; 3],
    p: f64,
    d: f64,
    u: f64,
    v_scale: f64,
}

fn draw_nocov(rng: &mut rand_pcg::Pcg64) -> RawDraw {
    let w = [standard_normal(rng), standard_normal(rng), standard_normal(rng)];
    let p = propensity(w[0], w[1], w[2]);
    let d = f64::from(uniform(rng) < p);
    let z1 = standard_normal(rng);
    let z2 = standard_normal(rng);
    let u = 0.5 * (d - p) * z1.abs() + (1.0 - 0.25f64).sqrt() * z2;
    let v_scale = error_scale(w[0], w[1], w[2]);
    RawDraw { w, p, d, u, v_scale }
}

/// The no-covariate design: Y = D + v(W) U.
pub fn dgp_nocov(n: usize, seed: u64) -> SimDataset {
    let mut rng = seed_rng(seed);
    let mut w = DMatrix::zeros(n, 3);
    let mut d = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    let mut propensities = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        let draw = draw_nocov(&mut rng);
        for j in 0..3 {
            w[(i, j)] = draw.w[j];
        }
        d[(i, 0)] = draw.d;
        y[i] = draw.d + draw.v_scale * draw.u;
        propensities.push(draw.p);
        errors.push(draw.u);
        scales.push(draw.v_scale);
    }
    let dataset = Dataset::new(y, d, DMatrix::zeros(n, 0), w).expect("valid simulated data");
    SimDataset {
        dataset,
        propensity: propensities,
        structural_error: errors,
        error_scale: scales,
        tau_true: 1.0,
    }
}

/// The covariate design: X = A W + V; D is flipped with probability 0.3 when
/// X0 > 0; Y-tilde = D-tilde + X' (0.1, 0.3)' + U.
pub fn dgp_cov(n: usize, seed: u64) -> SimDataset {
    let mut rng = seed_rng(seed);
    let mut w = DMatrix::zeros(n, 3);
    let mut x = DMatrix::zeros(n, 2);
    let mut d = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    let mut propensities = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        let draw = draw_nocov(&mut rng);
        let v = [standard_normal(&mut rng), standard_normal(&mut rng)];
        let flip = uniform(&mut rng);
        for j in 0..3 {
            w[(i, j)] = draw.w[j];
        }
        for (r, row) in A_MATRIX.iter().enumerate() {
            x[(i, r)] = row[0] * draw.w[0] + row[1] * draw.w[1] + row[2] * draw.w[2] + v[r];
        }
        let mut d_t = draw.d;
        if x[(i, 0)] > 0.0 && flip < 0.3 {
            d_t = 1.0 - d_t;
        }
        d[(i, 0)] = d_t;
        y[i] = d_t + BETA_X[0] * x[(i, 0)] + BETA_X[1] * x[(i, 1)] + draw.u;
        propensities.push(draw.p);
        errors.push(draw.u);
        scales.push(draw.v_scale);
    }
    let dataset = Dataset::new(y, d, x, w).expect("valid simulated data");
    SimDataset {
        dataset,
        propensity: propensities,
        structural_error: errors,
        error_scale: scales,
        tau_true: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_cases() {
        assert_eq!(mu_xor(0.5, 0.5), 0.5);
        assert_eq!(mu_xor(1.0, 1.0), 0.1);
        assert_eq!(mu_xor(-0.5, 0.5), -0.5);
        assert_eq!(mu_xor(0.0, 0.5), 0.0);
    }

    #[test]
    fn covariate_design_constants() {
        assert_eq!(A_MATRIX, [[1.0, 0.4, 0.3], [0.5, 2.0, 0.2]]);
        assert_eq!(BETA_X, [0.1, 0.3]);
    }

    #[test]
    fn propensity_at_known_points() {
        // mu = 0 on the axis, W2 = pi/4: logistic(0) * sin(pi/2)^2 = 0.5.
        let p = propensity(0.0, 0.5, std::f64::consts::FRAC_PI_4);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dgp_is_deterministic() {
        let a = dgp_nocov(50, 99);
        let b = dgp_nocov(50, 99);
        assert_eq!(a.dataset.y().as_slice(), b.dataset.y().as_slice());
        assert_eq!(a.dataset.w().as_slice(), b.dataset.w().as_slice());
        let c = dgp_cov(50, 99);
        let d = dgp_cov(50, 99);
        assert_eq!(c.dataset.y().as_slice(), d.dataset.y().as_slice());
        assert_eq!(c.dataset.x().as_slice(), d.dataset.x().as_slice());
    }

    #[test]
    fn cov_design_dimensions_and_flip_condition() {
        let sim = dgp_cov(400, 7);
        assert_eq!(sim.dataset.p_x(), 2);
        assert_eq!(sim.dataset.p_w(), 3);
        assert!(sim.dataset.d().iter().all(|v| *v == 0.0 || *v == 1.0));
        // Where X0 <= 0 the treatment is never flipped, so Y - D - X'beta = U.
        for i in 0..400 {
            if sim.dataset.x()[(i, 0)] <= 0.0 {
                let resid = sim.dataset.y()[i]
                    - sim.dataset.d()[(i, 0)]
                    - BETA_X[0] * sim.dataset.x()[(i, 0)]
                    - BETA_X[1] * sim.dataset.x()[(i, 1)];
                assert!((resid - sim.structural_error[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn instrument_exogeneity_moments_vanish() {
        // Sample means of U * g(W) over 10^6 draws stay within 4 MC standard
        // errors of zero for several test functions g.
        for kind in [DgpKind::Nocov, DgpKind::Cov] {
            let sim = kind.generate(1_000_000, 1234);
            let w = sim.dataset.w();
            let gs: [&dyn Fn(usize) -> f64; 4] = [
                &|_| 1.0,
                &|i| w[(i, 0)],
                &|i| w[(i, 0)] * w[(i, 1)],
                &|i| w[(i, 2)] * w[(i, 2)],
            ];
            for (gi, g) in gs.iter().enumerate() {
                let vals: Vec<f64> =
                    (0..sim.dataset.n()).map(|i| sim.structural_error[i] * g(i)).collect();
                let n = vals.len() as f64;
                let mean: f64 = vals.iter().sum::<f64>() / n;
                let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                let se = (var / n).sqrt();
                assert!(
                    mean.abs() <= 4.0 * se,
                    "{kind:?} moment {gi}: mean {mean}, se {se}"
                );
            }
        }
    }

    #[test]
    fn oracle_mean_matches_empirical_treatment_rate() {
        // Binned check of E[D-tilde | W] against the closed form.
        let sim = dgp_cov(200_000, 55);
        let oracle = DgpKind::Cov.oracle();
        let mut pred_sum = 0.0;
        let mut d_sum = 0.0;
        for i in 0..sim.dataset.n() {
            let w: Vec<f64> =
                (0..3).map(|j| sim.dataset.w()[(i, j)]).collect();
            pred_sum += (oracle.mean_d)(&w)[0];
            d_sum += sim.dataset.d()[(i, 0)];
        }
        let n = sim.dataset.n() as f64;
        assert!((pred_sum / n - d_sum / n).abs() < 0.005);
    }
}
