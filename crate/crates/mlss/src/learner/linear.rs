//! OLS and polynomial-expansion regression with a ridge fallback on
//! rank-deficient designs.

use crate::linalg;
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct LinearModel {
    /// (1 + k_expanded) x r coefficients; row 0 is the intercept.
    pub coefficients: DMatrix<f64>,
    pub degree: usize,
    pub interactions: bool,
    pub ridge_fallback: bool,
}

/// Monomial expansion of total degree 1..=degree, without intercept.
///
/// Without interactions the columns are per-feature powers grouped by power
/// (levels first, then squares, then cubes). With interactions all monomials
/// appear, ordered by total degree and then lexicographically by index tuple.
pub fn expand_features(features: &DMatrix<f64>, degree: usize, interactions: bool) -> DMatrix<f64> {
    let n = features.nrows();
    let q = features.ncols();
    if interactions {
        let tuples = monomials(q, degree);
        let mut out = DMatrix::zeros(n, tuples.len());
        for (c, tuple) in tuples.iter().enumerate() {
            for i in 0..n {
                out[(i, c)] = tuple.iter().map(|&j| features[(i, j)]).product();
            }
        }
        out
    } else {
        let mut out = DMatrix::zeros(n, q * degree);
        for p in 1..=degree {
            for j in 0..q {
                for i in 0..n {
                    out[(i, (p - 1) * q + j)] = features[(i, j)].powi(p as i32);
                }
            }
        }
        out
    }
}

/// All non-decreasing index tuples of length 1..=degree over q features.
fn monomials(q: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for total in 1..=degree {
        gen_tuples(q, total, 0, &mut current, &mut out);
    }
    out
}

fn gen_tuples(q: usize, left: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if left == 0 {
        out.push(current.clone());
        return;
    }
    for j in start..q {
        current.push(j);
        gen_tuples(q, left - 1, j, current, out);
        current.pop();
    }
}

/// Number of expanded columns for q features.
pub fn expanded_width(q: usize, degree: usize, interactions: bool) -> usize {
    if interactions {
        monomials(q, degree).len()
    } else {
        q * degree
    }
}

pub fn fit_linear(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    degree: usize,
    interactions: bool,
) -> LinearModel {
    let expanded = expand_features(features, degree, interactions);
    let design = with_intercept(&expanded);
    let fit = linalg::lstsq(&design, targets);
    LinearModel {
        coefficients: fit.coefficients,
        degree,
        interactions,
        ridge_fallback: fit.ridge_fallback,
    }
}

pub fn predict_linear(model: &LinearModel, features: &DMatrix<f64>) -> DMatrix<f64> {
    let expanded = expand_features(features, model.degree, model.interactions);
    with_intercept(&expanded) * &model.coefficients
}

fn with_intercept(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, m.ncols() + 1);
    out.column_mut(0).fill(1.0);
    out.view_mut((0, 1), (n, m.ncols())).copy_from(m);
    out
}
