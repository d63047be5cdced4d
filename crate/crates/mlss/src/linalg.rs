//! Dense linear-algebra helpers: pivoted solves, least squares with a ridge
//! fallback, condition numbers, and a symmetric pseudoinverse.

use nalgebra::{DMatrix, DVector};

/// Relative diagonal tolerance below which a triangular factor is treated as
/// rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Ridge scale used by all rank-deficiency fallbacks: lambda = RIDGE_SCALE *
/// trace(X'X) / k.
const RIDGE_SCALE: f64 = 1e-8;

/// Least-squares solution of `design * beta = rhs` (multi-column rhs).
pub struct Lstsq {
    /// k x r coefficient matrix.
    pub coefficients: DMatrix<f64>,
    /// True when the design was rank deficient and a ridge penalty was used.
    pub ridge_fallback: bool,
}

/// Solve a least-squares problem by thin QR. A rank-deficient design falls
/// back to ridge-regularized normal equations with
/// lambda = 1e-8 * trace(X'X) / k and is flagged, never an error.
pub fn lstsq(design: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Lstsq {
    let k = design.ncols();
    assert_eq!(design.nrows(), rhs.nrows(), "lstsq: row mismatch");
    if k == 0 {
        return Lstsq { coefficients: DMatrix::zeros(0, rhs.ncols()), ridge_fallback: false };
    }
    if design.nrows() >= k {
        let qr = design.clone().qr();
        let r = qr.r();
        let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
        let full_rank = max_diag > 0.0 && (0..k).all(|i| r[(i, i)].abs() > RANK_TOL * max_diag);
        if full_rank {
            let qtb = qr.q().transpose() * rhs;
            if let Some(sol) = r.solve_upper_triangular(&qtb) {
                return Lstsq { coefficients: sol, ridge_fallback: false };
            }
        }
    }
    Lstsq { coefficients: ridge_solve(design, rhs), ridge_fallback: true }
}

/// Normal equations with a small ridge penalty; always solvable.
fn ridge_solve(design: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let k = design.ncols();
    let gram = design.transpose() * design;
    let trace: f64 = (0..k).map(|i| gram[(i, i)]).sum();
    let lambda = if trace > 0.0 { RIDGE_SCALE * trace / k as f64 } else { RIDGE_SCALE };
    let mut reg = gram;
    for i in 0..k {
        reg[(i, i)] += lambda;
    }
    let xtb = design.transpose() * rhs;
    match reg.clone().cholesky() {
        Some(chol) => chol.solve(&xtb),
        // Cholesky can only fail here through severe cancellation; the
        // pivoted QR path still produces a usable solution.
        None => reg
            .col_piv_qr()
            .solve(&xtb)
            .unwrap_or_else(|| DMatrix::zeros(k, rhs.ncols())),
    }
}

/// Solve the square system `a * x = b` by column-pivoted QR.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().col_piv_qr().solve(b)
}

/// Solve `a * X = B` for a square `a` and matrix rhs.
pub fn solve_square_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().col_piv_qr().solve(b)
}

/// 2-norm condition number via SVD. Returns +inf for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let sv = &svd.singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Moore-Penrose pseudoinverse of a symmetric matrix.
pub struct SymPinv {
    pub pinv: DMatrix<f64>,
    /// Number of eigenvalues kept (numerical rank).
    pub rank: usize,
}

/// Pseudoinvert a symmetric matrix, dropping eigenvalues with magnitude at or
/// below `cutoff`.
pub fn sym_pinv(m: &DMatrix<f64>, cutoff: f64) -> SymPinv {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut pinv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            rank += 1;
            let v = eig.eigenvectors.column(i);
            pinv += (v * v.transpose()) / lambda;
        }
    }
    SymPinv { pinv, rank }
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l.abs()))
}

/// Residualize every column of `m` against the column space of `basis`.
/// Returns the residuals and whether the projection needed a ridge fallback.
pub fn residualize(m: &DMatrix<f64>, basis: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let fit = lstsq(basis, m);
    let resid = m - basis * &fit.coefficients;
    (resid, fit.ridge_fallback)
}
