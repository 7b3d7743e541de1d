//! Numeric helpers shared across modules: cascade summation, the standard
//! normal density/CDF and guarded inversion of small symmetric matrices.

use nalgebra::{DMatrix, SymmetricEigen};

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (cascade) summation of `term(0) + ... + term(n - 1)`.
///
/// Rounding error grows as O(log n) instead of O(n) for naive accumulation.
/// The summation tree depends only on `n`, so results are reproducible.
pub fn pairwise_sum_by<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64,
{
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
        let len = hi - lo;
        if len <= PAIRWISE_BLOCK {
            let mut acc = 0.0;
            for k in lo..hi {
                acc += term(k);
            }
            acc
        } else {
            let mid = lo + len / 2;
            rec(lo, mid, term) + rec(mid, hi, term)
        }
    }
    rec(0, n, &term)
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values.len(), |k| values[k])
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Standard normal CDF via the complementary error function, accurate in
/// both tails.
#[inline]
pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / std::f64::consts::SQRT_2)
}

/// Result of inverting a symmetric matrix through its eigendecomposition.
#[derive(Debug, Clone)]
pub struct SymmetricInverse {
    pub inverse: DMatrix<f64>,
    pub condition_number: f64,
    pub eigenvalues: Vec<f64>,
}

/// Inverts a symmetric matrix, refusing when the spectral condition number
/// exceeds `max_condition` (or an eigenvalue is exactly zero).
///
/// Returns the eigenvalues and condition number in the error case so callers
/// can report a diagnostic.
pub fn invert_symmetric(
    m: &DMatrix<f64>,
    max_condition: f64,
) -> Result<SymmetricInverse, (f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let max_abs = eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min_abs = eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let condition_number = if min_abs > 0.0 {
        max_abs / min_abs
    } else {
        f64::INFINITY
    };
    if !condition_number.is_finite() || condition_number > max_condition {
        return Err((condition_number, eigenvalues));
    }
    let q = &eig.eigenvectors;
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let mut inverse = q * inv_diag * q.transpose();
    symmetrize(&mut inverse);
    Ok(SymmetricInverse {
        inverse,
        condition_number,
        eigenvalues,
    })
}

/// Replaces `m` with `(m + m') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}
