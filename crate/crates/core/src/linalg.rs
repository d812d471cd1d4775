//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_RTOL: f64 = 1e-9;

/// Numerical rank: singular values below `RANK_RTOL * σ_max` count as zero.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Smallest `k ≥ 1` with `B^k = 0` (entrywise below `1e-14 · max(1, ‖B‖)^k`),
/// searching up to `k = n`.
pub fn nilpotency_index(b: &DMatrix<f64>) -> Option<usize> {
    let n = b.nrows();
    if n == 0 {
        return Some(1);
    }
    let scale = b.amax().max(1.0);
    let mut p = b.clone();
    for k in 1..=n {
        if p.amax() <= 1e-14 * scale.powi(k as i32) {
            return Some(k);
        }
        p = &p * b;
    }
    None
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn is_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Builds an `n × n` matrix from row-major data.
pub fn from_rows(n: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_identity_and_zero() {
        assert_eq!(numerical_rank(&DMatrix::identity(4, 4)), 4);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3)), 0);
    }

    #[test]
    fn rank_threshold_is_relative() {
        let m = DMatrix::from_row_slice(2, 2, &[1e6, 0.0, 0.0, 1e-4]);
        assert_eq!(numerical_rank(&m), 1);
        let m = DMatrix::from_row_slice(2, 2, &[1e-6, 0.0, 0.0, 1e-12]);
        assert_eq!(numerical_rank(&m), 2);
    }

    #[test]
    fn nilpotency() {
        let b = from_rows(2, &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(nilpotency_index(&b), Some(2));
        assert_eq!(nilpotency_index(&DMatrix::zeros(3, 3)), Some(1));
        assert_eq!(nilpotency_index(&DMatrix::identity(2, 2)), None);
    }
}
