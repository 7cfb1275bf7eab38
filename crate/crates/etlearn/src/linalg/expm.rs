//! Dense matrix exponential by scaling and squaring.
//!
//! The argument is scaled by a power of two until its norm is at most 1/2,
//! a truncated Taylor series evaluates the scaled exponential, and repeated
//! squaring undoes the scaling. At norm 1/2 the series remainder after 24
//! terms is below 1e-26, far inside f64 roundoff.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const SERIES_TERMS: usize = 24;

/// Matrix exponential `exp(M)` of a square matrix.
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential input".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    // Infinity norm (max absolute row sum) drives the scaling.
    let norm = (0..n)
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);

    // Horner-free Taylor accumulation: term_k = scaled^k / k!.
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=SERIES_TERMS {
        term = (&term * &scaled) / k as f64;
        result += &term;
    }

    for _ in 0..squarings {
        result = &result * &result;
    }

    if !result.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential overflowed".into()));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Plain 60-term Taylor sum, no scaling: the independent oracle.
    fn taylor_oracle(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut result = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..=60 {
            term = (&term * m) / k as f64;
            result += &term;
        }
        result
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let e = matrix_exponential(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(e, DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn diagonal_case() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let e = matrix_exponential(&m).unwrap();
        assert_abs_diff_eq!(e[(0, 0)], 1f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[(1, 1)], 2f64.exp(), epsilon = 1e-12);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn matches_taylor_oracle_on_random_matrices() {
        let mut rng = StdRng::seed_from_u64(123);
        for _ in 0..100 {
            let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.5..0.5));
            let e = matrix_exponential(&m).unwrap();
            let oracle = taylor_oracle(&m);
            let rel = (&e - &oracle).norm() / oracle.norm();
            assert!(rel < 1e-9, "relative error {rel}");
        }
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        assert!(matrix_exponential(&DMatrix::zeros(2, 3)).is_err());
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = f64::NAN;
        assert!(matrix_exponential(&m).is_err());
    }
}
