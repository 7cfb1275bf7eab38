//! Numerical primitives shared by the estimators, the trigger, and the
//! controllers: parameter vectorization and Kronecker regressors, zero-order
//! hold discretization, chi-square quantiles, Mahalanobis distances, and
//! excitation/observability checks.
//!
//! The parameter convention used throughout the crate:
//!
//! ```text
//! x[k+1] = A x[k] + B u[k] + w[k]
//! theta  = [A B]^T                  ((n+m) x n)
//! z      = vec(theta)               (column-major, length n(n+m))
//! d[k]   = [x[k]; u[k]]             (length n+m)
//! C[k]   = I_n (x) d[k]^T           (n x n(n+m), (x) = Kronecker product)
//! ```
//!
//! so that `C[k] * z = theta^T * d[k] = A x[k] + B u[k]` for every
//! conformable pair. Mixing up the stacking order silently corrupts every
//! downstream estimate, which is why the round trip is pinned by tests.

mod chi2;
mod expm;

pub use chi2::{chi2_cdf, chi2_quantile};
pub use expm::matrix_exponential;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalue slack for positive semi-definiteness checks.
pub const PSD_SLACK: f64 = 1e-10;

/// Relative singular-value threshold for numerical rank decisions.
pub const RANK_REL_TOL: f64 = 1e-9;

/// Discrete-time linear model `x[k+1] = A x[k] + B u[k] + w[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B must have {} rows, got {}",
                n,
                b.nrows()
            )));
        }
        if !a.iter().all(|v| v.is_finite()) || !b.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model matrices".into()));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// The stacked parameter matrix `theta = [A B]^T`, shape (n+m) x n.
    pub fn theta(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut theta = DMatrix::zeros(n + m, n);
        theta.view_mut((0, 0), (n, n)).copy_from(&self.a.transpose());
        theta.view_mut((n, 0), (m, n)).copy_from(&self.b.transpose());
        theta
    }

    /// Vectorized parameters `z = vec([A B]^T)`.
    pub fn param_vector(&self) -> ParamVector {
        vectorize(&self.theta()).expect("theta is always conformable")
    }
}

/// Vectorized system parameters `z = vec(theta)` with the originating
/// dimensions carried along.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    z: DVector<f64>,
    n: usize,
    m: usize,
}

impl ParamVector {
    /// Wraps a raw vector of length `n(n+m)`.
    pub fn new(z: DVector<f64>, n: usize, m: usize) -> Result<Self> {
        if z.len() != n * (n + m) {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has length {}, expected n(n+m) = {}",
                z.len(),
                n * (n + m)
            )));
        }
        Ok(Self { z, n, m })
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Degrees of freedom `n(n+m)`, also the chi-square dof of the trigger.
    pub fn dof(&self) -> usize {
        self.z.len()
    }

    /// Recovers the stacked parameter matrix `theta`.
    pub fn theta(&self) -> DMatrix<f64> {
        unvectorize(&self.z, self.n, self.m).expect("dimensions validated at construction")
    }

    /// Recovers the (A, B) pair.
    pub fn model(&self) -> LinearModel {
        let theta_t = self.theta().transpose();
        let a = theta_t.columns(0, self.n).into_owned();
        let b = theta_t.columns(self.n, self.m).into_owned();
        LinearModel::new(a, b).expect("dimensions validated at construction")
    }
}

/// One step of state/input data in stacked and Kronecker form.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    d: DVector<f64>,
    c: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl Regressor {
    /// The stacked data vector `d = [x; u]`.
    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    /// The regression matrix `C = I_n (x) d^T`.
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Predicted next state `C z` for a parameter vector.
    pub fn predict(&self, z: &ParamVector) -> DVector<f64> {
        &self.c * z.as_vector()
    }
}

/// Continuous-time pair (A_c, B_c) prior to discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a_c: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
}

impl ContinuousModel {
    pub fn new(a_c: DMatrix<f64>, b_c: DMatrix<f64>) -> Result<Self> {
        let n = a_c.nrows();
        if a_c.ncols() != n || b_c.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "continuous model: A_c {}x{}, B_c {}x{}",
                a_c.nrows(),
                a_c.ncols(),
                b_c.nrows(),
                b_c.ncols()
            )));
        }
        if !a_c.iter().all(|v| v.is_finite()) || !b_c.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("continuous model matrices".into()));
        }
        Ok(Self { a_c, b_c })
    }
}

/// Stacks the columns of `theta` ((n+m) x n) into `z`, column-major.
pub fn vectorize(theta: &DMatrix<f64>) -> Result<ParamVector> {
    let rows = theta.nrows();
    let n = theta.ncols();
    if rows < n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "theta must be (n+m) x n with n >= 1, m >= 0, got {}x{}",
            rows, n
        )));
    }
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("theta".into()));
    }
    let m = rows - n;
    // nalgebra stores matrices column-major, so the raw slice is vec(theta).
    let z = DVector::from_column_slice(theta.as_slice());
    ParamVector::new(z, n, m)
}

/// Inverse of [`vectorize`]: rebuilds the (n+m) x n matrix from `z`.
pub fn unvectorize(z: &DVector<f64>, n: usize, m: usize) -> Result<DMatrix<f64>> {
    if z.len() != n * (n + m) {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} cannot be reshaped to {}x{}",
            z.len(),
            n + m,
            n
        )));
    }
    Ok(DMatrix::from_column_slice(n + m, n, z.as_slice()))
}

/// Builds the regressor `d = [x; u]`, `C = I_n (x) d^T` for one step.
pub fn regressor(x: &DVector<f64>, u: &DVector<f64>) -> Regressor {
    let n = x.len();
    let m = u.len();
    let p = n + m;
    let mut d = DVector::zeros(p);
    d.rows_mut(0, n).copy_from(x);
    d.rows_mut(n, m).copy_from(u);
    let mut c = DMatrix::zeros(n, n * p);
    for i in 0..n {
        for j in 0..p {
            c[(i, i * p + j)] = d[j];
        }
    }
    Regressor { d, c, n, m }
}

/// Zero-order hold discretization via the matrix exponential of the
/// augmented block matrix `[[A_c, B_c], [0, 0]] * Ts`.
pub fn zoh_discretize(cm: &ContinuousModel, ts: f64) -> Result<LinearModel> {
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sampling time must be positive and finite, got {ts}"
        )));
    }
    let n = cm.a_c.nrows();
    let m = cm.b_c.ncols();
    let p = n + m;
    let mut aug = DMatrix::zeros(p, p);
    aug.view_mut((0, 0), (n, n)).copy_from(&cm.a_c);
    aug.view_mut((0, n), (n, m)).copy_from(&cm.b_c);
    aug *= ts;
    let e = matrix_exponential(&aug)?;
    let a = e.view((0, 0), (n, n)).into_owned();
    let b = e.view((0, n), (n, m)).into_owned();
    LinearModel::new(a, b)
}

/// Squared Mahalanobis distance `v^T P^{-1} v`, computed through the
/// Cholesky factor of `P` rather than an explicit inverse.
pub fn mahalanobis_sq(v: &DVector<f64>, p: &DMatrix<f64>) -> Result<f64> {
    if p.nrows() != p.ncols() || p.nrows() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "P is {}x{}, v has length {}",
            p.nrows(),
            p.ncols(),
            v.len()
        )));
    }
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("P is not positive definite".into()))?;
    // P = L L^T, so v^T P^{-1} v = || L^{-1} v ||^2, nonnegative by construction.
    let w = chol
        .l()
        .solve_lower_triangular(v)
        .ok_or_else(|| Error::SingularCovariance("Cholesky factor has zero diagonal".into()))?;
    Ok(w.norm_squared())
}

/// Persistency-of-excitation check: true iff `sum_t d_t d_t^T - eps I` is
/// positive semi-definite (up to the numerical slack [`PSD_SLACK`]).
pub fn pe_check(data: &[DVector<f64>], eps: f64) -> Result<bool> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty data sequence".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "excitation level must be positive, got {eps}"
        )));
    }
    let p = data[0].len();
    if data.iter().any(|d| d.len() != p) {
        return Err(Error::DimensionMismatch(
            "regressor vectors have unequal lengths".into(),
        ));
    }
    let mut gram = DMatrix::zeros(p, p);
    for d in data {
        gram.ger(1.0, d, d, 1.0);
    }
    let shifted = gram - DMatrix::<f64>::identity(p, p) * eps;
    Ok(min_symmetric_eigenvalue(&shifted) >= -PSD_SLACK)
}

/// Numerical rank of the stacked regressor matrix `[C_0; C_1; ...]`.
///
/// Full observability of the parameter system holds iff the result equals
/// `n(n+m)`.
pub fn observability_rank(regressors: &[Regressor]) -> Result<usize> {
    if regressors.is_empty() {
        return Err(Error::InvalidArgument("empty regressor sequence".into()));
    }
    let (n, m) = (regressors[0].n, regressors[0].m);
    if regressors.iter().any(|r| r.n != n || r.m != m) {
        return Err(Error::DimensionMismatch(
            "regressors have inconsistent shapes".into(),
        ));
    }
    let cols = n * (n + m);
    let mut stacked = DMatrix::zeros(n * regressors.len(), cols);
    for (i, r) in regressors.iter().enumerate() {
        stacked.view_mut((i * n, 0), (n, cols)).copy_from(&r.c);
    }
    let svals = stacked.singular_values();
    let max = svals.max();
    if max <= 0.0 {
        return Ok(0);
    }
    Ok(svals.iter().filter(|&&s| s > RANK_REL_TOL * max).count())
}

/// Smallest eigenvalue of a symmetric matrix (the input is symmetrized
/// first to shed roundoff asymmetry).
pub fn min_symmetric_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    eig.min()
}

/// Symmetric square root of a PSD matrix, with tiny negative eigenvalues
/// (roundoff) clipped to zero.
pub fn matrix_sqrt_psd(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// True iff `mat` is symmetric entrywise within `tol`.
pub fn is_symmetric(mat: &DMatrix<f64>, tol: f64) -> bool {
    if mat.nrows() != mat.ncols() {
        return false;
    }
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            if (mat[(i, j)] - mat[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// True iff `mat` is symmetric and positive semi-definite up to [`PSD_SLACK`].
pub fn is_psd(mat: &DMatrix<f64>) -> bool {
    is_symmetric(mat, 1e-8) && min_symmetric_eigenvalue(mat) >= -PSD_SLACK
}
