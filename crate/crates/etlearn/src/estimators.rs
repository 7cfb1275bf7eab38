//! Recursive identification of the vectorized parameters `z = vec([A B]^T)`
//! from state/input data: batch least squares, recursive least squares with
//! optional exponential forgetting, and the Kalman parameter filter.
//!
//! All three share the same state shape (estimate plus error covariance),
//! so they can be swapped behind the trigger and the experiment design. The
//! Kalman variant assumes the parameters follow a random walk
//! `z[k+1] = z[k] + dz[k]`, `dz ~ N(0, Sigma_z)`, with observation
//! `x[k+1] = C[k] z[k] + w[k]`, `w ~ N(0, Sigma_w)`.
//!
//! Covariance updates go through Cholesky solves of the innovation matrix
//! rather than explicit inverses, and the posterior covariance is
//! re-symmetrized after every update.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    is_symmetric, min_symmetric_eigenvalue, ParamVector, Regressor, PSD_SLACK, RANK_REL_TOL,
};

/// Estimate plus error covariance, shared by RLS and the Kalman filter.
#[derive(Debug, Clone)]
pub struct FilterState {
    z_hat: ParamVector,
    p: DMatrix<f64>,
    step: usize,
}

impl FilterState {
    /// Validating constructor: `P` must be symmetric, PSD, and sized
    /// `n(n+m)` to match the estimate.
    pub fn new(z_hat: ParamVector, p: DMatrix<f64>) -> Result<Self> {
        let dof = z_hat.dof();
        if p.nrows() != dof || p.ncols() != dof {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, estimate has {} parameters",
                p.nrows(),
                p.ncols(),
                dof
            )));
        }
        if !is_symmetric(&p, 1e-10) {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        if min_symmetric_eigenvalue(&p) < -PSD_SLACK {
            return Err(Error::InvalidArgument(
                "covariance is not positive semi-definite".into(),
            ));
        }
        Ok(Self { z_hat, p, step: 0 })
    }

    fn advanced(z_hat: ParamVector, p: DMatrix<f64>, step: usize) -> Self {
        Self { z_hat, p, step }
    }

    pub fn estimate(&self) -> &ParamVector {
        &self.z_hat
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn covariance_trace(&self) -> f64 {
        self.p.trace()
    }
}

/// Noise model of the parameter filter: process disturbance covariance,
/// parameter drift covariance, and the RLS forgetting factor.
#[derive(Debug, Clone)]
pub struct NoiseConfig {
    sigma_w: DMatrix<f64>,
    sigma_z: DMatrix<f64>,
    lambda: f64,
}

impl NoiseConfig {
    pub fn new(sigma_w: DMatrix<f64>, sigma_z: DMatrix<f64>, lambda: f64) -> Result<Self> {
        for (name, m) in [("Sigma_w", &sigma_w), ("Sigma_z", &sigma_z)] {
            if m.nrows() != m.ncols() {
                return Err(Error::DimensionMismatch(format!("{name} must be square")));
            }
            if !is_symmetric(m, 1e-10) || min_symmetric_eigenvalue(m) < -PSD_SLACK {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be symmetric positive semi-definite"
                )));
            }
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "forgetting factor must lie in (0, 1], got {lambda}"
            )));
        }
        Ok(Self {
            sigma_w,
            sigma_z,
            lambda,
        })
    }

    pub fn sigma_w(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }

    pub fn sigma_z(&self) -> &DMatrix<f64> {
        &self.sigma_z
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Intermediate quantities of one Kalman filter step, kept for diagnostics
/// and tests.
#[derive(Debug, Clone)]
pub struct KfStepTrace {
    /// Innovation `e = x_next - C z_hat`.
    pub innovation: DVector<f64>,
    /// Innovation covariance `S = C P_pred C^T + Sigma_w`.
    pub innovation_cov: DMatrix<f64>,
    /// Gain `K = P_pred C^T S^{-1}`.
    pub gain: DMatrix<f64>,
    /// Predicted covariance `P_pred = P + Sigma_z`.
    pub p_pred: DMatrix<f64>,
}

/// Batch least squares over the whole data record.
///
/// `states` holds `x_1 .. x_k` and `regressors` the matching `C_0 .. C_{k-1}`.
/// Fails with a rank diagnostic when the stacked regressor is not
/// persistently exciting.
pub fn batch_ls(states: &[DVector<f64>], regressors: &[Regressor]) -> Result<ParamVector> {
    if states.is_empty() || states.len() != regressors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} states vs {} regressors",
            states.len(),
            regressors.len()
        )));
    }
    let (n, m) = (regressors[0].state_dim(), regressors[0].input_dim());
    let dof = n * (n + m);
    let rows = n * states.len();
    let mut stacked_c = DMatrix::zeros(rows, dof);
    let mut stacked_x = DVector::zeros(rows);
    for (i, (x, r)) in states.iter().zip(regressors).enumerate() {
        if x.len() != n || r.state_dim() != n || r.input_dim() != m {
            return Err(Error::DimensionMismatch(
                "inconsistent state/regressor dimensions".into(),
            ));
        }
        stacked_c.view_mut((i * n, 0), (n, dof)).copy_from(r.c());
        stacked_x.rows_mut(i * n, n).copy_from(x);
    }

    let svd = stacked_c.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_REL_TOL * smax.max(f64::MIN_POSITIVE))
        .count();
    if rank < dof {
        return Err(Error::NotPersistentlyExciting {
            rank,
            required: dof,
        });
    }
    let z = svd
        .solve(&stacked_x, RANK_REL_TOL * smax)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    ParamVector::new(z, n, m)
}

/// One recursive least squares step.
///
/// With `lambda = 1` this is the plain recursion
/// `K = P C^T (I + C P C^T)^{-1}`, `P+ = (I - K C) P`; with `lambda < 1`
/// the exponential-forgetting variant divides the posterior covariance by
/// `lambda` and uses `lambda I` in the gain denominator, which realizes the
/// weighted data-generation model where old samples carry inflated noise.
pub fn rls_step(
    state: &FilterState,
    x_next: &DVector<f64>,
    reg: &Regressor,
    lambda: f64,
) -> Result<FilterState> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "forgetting factor must lie in (0, 1], got {lambda}"
        )));
    }
    let n = reg.state_dim();
    check_step_dims(state, x_next, reg)?;

    let c = reg.c();
    let p = state.covariance();
    let cp = c * p; // n x dof
    let mut denom = &cp * c.transpose(); // n x n
    for i in 0..n {
        denom[(i, i)] += lambda;
    }
    symmetrize(&mut denom);
    let chol = denom.cholesky().ok_or_else(|| {
        Error::DegenerateNoise("RLS gain denominator is not positive definite".into())
    })?;
    // K = P C^T (lambda I + C P C^T)^{-1}; S is symmetric, so solve against
    // C P and transpose.
    let gain = chol.solve(&cp).transpose(); // dof x n

    let innovation = x_next - c * state.estimate().as_vector();
    let z_next = state.estimate().as_vector() + &gain * &innovation;
    let mut p_next = (p - &gain * &cp) / lambda;
    symmetrize(&mut p_next);

    let z_hat = ParamVector::new(z_next, n, reg.input_dim())?;
    Ok(FilterState::advanced(z_hat, p_next, state.step() + 1))
}

/// One Kalman parameter filter step, in the order: covariance prediction,
/// innovation, innovation covariance, gain, estimate update, covariance
/// update (then re-symmetrization).
pub fn kf_step(
    state: &FilterState,
    x_next: &DVector<f64>,
    reg: &Regressor,
    noise: &NoiseConfig,
) -> Result<(FilterState, KfStepTrace)> {
    let n = reg.state_dim();
    check_step_dims(state, x_next, reg)?;
    if noise.sigma_w.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "Sigma_w is {}x{}, state dimension is {}",
            noise.sigma_w.nrows(),
            noise.sigma_w.ncols(),
            n
        )));
    }
    if noise.sigma_z.nrows() != state.estimate().dof() {
        return Err(Error::DimensionMismatch(format!(
            "Sigma_z is {}x{}, parameter dimension is {}",
            noise.sigma_z.nrows(),
            noise.sigma_z.ncols(),
            state.estimate().dof()
        )));
    }

    let c = reg.c();
    let p_pred = state.covariance() + &noise.sigma_z;
    let innovation = x_next - c * state.estimate().as_vector();
    let cp = c * &p_pred; // n x dof
    let mut s = &cp * c.transpose() + &noise.sigma_w;
    symmetrize(&mut s);
    let chol = s.clone().cholesky().ok_or_else(|| {
        Error::DegenerateNoise("innovation covariance is not invertible; check Sigma_w".into())
    })?;
    let gain = chol.solve(&cp).transpose(); // dof x n

    let z_next = state.estimate().as_vector() + &gain * &innovation;
    let mut p_next = &p_pred - &gain * &cp;
    symmetrize(&mut p_next);

    let z_hat = ParamVector::new(z_next, n, reg.input_dim())?;
    let trace = KfStepTrace {
        innovation,
        innovation_cov: s,
        gain,
        p_pred,
    };
    Ok((
        FilterState::advanced(z_hat, p_next, state.step() + 1),
        trace,
    ))
}

/// Mean squared componentwise difference between two parameter vectors.
pub fn estimate_error_sq(z_hat: &DVector<f64>, z_true: &DVector<f64>) -> Result<f64> {
    if z_hat.len() != z_true.len() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vectors of lengths {} and {}",
            z_hat.len(),
            z_true.len()
        )));
    }
    Ok((z_hat - z_true).norm_squared() / z_hat.len() as f64)
}

fn check_step_dims(state: &FilterState, x_next: &DVector<f64>, reg: &Regressor) -> Result<()> {
    let n = reg.state_dim();
    if x_next.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "next state has length {}, regressor expects {}",
            x_next.len(),
            n
        )));
    }
    if state.estimate().dof() != n * (n + reg.input_dim()) {
        return Err(Error::DimensionMismatch(format!(
            "filter tracks {} parameters, regressor implies {}",
            state.estimate().dof(),
            n * (n + reg.input_dim())
        )));
    }
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}
