//! Model predictive control: a nominal regulator and the experiment-design
//! variant that also rewards shrinking the parameter filter covariance.
//!
//! Both controllers share one finite-horizon formulation
//!
//! ```text
//!     min  sum_{k=0}^{N-1} x_k' Q x_k + u_k' R u_k  +  x_N' Q_N x_N
//!          (+ nu * sum_{k=0}^{N-1} trace(P~_{k+1|k+1})   for nu > 0)
//!     s.t. x_{k+1} = A x_k + B u_k,  x_k in X,  u_k in U,  x_N in X_N
//! ```
//!
//! where the predicted covariances `P~` follow the parameter filter
//! recursion along the planned trajectory. With `nu = 0` the problem is a
//! convex QP, solved exactly by a dual active-set method after condensing
//! the states out. With `nu > 0` the trace term makes it nonconvex; the
//! solver then refines the nominal solution by projected gradient descent
//! restricted to the feasible polytope, accepting only feasible iterates
//! that improve the full cost.

mod mpc;
mod qp;

pub use mpc::{experiment_mpc_solve, nominal_mpc_solve};

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::NoiseConfig;
use crate::linalg::{is_symmetric, min_symmetric_eigenvalue, regressor, LinearModel, PSD_SLACK};

/// Terminal constraint set of the MPC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalSet {
    /// Zero terminal constraint `x_N = 0` (the default).
    Origin,
    /// No terminal constraint; the terminal weight alone shapes `x_N`.
    Free,
}

/// One-sided linear state constraint `coeffs . x <= bound`.
#[derive(Debug, Clone)]
pub struct StateInequality {
    pub coeffs: DVector<f64>,
    pub bound: f64,
}

/// Cost weights, horizon, constraint sets, and the covariance weight of
/// the experiment MPC.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    /// State stage weight (PSD).
    pub q: DMatrix<f64>,
    /// Input stage weight (positive definite).
    pub r: DMatrix<f64>,
    /// Terminal state weight (PSD); vacuous under [`TerminalSet::Origin`].
    pub q_terminal: DMatrix<f64>,
    /// Horizon length in steps.
    pub horizon: usize,
    /// Covariance-trace weight; zero recovers the nominal MPC.
    pub nu: f64,
    /// Per-input box bounds `(lo, hi)`; empty means unconstrained inputs.
    pub input_bounds: Vec<(f64, f64)>,
    /// Optional per-state box bounds, applied to planned states x_1..x_{N-1}.
    pub state_bounds: Option<Vec<(f64, f64)>>,
    /// Linear state inequalities, applied to planned states x_1..x_{N-1}.
    pub state_inequalities: Vec<StateInequality>,
    pub terminal: TerminalSet,
    /// Whether the covariance rollout inserts the drift term `Sigma_z`
    /// before each measurement update, matching the filter itself.
    pub rollout_includes_drift: bool,
    /// Iteration cap of the experiment refinement.
    pub max_iters: usize,
}

impl MpcConfig {
    /// A plain regulation setup with no covariance reward and default
    /// zero terminal constraint.
    pub fn regulation(q: DMatrix<f64>, r: DMatrix<f64>, q_terminal: DMatrix<f64>, horizon: usize) -> Self {
        Self {
            q,
            r,
            q_terminal,
            horizon,
            nu: 0.0,
            input_bounds: Vec::new(),
            state_bounds: None,
            state_inequalities: Vec::new(),
            terminal: TerminalSet::Origin,
            rollout_includes_drift: true,
            max_iters: 200,
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("mpc.horizon must be at least 1".into()));
        }
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return Err(Error::Config(format!("mpc.nu must be >= 0, got {}", self.nu)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("mpc.max_iters must be at least 1".into()));
        }
        for (name, mat, dim) in [
            ("mpc.q", &self.q, n),
            ("mpc.q_terminal", &self.q_terminal, n),
        ] {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(Error::Config(format!("{name} must be {dim}x{dim}")));
            }
            if !is_symmetric(mat, 1e-10) || min_symmetric_eigenvalue(mat) < -PSD_SLACK {
                return Err(Error::Config(format!("{name} must be symmetric PSD")));
            }
        }
        if self.r.nrows() != m || self.r.ncols() != m {
            return Err(Error::Config(format!("mpc.r must be {m}x{m}")));
        }
        if !is_symmetric(&self.r, 1e-10) || self.r.clone().cholesky().is_none() {
            return Err(Error::Config("mpc.r must be symmetric positive definite".into()));
        }
        if !self.input_bounds.is_empty() && self.input_bounds.len() != m {
            return Err(Error::Config(format!(
                "mpc.input_bounds needs {m} entries, got {}",
                self.input_bounds.len()
            )));
        }
        for &(lo, hi) in &self.input_bounds {
            if !(lo <= 0.0 && 0.0 <= hi) {
                return Err(Error::Config(
                    "mpc.input_bounds must contain the origin".into(),
                ));
            }
        }
        if let Some(bounds) = &self.state_bounds {
            if bounds.len() != n {
                return Err(Error::Config(format!(
                    "mpc.state_bounds needs {n} entries, got {}",
                    bounds.len()
                )));
            }
            for &(lo, hi) in bounds {
                if !(lo <= 0.0 && 0.0 <= hi) {
                    return Err(Error::Config(
                        "mpc.state_bounds must contain the origin".into(),
                    ));
                }
            }
        }
        for ineq in &self.state_inequalities {
            if ineq.coeffs.len() != n {
                return Err(Error::Config(format!(
                    "state inequality coefficient length {} does not match n = {n}",
                    ineq.coeffs.len()
                )));
            }
            if !(ineq.bound >= 0.0) {
                return Err(Error::Config(
                    "state inequality bounds must be nonnegative so the set contains the origin"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// Solver outcome flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpcStatus {
    Solved,
    /// The experiment refinement hit its iteration cap; the solution is the
    /// best feasible iterate found.
    MaxIterations,
    Infeasible,
}

impl MpcStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MpcStatus::Solved => "solved",
            MpcStatus::MaxIterations => "max_iterations",
            MpcStatus::Infeasible => "infeasible",
        }
    }
}

/// Planned trajectories plus diagnostics.
#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// Planned states `x_0 .. x_N` (empty when infeasible).
    pub states: Vec<DVector<f64>>,
    /// Planned inputs `u_0 .. u_{N-1}` (empty when infeasible).
    pub inputs: Vec<DVector<f64>>,
    /// Achieved objective, including the covariance term when `nu > 0`.
    pub cost: f64,
    /// Predicted `trace(P~_{k|k})` along the plan (filled by the experiment
    /// solver; empty for nominal solves).
    pub cov_trace_path: Vec<f64>,
    pub status: MpcStatus,
}

impl MpcSolution {
    pub(crate) fn infeasible() -> Self {
        Self {
            states: Vec::new(),
            inputs: Vec::new(),
            cost: f64::INFINITY,
            cov_trace_path: Vec::new(),
            status: MpcStatus::Infeasible,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status != MpcStatus::Infeasible
    }
}

/// Propagates the parameter filter covariance along a planned trajectory:
/// for each step, (optionally) add the drift `Sigma_z`, then apply the
/// measurement update induced by the planned regressor. Returns the `N+1`
/// covariances including the initial one.
pub fn covariance_rollout(
    plan_states: &[DVector<f64>],
    plan_inputs: &[DVector<f64>],
    p0: &DMatrix<f64>,
    noise: &NoiseConfig,
    include_drift: bool,
) -> Result<Vec<DMatrix<f64>>> {
    if plan_states.len() != plan_inputs.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} states vs {} inputs; need one more state than inputs",
            plan_states.len(),
            plan_inputs.len()
        )));
    }
    let mut out = Vec::with_capacity(plan_states.len());
    out.push(p0.clone());
    let mut p = p0.clone();
    for (x, u) in plan_states.iter().zip(plan_inputs) {
        let c = regressor(x, u);
        let p_pred = if include_drift { &p + noise.sigma_z() } else { p.clone() };
        let cp = c.c() * &p_pred;
        let mut s = &cp * c.c().transpose() + noise.sigma_w();
        let st = s.transpose();
        s += st;
        s *= 0.5;
        let chol = s.cholesky().ok_or_else(|| {
            Error::DegenerateNoise("predicted innovation covariance is singular".into())
        })?;
        let gain = chol.solve(&cp).transpose();
        let mut p_next = &p_pred - gain * &cp;
        let pt = p_next.transpose();
        p_next += pt;
        p_next *= 0.5;
        out.push(p_next.clone());
        p = p_next;
    }
    Ok(out)
}

/// Stabilizability test for the pair (A, B): every eigenvalue of `A` on or
/// outside the unit circle must be controllable (PBH rank condition).
pub fn is_stabilizable(model: &LinearModel) -> bool {
    let n = model.state_dim();
    let m = model.input_dim();
    let eigs = model.a().complex_eigenvalues();
    for lambda in eigs.iter() {
        if lambda.norm() < 1.0 - 1e-9 {
            continue;
        }
        // rank [A - lambda I, B] over the complex numbers.
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                pencil[(i, j)] = Complex::new(model.a()[(i, j)], 0.0);
            }
            pencil[(i, i)] -= *lambda;
            for j in 0..m {
                pencil[(i, n + j)] = Complex::new(model.b()[(i, j)], 0.0);
            }
        }
        let svals = pencil.singular_values();
        let smax = svals.max();
        let rank = svals.iter().filter(|&&s| s > 1e-9 * smax.max(1e-300)).count();
        if rank < n {
            return false;
        }
    }
    true
}

/// MPC handle owning the model it plans with; the model is rebound after
/// each learning experiment.
#[derive(Debug, Clone)]
pub struct Controller {
    model: LinearModel,
    cfg: MpcConfig,
}

impl Controller {
    pub fn new(model: LinearModel, cfg: MpcConfig) -> Result<Self> {
        cfg.validate(model.state_dim(), model.input_dim())?;
        if !is_stabilizable(&model) {
            return Err(Error::Unstabilizable);
        }
        Ok(Self { model, cfg })
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    /// Rebinds the internal model; subsequent solves plan with it.
    pub fn update_model(&mut self, model: LinearModel) -> Result<()> {
        if model.state_dim() != self.model.state_dim()
            || model.input_dim() != self.model.input_dim()
        {
            return Err(Error::DimensionMismatch(
                "replacement model has different dimensions".into(),
            ));
        }
        if !is_stabilizable(&model) {
            return Err(Error::Unstabilizable);
        }
        self.model = model;
        Ok(())
    }

    pub fn solve_nominal(&self, x0: &DVector<f64>) -> Result<MpcSolution> {
        nominal_mpc_solve(&self.model, x0, &self.cfg)
    }

    pub fn solve_experiment(
        &self,
        x0: &DVector<f64>,
        p0: &DMatrix<f64>,
        noise: &NoiseConfig,
    ) -> Result<MpcSolution> {
        experiment_mpc_solve(&self.model, x0, p0, noise, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_noise(sigma_w: f64, sigma_z: f64, dof: usize) -> NoiseConfig {
        NoiseConfig::new(
            DMatrix::from_element(1, 1, sigma_w),
            DMatrix::<f64>::identity(dof, dof) * sigma_z,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn rollout_without_excitation_or_drift_is_constant() {
        let p0 = DMatrix::<f64>::identity(2, 2) * 3.0;
        let noise = scalar_noise(1.0, 0.0, 2);
        let states = vec![DVector::zeros(1); 4];
        let inputs = vec![DVector::zeros(1); 3];
        let path = covariance_rollout(&states, &inputs, &p0, &noise, true).unwrap();
        assert_eq!(path.len(), 4);
        for p in &path {
            assert!((p - &p0).amax() < 1e-14);
        }
    }

    #[test]
    fn rollout_pure_drift_grows_linearly() {
        let dof = 2;
        let p0 = DMatrix::<f64>::identity(dof, dof);
        let noise = scalar_noise(1.0, 0.25, dof);
        let states = vec![DVector::zeros(1); 5];
        let inputs = vec![DVector::zeros(1); 4];
        let path = covariance_rollout(&states, &inputs, &p0, &noise, true).unwrap();
        for (k, p) in path.iter().enumerate() {
            assert_abs_diff_eq!(p.trace(), 2.0 + k as f64 * 0.25 * 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn rollout_scalar_information_recursion() {
        // n = 1, m = 0 rig: x = 1 at every step, P0 = 1, Sigma_w = 1,
        // Sigma_z = 0 gives P after k updates equal to 1/(1+k).
        let p0 = DMatrix::from_element(1, 1, 1.0);
        let noise = NoiseConfig::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            1.0,
        )
        .unwrap();
        let steps = 6;
        let states = vec![DVector::from_vec(vec![1.0]); steps + 1];
        let inputs = vec![DVector::zeros(0); steps];
        let path = covariance_rollout(&states, &inputs, &p0, &noise, true).unwrap();
        for (k, p) in path.iter().enumerate() {
            assert_abs_diff_eq!(p[(0, 0)], 1.0 / (1.0 + k as f64), epsilon = 1e-12);
        }
    }

    #[test]
    fn rollout_never_adds_uncertainty_beyond_drift() {
        use crate::linalg::{min_symmetric_eigenvalue, PSD_SLACK};
        let dof = 6;
        let p0 = DMatrix::<f64>::identity(dof, dof) * 0.5;
        let noise = NoiseConfig::new(
            DMatrix::<f64>::identity(2, 2) * 0.1,
            DMatrix::<f64>::identity(dof, dof) * 0.01,
            1.0,
        )
        .unwrap();
        let states: Vec<_> = (0..5)
            .map(|k| DVector::from_vec(vec![k as f64 * 0.3, 1.0 - k as f64 * 0.1]))
            .collect();
        let inputs: Vec<_> = (0..4).map(|k| DVector::from_vec(vec![k as f64])).collect();
        let path = covariance_rollout(&states, &inputs, &p0, &noise, true).unwrap();
        for w in path.windows(2) {
            let bound = &w[0] + noise.sigma_z();
            let diff = bound - &w[1];
            assert!(min_symmetric_eigenvalue(&diff) >= -PSD_SLACK);
            assert!(crate::linalg::is_psd(&w[1]));
        }
    }

    #[test]
    fn stabilizability_pbh() {
        // Controllable unstable pair: stabilizable.
        let model = LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[1.2, 1.0, 0.0, 0.8]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        assert!(is_stabilizable(&model));

        // Unstable mode decoupled from the input: not stabilizable.
        let bad = LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        assert!(!is_stabilizable(&bad));

        // Uncontrollable but stable extra mode: still stabilizable.
        let ok = LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        assert!(is_stabilizable(&ok));
    }

    #[test]
    fn controller_rejects_unstabilizable_model() {
        let bad = LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cfg = MpcConfig::regulation(
            DMatrix::<f64>::identity(2, 2),
            DMatrix::<f64>::identity(1, 1),
            DMatrix::<f64>::identity(2, 2),
            4,
        );
        assert!(matches!(Controller::new(bad, cfg), Err(Error::Unstabilizable)));
    }
}
