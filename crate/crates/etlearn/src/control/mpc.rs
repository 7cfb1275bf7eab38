//! Condensed finite-horizon solvers.
//!
//! States are eliminated through the prediction matrices
//! `X = Phi x0 + Gamma U`, turning the nominal problem into a dense QP in
//! the stacked input sequence `U`. The experiment variant refines the
//! nominal optimizer inside the feasible polytope: terminal equality
//! constraints are removed by a null-space parameterization, the quadratic
//! part of the gradient is analytic, and the covariance-trace part is
//! taken by central finite differences.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, Constraint, QpResult};
use super::{covariance_rollout, MpcConfig, MpcSolution, MpcStatus, TerminalSet};
use crate::error::{Error, Result};
use crate::estimators::NoiseConfig;
use crate::linalg::LinearModel;

/// Finite-difference step scale for the covariance-trace gradient.
const FD_STEP: f64 = 1e-6;

/// Condensed prediction and cost data for one (model, x0) pair.
struct Condensed {
    /// `X = phi x0 + gamma U`, stacked over x_1 .. x_N.
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
    /// QP Hessian `H = 2 (Gamma' Qbar Gamma + Rbar)`.
    h: DMatrix<f64>,
    /// QP linear term `f = 2 Gamma' Qbar Phi x0`.
    f: DVector<f64>,
    /// Constant cost offset `x0' Q x0 + x0' Phi' Qbar Phi x0`.
    cost_const: f64,
}

fn condense(model: &LinearModel, cfg: &MpcConfig, x0: &DVector<f64>) -> Condensed {
    let n = model.state_dim();
    let m = model.input_dim();
    let nh = cfg.horizon;

    let mut phi = DMatrix::zeros(n * nh, n);
    let mut gamma = DMatrix::zeros(n * nh, m * nh);
    let mut a_pow = DMatrix::<f64>::identity(n, n);
    for k in 0..nh {
        // Block row k holds x_{k+1}: Phi_k = A^{k+1}, Gamma_{k,j} = A^{k-j} B.
        a_pow = model.a() * &a_pow;
        phi.view_mut((k * n, 0), (n, n)).copy_from(&a_pow);
        for j in 0..=k {
            let block = if j == k {
                model.b().clone()
            } else {
                let prev = gamma.view(((k - 1) * n, j * m), (n, m)).into_owned();
                model.a() * prev
            };
            gamma.view_mut((k * n, j * m), (n, m)).copy_from(&block);
        }
    }

    // Stage weights on x_1 .. x_{N-1}, terminal weight on x_N.
    let mut qbar = DMatrix::zeros(n * nh, n * nh);
    for k in 0..nh - 1 {
        qbar.view_mut((k * n, k * n), (n, n)).copy_from(&cfg.q);
    }
    qbar.view_mut(((nh - 1) * n, (nh - 1) * n), (n, n))
        .copy_from(&cfg.q_terminal);
    let mut rbar = DMatrix::zeros(m * nh, m * nh);
    for k in 0..nh {
        rbar.view_mut((k * m, k * m), (m, m)).copy_from(&cfg.r);
    }

    let qg = &qbar * &gamma;
    let mut h = gamma.transpose() * &qg + &rbar;
    h *= 2.0;
    // Shed the asymmetry accumulated by the products.
    let ht = h.transpose();
    h += ht;
    h *= 0.5;
    let phix = &phi * x0;
    let f = gamma.transpose() * (&qbar * &phix) * 2.0;
    let cost_const = (x0.transpose() * &cfg.q * x0)[(0, 0)] + (phix.transpose() * &qbar * &phix)[(0, 0)];

    Condensed {
        phi,
        gamma,
        h,
        f,
        cost_const,
    }
}

/// All constraints of the condensed problem, in the stacked input space.
fn build_constraints(
    cond: &Condensed,
    model: &LinearModel,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
) -> Vec<Constraint> {
    let n = model.state_dim();
    let m = model.input_dim();
    let nh = cfg.horizon;
    let nv = m * nh;
    let mut cons = Vec::new();

    // Input box bounds.
    for k in 0..nh {
        for (j, &(lo, hi)) in cfg.input_bounds.iter().enumerate() {
            let mut e = DVector::zeros(nv);
            e[k * m + j] = 1.0;
            cons.push(Constraint::less_equal(e.clone(), hi));
            e[k * m + j] = -1.0;
            cons.push(Constraint::less_equal(e, -lo));
        }
    }

    // State constraints act on the planned x_1 .. x_{N-1}; x_0 is the
    // measurement and x_N is governed by the terminal set.
    let phix = &cond.phi * x0;
    for k in 0..nh.saturating_sub(1) {
        let row_block = cond.gamma.rows(k * n, n);
        let offset = phix.rows(k * n, n);
        if let Some(bounds) = &cfg.state_bounds {
            for (i, &(lo, hi)) in bounds.iter().enumerate() {
                let a = row_block.row(i).transpose();
                cons.push(Constraint::less_equal(a.clone(), hi - offset[i]));
                cons.push(Constraint::less_equal(-a, offset[i] - lo));
            }
        }
        for ineq in &cfg.state_inequalities {
            let a = row_block.transpose() * &ineq.coeffs;
            let shift = ineq.coeffs.dot(&offset.into_owned());
            cons.push(Constraint::less_equal(a, ineq.bound - shift));
        }
    }

    if cfg.terminal == TerminalSet::Origin {
        let k = nh - 1;
        let row_block = cond.gamma.rows(k * n, n);
        let offset = phix.rows(k * n, n);
        for i in 0..n {
            cons.push(Constraint::equality(
                row_block.row(i).transpose(),
                -offset[i],
            ));
        }
    }

    cons
}

fn rollout_states(model: &LinearModel, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    for u in inputs {
        x = model.a() * &x + model.b() * u;
        states.push(x.clone());
    }
    states
}

fn split_inputs(u: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    u.as_slice()
        .chunks(m)
        .map(|c| DVector::from_column_slice(c))
        .collect()
}

fn check_solve_args(model: &LinearModel, x0: &DVector<f64>, cfg: &MpcConfig) -> Result<()> {
    cfg.validate(model.state_dim(), model.input_dim())?;
    if x0.len() != model.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {}, model expects {}",
            x0.len(),
            model.state_dim()
        )));
    }
    Ok(())
}

/// Solves the finite-horizon regulation QP to its exact KKT point.
pub fn nominal_mpc_solve(
    model: &LinearModel,
    x0: &DVector<f64>,
    cfg: &MpcConfig,
) -> Result<MpcSolution> {
    check_solve_args(model, x0, cfg)?;
    let cond = condense(model, cfg, x0);
    let cons = build_constraints(&cond, model, cfg, x0);
    match solve_qp(&cond.h, &cond.f, &cons)? {
        QpResult::Infeasible => Ok(MpcSolution::infeasible()),
        QpResult::Optimal(point) => {
            let inputs = split_inputs(&point.x, model.input_dim());
            let states = rollout_states(model, x0, &inputs);
            Ok(MpcSolution {
                states,
                inputs,
                cost: point.objective + cond.cost_const,
                cov_trace_path: Vec::new(),
                status: MpcStatus::Solved,
            })
        }
    }
}

/// Solves the experiment-design problem: nominal cost plus
/// `nu * sum trace(P~_{k+1|k+1})`, warm-started from the nominal solution.
///
/// The returned plan is always feasible, and its full-cost objective never
/// exceeds the warm start's.
pub fn experiment_mpc_solve(
    model: &LinearModel,
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
    noise: &NoiseConfig,
    cfg: &MpcConfig,
) -> Result<MpcSolution> {
    check_solve_args(model, x0, cfg)?;
    let dof = model.state_dim() * (model.state_dim() + model.input_dim());
    if p0.nrows() != dof || p0.ncols() != dof {
        return Err(Error::DimensionMismatch(format!(
            "P0 is {}x{}, parameter dimension is {dof}",
            p0.nrows(),
            p0.ncols()
        )));
    }

    let mut nominal = nominal_mpc_solve(model, x0, cfg)?;
    if !nominal.is_feasible() {
        return Ok(nominal);
    }
    let include_drift = cfg.rollout_includes_drift;
    let trace_path = |states: &[DVector<f64>], inputs: &[DVector<f64>]| -> Result<Vec<f64>> {
        Ok(covariance_rollout(states, inputs, p0, noise, include_drift)?
            .iter()
            .map(|p| p.trace())
            .collect())
    };

    let nominal_path = trace_path(&nominal.states, &nominal.inputs)?;
    if cfg.nu == 0.0 {
        nominal.cov_trace_path = nominal_path;
        return Ok(nominal);
    }

    let m = model.input_dim();
    let cond = condense(model, cfg, x0);
    let cons = build_constraints(&cond, model, cfg, x0);
    let u_nom = {
        let mut u = DVector::zeros(m * cfg.horizon);
        for (k, uk) in nominal.inputs.iter().enumerate() {
            u.rows_mut(k * m, m).copy_from(uk);
        }
        u
    };

    // Null-space parameterization U = U_nom + Z v of the equality
    // constraints keeps every iterate on the terminal manifold.
    let eq_rows: Vec<&Constraint> = cons
        .iter()
        .filter(|c| matches!(c.kind, super::qp::ConstraintKind::Equality))
        .collect();
    let nv = u_nom.len();
    let z_basis = if eq_rows.is_empty() {
        DMatrix::<f64>::identity(nv, nv)
    } else {
        let mut e = DMatrix::zeros(eq_rows.len(), nv);
        for (i, c) in eq_rows.iter().enumerate() {
            e.row_mut(i).copy_from(&c.normal.transpose());
        }
        null_space(&e)
    };
    let free_dims = z_basis.ncols();

    // Inequalities mapped into v-space.
    let ineqs: Vec<(DVector<f64>, f64)> = cons
        .iter()
        .filter(|c| matches!(c.kind, super::qp::ConstraintKind::Inequality))
        .map(|c| {
            let a_v = z_basis.transpose() * &c.normal;
            let b_v = c.bound - c.normal.dot(&u_nom);
            (a_v, b_v)
        })
        .collect();
    let feasible = |v: &DVector<f64>| ineqs.iter().all(|(a, b)| a.dot(v) <= b + 1e-9);

    let quad_cost = |u: &DVector<f64>| 0.5 * (&cond.h * u).dot(u) + cond.f.dot(u) + cond.cost_const;
    let trace_sum = |u: &DVector<f64>| -> Result<f64> {
        let inputs = split_inputs(u, m);
        let states = rollout_states(model, x0, &inputs);
        // Posterior traces after each planned step, P~_1 .. P~_N.
        Ok(trace_path(&states, &inputs)?[1..].iter().sum())
    };
    let full_cost = |v: &DVector<f64>| -> Result<f64> {
        let u = &u_nom + &z_basis * v;
        Ok(quad_cost(&u) + cfg.nu * trace_sum(&u)?)
    };

    let mut v = DVector::zeros(free_dims);
    let mut best = full_cost(&v)?;
    let warm_start_cost = best;
    let mut status = MpcStatus::Solved;

    // Probe scale for saddle escapes: the information term is quadratic in
    // the excitation, so the warm start can sit at a flat point; fixed
    // coordinate probes at a fraction of the input range step over it.
    let probe_scale = cfg
        .input_bounds
        .iter()
        .map(|&(lo, hi)| hi.min(-lo))
        .fold(f64::INFINITY, f64::min);
    let probe_scale = if probe_scale.is_finite() && probe_scale > 0.0 {
        probe_scale
    } else {
        1.0_f64.max(u_nom.amax())
    };

    if free_dims > 0 {
        let mut step = 1.0;
        for iter in 0..cfg.max_iters {
            // Analytic gradient of the quadratic part plus central
            // differences on the trace term.
            let u = &u_nom + &z_basis * &v;
            let mut grad = z_basis.transpose() * (&cond.h * &u + &cond.f);
            for i in 0..free_dims {
                let h_i = FD_STEP * v[i].abs().max(1.0);
                let mut vp = v.clone();
                vp[i] += h_i;
                let mut vm = v.clone();
                vm[i] -= h_i;
                let tp = trace_sum(&(&u_nom + &z_basis * &vp))?;
                let tm = trace_sum(&(&u_nom + &z_basis * &vm))?;
                grad[i] += cfg.nu * (tp - tm) / (2.0 * h_i);
            }

            let mut improved = false;
            if grad.norm() > 1e-9 * (1.0 + best.abs()) {
                for _ in 0..40 {
                    let mut candidate = &v - &grad * step;
                    if !feasible(&candidate) {
                        match project_onto(&ineqs, &candidate)? {
                            Some(projected) => candidate = projected,
                            None => {
                                step *= 0.5;
                                continue;
                            }
                        }
                    }
                    let cost = full_cost(&candidate)?;
                    if cost < best - 1e-12 * (1.0 + best.abs()) {
                        v = candidate;
                        best = cost;
                        improved = true;
                        step *= 2.0;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-16 {
                        break;
                    }
                }
            }

            if !improved {
                // Deterministic coordinate probes at a few magnitudes.
                let mut best_probe: Option<(DVector<f64>, f64)> = None;
                for frac in [0.5, 0.125, 0.03125] {
                    let amp = probe_scale * frac;
                    for i in 0..free_dims {
                        for sign in [1.0, -1.0] {
                            let mut candidate = v.clone();
                            candidate[i] += sign * amp;
                            if !feasible(&candidate) {
                                match project_onto(&ineqs, &candidate)? {
                                    Some(projected) => candidate = projected,
                                    None => continue,
                                }
                            }
                            let cost = full_cost(&candidate)?;
                            if cost < best - 1e-12 * (1.0 + best.abs())
                                && best_probe.as_ref().map_or(true, |(_, c)| cost < *c)
                            {
                                best_probe = Some((candidate, cost));
                            }
                        }
                    }
                }
                if let Some((candidate, cost)) = best_probe {
                    v = candidate;
                    best = cost;
                    improved = true;
                    step = 1.0;
                }
            }

            if !improved {
                break;
            }
            if iter + 1 == cfg.max_iters {
                status = MpcStatus::MaxIterations;
            }
        }
    }

    debug_assert!(best <= warm_start_cost + 1e-9);
    let u_best = &u_nom + &z_basis * &v;
    let inputs = split_inputs(&u_best, m);
    let states = rollout_states(model, x0, &inputs);
    let path = trace_path(&states, &inputs)?;
    Ok(MpcSolution {
        states,
        inputs,
        cost: best,
        cov_trace_path: path,
        status,
    })
}

/// Orthonormal basis of the null space of `e`, from the eigenvectors of
/// `e' e` with (numerically) zero eigenvalue.
fn null_space(e: &DMatrix<f64>) -> DMatrix<f64> {
    let nv = e.ncols();
    let gram = e.transpose() * e;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.max().max(1e-300);
    let null_cols: Vec<usize> = (0..nv)
        .filter(|&j| eig.eigenvalues[j] <= 1e-12 * lmax)
        .collect();
    let mut basis = DMatrix::zeros(nv, null_cols.len());
    for (out, &j) in null_cols.iter().enumerate() {
        basis.set_column(out, &eig.eigenvectors.column(j));
    }
    basis
}

/// Euclidean projection onto the v-space polytope; `None` when the
/// projection subproblem is itself infeasible.
fn project_onto(
    ineqs: &[(DVector<f64>, f64)],
    target: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    let nv = target.len();
    let h = DMatrix::<f64>::identity(nv, nv);
    let f = -target;
    let cons: Vec<Constraint> = ineqs
        .iter()
        .map(|(a, b)| Constraint::less_equal(a.clone(), *b))
        .collect();
    Ok(match solve_qp(&h, &f, &cons)? {
        QpResult::Optimal(p) => Some(p.x),
        QpResult::Infeasible => None,
    })
}
