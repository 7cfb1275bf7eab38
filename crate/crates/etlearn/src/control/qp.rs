//! Dense strictly convex quadratic programming by the dual active-set
//! method of Goldfarb and Idnani.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + f' x
//!     subject to  a_i' x  = b_i   (equalities)
//!                 a_i' x <= b_i   (inequalities)
//! ```
//!
//! for positive definite `H`. The iteration starts from the unconstrained
//! minimizer and adds violated constraints one at a time, taking dual steps
//! that keep the working set consistent; it terminates with the exact KKT
//! point of the active set (direct linear algebra, no tolerance loops) or
//! with an infeasibility certificate. Problem sizes here are tiny (tens of
//! variables), so the per-iteration factorizations are refreshed rather
//! than updated.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A single linear constraint `normal . x (=|<=) bound`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub normal: DVector<f64>,
    pub bound: f64,
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

impl Constraint {
    pub fn equality(normal: DVector<f64>, bound: f64) -> Self {
        Self {
            normal,
            bound,
            kind: ConstraintKind::Equality,
        }
    }

    pub fn less_equal(normal: DVector<f64>, bound: f64) -> Self {
        Self {
            normal,
            bound,
            kind: ConstraintKind::Inequality,
        }
    }
}

/// Exact solution of the quadratic program.
#[derive(Debug, Clone)]
pub struct QpPoint {
    pub x: DVector<f64>,
    /// Objective value `1/2 x' H x + f' x`.
    pub objective: f64,
    /// Lagrange multipliers, one per constraint (zero when inactive).
    #[allow(dead_code)] // consumed by the KKT checks in tests
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum QpResult {
    Optimal(QpPoint),
    Infeasible,
}

/// Relative feasibility tolerance used to pick violated constraints.
const VIOLATION_TOL: f64 = 1e-11;

pub fn solve_qp(h: &DMatrix<f64>, f: &DVector<f64>, constraints: &[Constraint]) -> Result<QpResult> {
    let nv = f.len();
    if h.nrows() != nv || h.ncols() != nv {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, f has length {}",
            h.nrows(),
            h.ncols(),
            nv
        )));
    }
    for c in constraints {
        if c.normal.len() != nv {
            return Err(Error::DimensionMismatch(
                "constraint normal length does not match the variable count".into(),
            ));
        }
    }
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("QP Hessian is not positive definite".into()))?;

    // Unconstrained minimizer; stationarity H x + f = sum u_i g_i is then
    // maintained with the oriented normals g_i of the active set.
    let mut x = chol.solve(&(-f));

    // Active constraints carry the orientation they were added with:
    // every constraint is handled in ">=" form, so a "<=" row enters with
    // its normal negated, and an equality enters with whichever sign its
    // current violation requires.
    struct Active {
        idx: usize,
        oriented: DVector<f64>,
        sign: f64,
        u: f64,
        kind: ConstraintKind,
    }
    let mut active: Vec<Active> = Vec::new();

    let norms: Vec<f64> = constraints
        .iter()
        .map(|c| c.normal.norm().max(f64::MIN_POSITIVE))
        .collect();

    // Each outer iteration fixes one violated constraint; each drop removes
    // one blocking constraint. The bound is generous and only guards
    // against numerical cycling.
    let max_iters = 100 * (nv + constraints.len() + 1);
    let mut iters = 0usize;

    loop {
        // Most violated constraint, scaled by the normal's length.
        let mut worst: Option<(usize, f64)> = None;
        for (i, c) in constraints.iter().enumerate() {
            if active.iter().any(|a| a.idx == i) {
                continue;
            }
            let s = c.bound - c.normal.dot(&x);
            let v = match c.kind {
                ConstraintKind::Equality => s.abs(),
                ConstraintKind::Inequality => (-s).max(0.0),
            };
            let scaled = v / norms[i];
            if scaled > VIOLATION_TOL && worst.map_or(true, |(_, w)| scaled > w) {
                worst = Some((i, scaled));
            }
        }
        let Some((p, _)) = worst else {
            // All constraints satisfied. Polish the final active set with
            // one exact KKT solve, shedding roundoff accumulated over the
            // partial steps.
            let q = active.len();
            let mut lagr = vec![0.0; constraints.len()];
            if q > 0 {
                let mut kkt = DMatrix::zeros(nv + q, nv + q);
                kkt.view_mut((0, 0), (nv, nv)).copy_from(h);
                let mut rhs = DVector::zeros(nv + q);
                rhs.rows_mut(0, nv).copy_from(&(-f));
                for (j, a) in active.iter().enumerate() {
                    let c = &constraints[a.idx];
                    for i in 0..nv {
                        kkt[(i, nv + j)] = c.normal[i];
                        kkt[(nv + j, i)] = c.normal[i];
                    }
                    rhs[nv + j] = c.bound;
                }
                if let Some(sol) = kkt.lu().solve(&rhs) {
                    let polished = sol.rows(0, nv).into_owned();
                    // Keep the polished point only if it stays feasible.
                    let ok = constraints.iter().all(|c| {
                        let s = c.bound - c.normal.dot(&polished);
                        match c.kind {
                            ConstraintKind::Equality => s.abs() <= 1e-9,
                            ConstraintKind::Inequality => s >= -1e-9,
                        }
                    });
                    if ok {
                        x = polished;
                        for (j, a) in active.iter().enumerate() {
                            lagr[a.idx] = sol[nv + j];
                        }
                    } else {
                        for a in &active {
                            lagr[a.idx] = -a.sign * a.u;
                        }
                    }
                } else {
                    for a in &active {
                        lagr[a.idx] = -a.sign * a.u;
                    }
                }
            }
            let objective = 0.5 * (h * &x).dot(&x) + f.dot(&x);
            return Ok(QpResult::Optimal(QpPoint {
                x,
                objective,
                multipliers: lagr,
            }));
        };

        // Orientation of p in ">=" form. For a "<=" violation the slack
        // s = b - a.x is negative and the oriented normal is -a; an
        // equality approached from below keeps +a.
        let s_p = constraints[p].bound - constraints[p].normal.dot(&x);
        let sign = match constraints[p].kind {
            ConstraintKind::Inequality => -1.0,
            ConstraintKind::Equality => {
                if s_p >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let n_eff = &constraints[p].normal * sign;
        let b_eff = constraints[p].bound * sign;
        let mut u_p = 0.0;

        // Inner loop: take primal/dual steps, dropping blocking constraints
        // until constraint p can be added with consistent multipliers.
        loop {
            iters += 1;
            if iters > max_iters {
                return Err(Error::InvalidArgument(
                    "QP solver exceeded its iteration bound (numerical cycling)".into(),
                ));
            }

            let hn = chol.solve(&n_eff);
            let q = active.len();
            let (z, r) = if q == 0 {
                (hn.clone(), DVector::zeros(0))
            } else {
                let mut nmat = DMatrix::zeros(nv, q);
                for (col, a) in active.iter().enumerate() {
                    nmat.set_column(col, &a.oriented);
                }
                let hinv_n = chol.solve(&nmat);
                let small = nmat.transpose() * &hinv_n; // q x q, SPD
                let rhs = nmat.transpose() * &hn;
                let small_chol = small.cholesky().ok_or_else(|| {
                    Error::InvalidArgument(
                        "active-set normals became linearly dependent".into(),
                    )
                })?;
                let r = small_chol.solve(&rhs);
                let z = &hn - hinv_n * &r;
                (z, r)
            };

            // Dual step limit from active inequality multipliers.
            let mut t1 = f64::INFINITY;
            let mut idel = usize::MAX;
            for (idx, a) in active.iter().enumerate() {
                if a.kind == ConstraintKind::Inequality && r[idx] > 0.0 {
                    let step = a.u / r[idx];
                    if step < t1 {
                        t1 = step;
                        idel = idx;
                    }
                }
            }

            // Primal step to reach constraint p.
            let ztn = z.dot(&n_eff);
            let violation = b_eff - n_eff.dot(&x); // > 0 while violated
            let t2 = if ztn.abs() <= 1e-14 * (1.0 + n_eff.norm_squared()) {
                f64::INFINITY
            } else {
                violation / ztn
            };

            if !t1.is_finite() && !t2.is_finite() {
                return Ok(QpResult::Infeasible);
            }
            let t = t1.min(t2);

            if t2.is_finite() {
                x += &z * t;
            }
            for (idx, a) in active.iter_mut().enumerate() {
                a.u -= t * r[idx];
            }
            u_p += t;

            if t2 <= t1 {
                // Full step: p joins the active set.
                active.push(Active {
                    idx: p,
                    oriented: n_eff.clone(),
                    sign,
                    u: u_p,
                    kind: constraints[p].kind,
                });
                break;
            }
            // Partial step: drop the blocking constraint and retry.
            active.remove(idel);
        }
    }
}
