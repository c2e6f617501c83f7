//! Dense strictly convex QP solver.
//!
//! Solves `minimize 1/2 z^T Q z + c^T z` subject to `a_i . z >= b_i` and
//! optional box bounds, via a dual active-set iteration: start from the
//! unconstrained minimizer, repeatedly pick the most violated constraint and
//! take primal/dual steps until it joins the active set, dropping active
//! constraints whose multipliers would go negative. Every linear-algebra
//! subproblem is solved fresh from the Cholesky factor of `Q`; instances
//! here are small (tens of variables) so incremental factor updates are not
//! worth their complexity.

use std::fmt;

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector, Dyn};

/// One linear inequality `coeffs . z >= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInequality {
    pub coeffs: DVector<f64>,
    pub rhs: f64,
}

/// A quadratic program in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    /// Symmetric positive-definite cost matrix `Q`.
    pub hessian: DMatrix<f64>,
    /// Linear cost term `c`.
    pub linear: DVector<f64>,
    /// General inequality rows `a_i . z >= b_i`.
    pub inequalities: Vec<LinearInequality>,
    /// Optional per-variable `(lo, hi)` bounds; infinities disable a side.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl QpInstance {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    /// All constraints as `a . z >= b` rows: the general inequalities first,
    /// then finite lower and upper bounds per variable, in index order.
    /// Multipliers in [`QpSolution`] align with this expansion.
    pub fn rows(&self) -> Vec<LinearInequality> {
        let n = self.num_vars();
        let mut rows = self.inequalities.clone();
        if let Some(bounds) = &self.bounds {
            assert_eq!(bounds.len(), n, "one bound pair per variable");
            for (i, (lo, hi)) in bounds.iter().enumerate() {
                if lo.is_finite() {
                    let mut a = DVector::zeros(n);
                    a[i] = 1.0;
                    rows.push(LinearInequality { coeffs: a, rhs: *lo });
                }
                if hi.is_finite() {
                    let mut a = DVector::zeros(n);
                    a[i] = -1.0;
                    rows.push(LinearInequality { coeffs: a, rhs: -hi });
                }
            }
        }
        rows
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.hessian * z).dot(z) + self.linear.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

/// Result of a QP solve. For infeasible instances the objective is infinite
/// and the multipliers are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// KKT multipliers aligned with [`QpInstance::rows`].
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QpError {
    /// The cost matrix was not positive definite even after regularization.
    NotPositiveDefinite,
    /// The active-set iteration exceeded its cap.
    IterationLimit,
    /// An internal factorization broke down.
    NumericalFailure,
}

impl fmt::Display for QpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QpError::NotPositiveDefinite => write!(f, "cost matrix is not positive definite"),
            QpError::IterationLimit => write!(f, "active-set iteration limit exceeded"),
            QpError::NumericalFailure => write!(f, "numerical breakdown in the active-set solver"),
        }
    }
}

impl std::error::Error for QpError {}

/// Ridge added to the diagonal when the plain factorization fails.
const RIDGE_SCHEDULE: [f64; 2] = [1e-9, 1e-6];
/// A step direction below this norm counts as zero.
const ZERO_DIRECTION_TOL: f64 = 1e-12;
/// Constraint slacks above `-tol` count as satisfied.
const VIOLATION_TOL: f64 = 1e-10;

fn factor_hessian(q: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, QpError> {
    if let Some(chol) = Cholesky::new(q.clone()) {
        return Ok(chol);
    }
    let scale = q.diagonal().amax().max(1.0);
    for ridge in RIDGE_SCHEDULE {
        let mut regularized = q.clone();
        for i in 0..q.nrows() {
            regularized[(i, i)] += ridge * scale;
        }
        if let Some(chol) = Cholesky::new(regularized) {
            return Ok(chol);
        }
    }
    Err(QpError::NotPositiveDefinite)
}

/// Solve a strictly convex QP. Deterministic: identical instances produce
/// bit-identical solutions. Infeasibility is reported in the solution
/// status, not as an error.
pub fn solve_qp(qp: &QpInstance) -> Result<QpSolution, QpError> {
    let n = qp.num_vars();
    assert_eq!(qp.hessian.nrows(), n, "square cost matrix");
    assert_eq!(qp.hessian.ncols(), n, "square cost matrix");
    let rows = qp.rows();
    let chol = factor_hessian(&qp.hessian)?;

    let mut z = -chol.solve(&qp.linear);
    let mut active: Vec<usize> = Vec::new();
    let mut duals: Vec<f64> = Vec::new();

    let max_outer = 50 * (n + rows.len()) + 200;
    for _ in 0..max_outer {
        // Most violated inactive constraint; ties keep the smallest index.
        let mut worst: Option<(usize, f64)> = None;
        for (i, row) in rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let slack = row.coeffs.dot(&z) - row.rhs;
            let tol = VIOLATION_TOL * (1.0 + row.rhs.abs());
            if slack < -tol && worst.map_or(true, |(_, s)| slack < s) {
                worst = Some((i, slack));
            }
        }
        let Some((p, _)) = worst else {
            let mut multipliers = vec![0.0; rows.len()];
            for (idx, &row) in active.iter().enumerate() {
                multipliers[row] = duals[idx];
            }
            let objective = qp.objective(&z);
            return Ok(QpSolution {
                z,
                objective,
                status: QpStatus::Optimal,
                multipliers,
            });
        };

        let normal = &rows[p].coeffs;
        let mut incoming_dual = 0.0;
        let max_inner = rows.len() + n + 4;
        let mut inner = 0;
        loop {
            inner += 1;
            if inner > max_inner {
                return Err(QpError::IterationLimit);
            }

            // Primal direction d and dual change rates r for the active set.
            let qinv_np = chol.solve(normal);
            let (direction, rates) = if active.is_empty() {
                (qinv_np.clone(), DVector::zeros(0))
            } else {
                let k = active.len();
                let mut normals = DMatrix::zeros(n, k);
                for (col, &row) in active.iter().enumerate() {
                    normals.set_column(col, &rows[row].coeffs);
                }
                let qinv_normals = chol.solve(&normals);
                let gram = normals.transpose() * &qinv_normals;
                let gram_chol = Cholesky::new(gram).ok_or(QpError::NumericalFailure)?;
                let rates = gram_chol.solve(&(normals.transpose() * &qinv_np));
                let direction = &qinv_np - &qinv_normals * &rates;
                (direction, rates)
            };

            let direction_scale = 1.0 + qinv_np.norm();
            let full_step_possible = direction.norm() > ZERO_DIRECTION_TOL * direction_scale;

            // Dual blocking step: smallest ratio over active rows with
            // positive rate; ties keep the smallest position.
            let mut blocking: Option<(usize, f64)> = None;
            for (idx, &rate) in rates.iter().enumerate() {
                if rate > ZERO_DIRECTION_TOL {
                    let ratio = duals[idx] / rate;
                    if blocking.map_or(true, |(_, t)| ratio < t) {
                        blocking = Some((idx, ratio));
                    }
                }
            }
            let t1 = blocking.map_or(f64::INFINITY, |(_, t)| t);

            let t2 = if full_step_possible {
                let slope = normal.dot(&direction);
                if slope <= 0.0 {
                    f64::INFINITY
                } else {
                    -(normal.dot(&z) - rows[p].rhs) / slope
                }
            } else {
                f64::INFINITY
            };

            if t1 == f64::INFINITY && t2 == f64::INFINITY {
                // No direction improves the violated constraint: infeasible.
                return Ok(QpSolution {
                    z,
                    objective: f64::INFINITY,
                    status: QpStatus::Infeasible,
                    multipliers: Vec::new(),
                });
            }

            let t = t1.min(t2);
            if full_step_possible {
                z += &direction * t;
            }
            for (idx, &rate) in rates.iter().enumerate() {
                duals[idx] -= t * rate;
            }
            incoming_dual += t;

            if t == t2 && full_step_possible {
                active.push(p);
                duals.push(incoming_dual);
                break;
            }
            // Blocked by an active constraint's multiplier: drop it and retry.
            let (drop_idx, _) = blocking.expect("t1 finite implies a blocking row");
            active.remove(drop_idx);
            duals.remove(drop_idx);
        }
    }
    Err(QpError::IterationLimit)
}

/// KKT residuals of a claimed-optimal solution, all as max norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `||Q z + c - A^T lambda||_inf`.
    pub stationarity: f64,
    /// Largest constraint violation `max(0, b - a . z)`.
    pub primal_feasibility: f64,
    /// Largest `|lambda_i (a_i . z - b_i)|`.
    pub complementary_slackness: f64,
    /// Largest `max(0, -lambda_i)`.
    pub dual_feasibility: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.complementary_slackness)
            .max(self.dual_feasibility)
    }
}

/// Evaluate the KKT residuals of `solution` for `qp`.
pub fn verify_kkt(qp: &QpInstance, solution: &QpSolution) -> KktReport {
    let rows = qp.rows();
    assert_eq!(
        solution.multipliers.len(),
        rows.len(),
        "multipliers must align with the expanded rows"
    );
    let mut gradient = &qp.hessian * &solution.z + &qp.linear;
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for (row, &lambda) in rows.iter().zip(&solution.multipliers) {
        let slack = row.coeffs.dot(&solution.z) - row.rhs;
        gradient -= &row.coeffs * lambda;
        primal = primal.max(-slack);
        comp = comp.max((lambda * slack).abs());
        dual = dual.max(-lambda);
    }
    KktReport {
        stationarity: gradient.amax(),
        primal_feasibility: primal.max(0.0),
        complementary_slackness: comp,
        dual_feasibility: dual.max(0.0),
    }
}
