//! Per-step assembly of the joint allocation/control problem.
//!
//! Every control period each robot gets one decision block with variables
//! `[u_i; delta_i]`: its control input and one slack per task. The block
//! cost is `||u_i||^2 + l * delta_i^T S_i delta_i` with `S_i` the diagonal
//! of the robot's specializations, so slacks on tasks a robot is unsuited
//! for go unpenalized. Constraints per block: one execution row per task
//! (robust or nominal), the slack prioritization rows, input box limits,
//! and slack bounds. Blocks couple only through the assignment-dependent
//! distribution-matching cost, which is what the mixed-integer layer
//! searches over.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{nominal_constraint, robust_constraint, BarrierTask, ClassKappa};
use crate::dynamics::{ControlAffineModel, DisturbanceHull};
use crate::solver::{
    solve_miqp, LinearInequality, MiqpError, MiqpInstance, MiqpStrategy, QpInstance,
};

/// Whether execution constraints account for the learned disturbance hulls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    Nominal,
    Robust,
}

/// Team-level weights and limits for the per-step problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamConfig {
    /// Weight `C` on the distribution-matching cost.
    pub coupling_weight: f64,
    /// Weight `l` on the specialization-weighted slack cost.
    pub slack_weight: f64,
    /// Prioritization ratio `kappa > 1` between assigned and other slacks.
    pub kappa: f64,
    /// Class-K slope for the execution constraints.
    pub gamma0: f64,
    /// Desired distribution of the team over tasks, length `M`.
    pub desired_distribution: DVector<f64>,
    /// Upper bound on every slack variable.
    pub delta_max: f64,
    /// Optional global cap on input components, on top of the model limits.
    pub input_bound: Option<f64>,
    /// Optional diagonal of the metric weighting the distribution mismatch;
    /// identity when absent.
    pub distribution_metric: Option<DVector<f64>>,
    pub mode: ExecutionMode,
}

impl TeamConfig {
    /// Defaults for an `M`-task team with a uniform desired distribution.
    pub fn with_uniform_distribution(num_tasks: usize, mode: ExecutionMode) -> Self {
        TeamConfig {
            coupling_weight: 10.0,
            slack_weight: 1.0,
            kappa: 10.0,
            gamma0: 1.0,
            desired_distribution: DVector::from_element(num_tasks, 1.0 / num_tasks as f64),
            delta_max: 50.0,
            input_bound: None,
            distribution_metric: None,
            mode,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.desired_distribution.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kappa <= 1.0 {
            return Err("kappa must be > 1".into());
        }
        if self.coupling_weight <= 0.0 || self.slack_weight <= 0.0 {
            return Err("coupling_weight and slack_weight must be > 0".into());
        }
        if self.gamma0 <= 0.0 {
            return Err("gamma0 must be > 0".into());
        }
        if self.delta_max <= 0.0 {
            return Err("delta_max must be > 0".into());
        }
        if self.desired_distribution.iter().any(|v| *v < 0.0) {
            return Err("desired_distribution entries must be >= 0".into());
        }
        if let Some(t) = &self.distribution_metric {
            if t.len() != self.num_tasks() {
                return Err("distribution_metric length must equal the task count".into());
            }
            if t.iter().any(|v| *v < 0.0) {
                return Err("distribution_metric entries must be >= 0".into());
            }
        }
        Ok(())
    }
}

/// Big-M encoding of the slack prioritization implication: for every ordered
/// task pair `(m, n)` the row `delta_m - (1/kappa) delta_n <= B (1 - alpha_m)`
/// binds exactly when task `m` is the assigned one.
#[derive(Debug, Clone, PartialEq)]
pub struct PrioritizationEncoding {
    num_tasks: usize,
    kappa: f64,
    big_m: f64,
}

/// Build the prioritization rows for a team configuration.
pub fn build_prioritization(cfg: &TeamConfig) -> PrioritizationEncoding {
    assert!(cfg.kappa > 1.0, "kappa must exceed 1");
    PrioritizationEncoding {
        num_tasks: cfg.num_tasks(),
        kappa: cfg.kappa,
        // Largest possible left-hand side is delta_max + delta_max / kappa,
        // so this keeps unassigned rows strictly vacuous.
        big_m: cfg.delta_max * (1.0 + 1.0 / cfg.kappa),
    }
}

impl PrioritizationEncoding {
    pub fn num_rows(&self) -> usize {
        self.num_tasks * self.num_tasks.saturating_sub(1)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    /// Ordered `(m, n)` pairs in row order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_rows());
        for m in 0..self.num_tasks {
            for n in 0..self.num_tasks {
                if n != m {
                    out.push((m, n));
                }
            }
        }
        out
    }

    /// Row matrix over the slack vector: row for `(m, n)` is
    /// `e_m - (1/kappa) e_n`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.num_rows(), self.num_tasks);
        for (row, (m, n)) in self.pairs().into_iter().enumerate() {
            p[(row, m)] = 1.0;
            p[(row, n)] = -1.0 / self.kappa;
        }
        p
    }

    /// Right-hand side for a robot assigned to `assigned`: zero on its rows,
    /// the big-M constant elsewhere.
    pub fn rhs(&self, assigned: usize) -> DVector<f64> {
        assert!(assigned < self.num_tasks);
        DVector::from_iterator(
            self.num_rows(),
            self.pairs()
                .into_iter()
                .map(|(m, _)| if m == assigned { 0.0 } else { self.big_m }),
        )
    }
}

/// Specialization-weighted distribution of the team over tasks:
/// `[pi_h]_j = (1/N) sum_i s_ij alpha_ij`.
pub fn pi_of_alpha(assignment: &[usize], specializations: &DMatrix<f64>) -> DVector<f64> {
    let num_robots = specializations.nrows();
    let num_tasks = specializations.ncols();
    assert_eq!(assignment.len(), num_robots);
    let mut pi = DVector::zeros(num_tasks);
    for (i, &j) in assignment.iter().enumerate() {
        pi[j] += specializations[(i, j)];
    }
    pi / num_robots as f64
}

/// Distribution-matching cost `C ||pi* - pi_h(alpha)||^2_T`.
fn coupling_cost(cfg: &TeamConfig, assignment: &[usize], specializations: &DMatrix<f64>) -> f64 {
    let pi = pi_of_alpha(assignment, specializations);
    let mut cost = 0.0;
    for j in 0..cfg.num_tasks() {
        let weight = cfg.distribution_metric.as_ref().map_or(1.0, |t| t[j]);
        let gap = cfg.desired_distribution[j] - pi[j];
        cost += weight * gap * gap;
    }
    cfg.coupling_weight * cost
}

/// Joint decision for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    /// Assigned task per robot.
    pub assignment: Vec<usize>,
    pub inputs: Vec<DVector<f64>>,
    pub slacks: Vec<DVector<f64>>,
    pub objective: f64,
}

impl StepDecision {
    /// The assignment as a binary robot-by-task matrix.
    pub fn alpha_matrix(&self, num_tasks: usize) -> DMatrix<f64> {
        let mut alpha = DMatrix::zeros(self.assignment.len(), num_tasks);
        for (i, &j) in self.assignment.iter().enumerate() {
            alpha[(i, j)] = 1.0;
        }
        alpha
    }
}

struct RobotBlock {
    input_dim: usize,
    cost_diagonal: DVector<f64>,
    /// Execution rows over `[u; delta]`: coefficients and bound per task.
    exec_rows: Vec<(DVector<f64>, f64)>,
    bounds: Vec<(f64, f64)>,
}

fn build_robot_block(
    cfg: &TeamConfig,
    model: &ControlAffineModel,
    tasks: &[BarrierTask],
    x: &DVector<f64>,
    spec_row: &[f64],
    hull: Option<&DisturbanceHull>,
) -> RobotBlock {
    let m = model.input_dim();
    let num_tasks = tasks.len();
    let dim = m + num_tasks;
    let kappa_fn = ClassKappa::new(cfg.gamma0);

    let mut cost_diagonal = DVector::zeros(dim);
    for k in 0..m {
        cost_diagonal[k] = 2.0;
    }
    for (j, s) in spec_row.iter().enumerate() {
        cost_diagonal[m + j] = 2.0 * cfg.slack_weight * s;
    }

    let exec_rows = tasks
        .iter()
        .enumerate()
        .map(|(j, task)| {
            let constraint = match cfg.mode {
                ExecutionMode::Nominal => nominal_constraint(task, model, x, &kappa_fn, Some(j)),
                ExecutionMode::Robust => robust_constraint(
                    task,
                    model,
                    x,
                    &kappa_fn,
                    hull.expect("robust mode requires a disturbance hull per robot"),
                    Some(j),
                ),
            };
            let mut coeffs = DVector::zeros(dim);
            for k in 0..m {
                coeffs[k] = constraint.coeff[k];
            }
            coeffs[m + j] = 1.0; // a . u >= b - delta_j
            (coeffs, constraint.bound)
        })
        .collect();

    let limits = model.input_limits();
    let mut bounds = Vec::with_capacity(dim);
    for k in 0..m {
        let lim = cfg.input_bound.map_or(limits[k], |b| limits[k].min(b));
        bounds.push((-lim, lim));
    }
    for _ in 0..num_tasks {
        bounds.push((0.0, cfg.delta_max));
    }

    RobotBlock {
        input_dim: m,
        cost_diagonal,
        exec_rows,
        bounds,
    }
}

fn block_qp(
    block: &RobotBlock,
    encoding: &PrioritizationEncoding,
    assigned: usize,
) -> QpInstance {
    let dim = block.cost_diagonal.len();
    let m = block.input_dim;
    let mut inequalities: Vec<LinearInequality> = block
        .exec_rows
        .iter()
        .map(|(coeffs, bound)| LinearInequality {
            coeffs: coeffs.clone(),
            rhs: *bound,
        })
        .collect();

    // Prioritization rows P delta <= Omega(alpha), flipped into >= form.
    let p = encoding.matrix();
    let omega = encoding.rhs(assigned);
    for row in 0..encoding.num_rows() {
        let mut coeffs = DVector::zeros(dim);
        for j in 0..encoding.num_tasks {
            coeffs[m + j] = -p[(row, j)];
        }
        inequalities.push(LinearInequality {
            coeffs,
            rhs: -omega[row],
        });
    }

    QpInstance {
        hessian: DMatrix::from_diagonal(&block.cost_diagonal),
        linear: DVector::zeros(dim),
        inequalities,
        bounds: Some(block.bounds.clone()),
    }
}

/// Assemble the decomposed joint problem for one control step.
///
/// `hulls` must hold one hull per robot in robust mode and is ignored in
/// nominal mode.
pub fn build_step_problem<'a>(
    cfg: &'a TeamConfig,
    models: &[ControlAffineModel],
    tasks: &[BarrierTask],
    states: &[DVector<f64>],
    specializations: &'a DMatrix<f64>,
    hulls: Option<&[DisturbanceHull]>,
) -> MiqpInstance<impl Fn(usize, usize) -> QpInstance + 'a, impl Fn(&[usize]) -> f64 + 'a> {
    let num_robots = models.len();
    let num_tasks = tasks.len();
    assert_eq!(states.len(), num_robots, "one state per robot");
    assert_eq!(specializations.nrows(), num_robots);
    assert_eq!(specializations.ncols(), num_tasks);
    assert_eq!(cfg.num_tasks(), num_tasks, "desired distribution length");
    if cfg.mode == ExecutionMode::Robust {
        let hulls = hulls.expect("robust mode requires disturbance hulls");
        assert_eq!(hulls.len(), num_robots, "one hull per robot");
    }

    let encoding = build_prioritization(cfg);
    let blocks: Vec<RobotBlock> = (0..num_robots)
        .map(|i| {
            let spec_row: Vec<f64> = (0..num_tasks).map(|j| specializations[(i, j)]).collect();
            build_robot_block(
                cfg,
                &models[i],
                tasks,
                &states[i],
                &spec_row,
                hulls.map(|h| &h[i]),
            )
        })
        .collect();

    MiqpInstance {
        num_robots,
        num_tasks,
        robot_qp: move |i, j| block_qp(&blocks[i], &encoding, j),
        coupling: move |assignment| coupling_cost(cfg, assignment, specializations),
    }
}

/// Solve one control step: build the joint problem and minimize it exactly.
pub fn decide(
    cfg: &TeamConfig,
    models: &[ControlAffineModel],
    tasks: &[BarrierTask],
    states: &[DVector<f64>],
    specializations: &DMatrix<f64>,
    hulls: Option<&[DisturbanceHull]>,
    strategy: MiqpStrategy,
) -> Result<StepDecision, MiqpError> {
    let instance = build_step_problem(cfg, models, tasks, states, specializations, hulls);
    let solution = solve_miqp(&instance, strategy)?;
    let num_tasks = tasks.len();
    let mut inputs = Vec::with_capacity(models.len());
    let mut slacks = Vec::with_capacity(models.len());
    for (i, robot_solution) in solution.per_robot.iter().enumerate() {
        let m = models[i].input_dim();
        inputs.push(DVector::from_iterator(
            m,
            robot_solution.z.iter().take(m).copied(),
        ));
        slacks.push(DVector::from_iterator(
            num_tasks,
            robot_solution.z.iter().skip(m).take(num_tasks).copied(),
        ));
    }
    Ok(StepDecision {
        assignment: solution.assignment,
        inputs,
        slacks,
        objective: solution.objective,
    })
}
