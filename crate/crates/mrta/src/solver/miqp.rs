//! Mixed-integer layer over binary task assignments.
//!
//! With the assignment fixed, the joint problem separates into one small QP
//! per robot plus a coupling cost that depends only on the assignment. The
//! solver therefore pre-solves the `N x M` table of per-robot QPs and
//! searches the assignment space exactly: exhaustive enumeration by default,
//! or a depth-first branch-and-bound that prunes with the table's row minima
//! (valid because the coupling cost is nonnegative). Both strategies visit
//! assignments in lexicographic order and only replace the incumbent on
//! strict improvement, so ties resolve to the lexicographically smallest
//! assignment.

use std::fmt;

use super::qp::{solve_qp, QpError, QpInstance, QpSolution, QpStatus};

/// Bound on `M^N` for the exhaustive strategy.
pub const ENUMERATION_LIMIT: u64 = 4096;

/// A joint allocation/control instance in decomposed form.
///
/// `robot_qp(i, j)` must build robot `i`'s QP when it is assigned task `j`;
/// `coupling` maps a full assignment (task index per robot) to a nonnegative
/// cost.
pub struct MiqpInstance<R, C>
where
    R: Fn(usize, usize) -> QpInstance,
    C: Fn(&[usize]) -> f64,
{
    pub num_robots: usize,
    pub num_tasks: usize,
    pub robot_qp: R,
    pub coupling: C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiqpStrategy {
    /// Exhaustively enumerate every assignment (the reference strategy).
    Enumerate,
    /// Depth-first branch-and-bound over partial assignments.
    BranchAndBound,
}

/// Optimal assignment with the per-robot solutions under it.
#[derive(Debug, Clone)]
pub struct MiqpSolution {
    /// Assigned task index per robot.
    pub assignment: Vec<usize>,
    pub per_robot: Vec<QpSolution>,
    /// Total cost: per-robot objectives plus the coupling term.
    pub objective: f64,
}

#[derive(Debug)]
pub enum MiqpError {
    Qp(QpError),
    /// Every assignment had at least one infeasible robot QP.
    AllInfeasible,
    /// The instance exceeds the enumeration limit.
    TooManyAssignments { combinations: u64 },
}

impl fmt::Display for MiqpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MiqpError::Qp(e) => write!(f, "per-robot QP failed: {e}"),
            MiqpError::AllInfeasible => write!(f, "every assignment is infeasible"),
            MiqpError::TooManyAssignments { combinations } => {
                write!(f, "{combinations} assignments exceed the enumeration limit")
            }
        }
    }
}

impl std::error::Error for MiqpError {}

impl From<QpError> for MiqpError {
    fn from(e: QpError) -> Self {
        MiqpError::Qp(e)
    }
}

fn assignment_count(num_robots: usize, num_tasks: usize) -> u64 {
    (num_tasks as u64).saturating_pow(num_robots as u32)
}

/// Solve the table of per-robot QPs; infeasible cells carry infinite cost.
fn solve_table<R, C>(inst: &MiqpInstance<R, C>) -> Result<Vec<Vec<QpSolution>>, MiqpError>
where
    R: Fn(usize, usize) -> QpInstance,
    C: Fn(&[usize]) -> f64,
{
    (0..inst.num_robots)
        .map(|i| {
            (0..inst.num_tasks)
                .map(|j| solve_qp(&(inst.robot_qp)(i, j)).map_err(MiqpError::from))
                .collect()
        })
        .collect()
}

/// Exact minimization over all assignments.
pub fn solve_miqp<R, C>(
    inst: &MiqpInstance<R, C>,
    strategy: MiqpStrategy,
) -> Result<MiqpSolution, MiqpError>
where
    R: Fn(usize, usize) -> QpInstance,
    C: Fn(&[usize]) -> f64,
{
    assert!(inst.num_robots >= 1 && inst.num_tasks >= 1);
    let combinations = assignment_count(inst.num_robots, inst.num_tasks);
    if strategy == MiqpStrategy::Enumerate && combinations > ENUMERATION_LIMIT {
        return Err(MiqpError::TooManyAssignments { combinations });
    }
    let table = solve_table(inst)?;

    let best = match strategy {
        MiqpStrategy::Enumerate => enumerate(inst, &table),
        MiqpStrategy::BranchAndBound => branch_and_bound(inst, &table),
    };
    let Some((assignment, objective)) = best else {
        return Err(MiqpError::AllInfeasible);
    };
    let per_robot = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| table[i][j].clone())
        .collect();
    Ok(MiqpSolution {
        assignment,
        per_robot,
        objective,
    })
}

fn enumerate<R, C>(
    inst: &MiqpInstance<R, C>,
    table: &[Vec<QpSolution>],
) -> Option<(Vec<usize>, f64)>
where
    R: Fn(usize, usize) -> QpInstance,
    C: Fn(&[usize]) -> f64,
{
    let mut assignment = vec![0usize; inst.num_robots];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let qp_cost: f64 = assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| table[i][j].objective)
            .sum();
        if qp_cost.is_finite() {
            let total = qp_cost + (inst.coupling)(&assignment);
            if best.as_ref().map_or(true, |(_, b)| total < *b) {
                best = Some((assignment.clone(), total));
            }
        }
        // Advance the lexicographic odometer.
        let mut pos = inst.num_robots;
        loop {
            if pos == 0 {
                return best;
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < inst.num_tasks {
                break;
            }
            assignment[pos] = 0;
        }
    }
}

fn branch_and_bound<R, C>(
    inst: &MiqpInstance<R, C>,
    table: &[Vec<QpSolution>],
) -> Option<(Vec<usize>, f64)>
where
    R: Fn(usize, usize) -> QpInstance,
    C: Fn(&[usize]) -> f64,
{
    // Cheapest completion of each suffix of unassigned robots, ignoring the
    // (nonnegative) coupling term.
    let row_min: Vec<f64> = table
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| s.objective)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut suffix_min = vec![0.0; inst.num_robots + 1];
    for i in (0..inst.num_robots).rev() {
        suffix_min[i] = suffix_min[i + 1] + row_min[i];
    }

    struct Search<'a, C2: Fn(&[usize]) -> f64> {
        table: &'a [Vec<QpSolution>],
        suffix_min: &'a [f64],
        num_tasks: usize,
        coupling: &'a C2,
        best: Option<(Vec<usize>, f64)>,
    }

    impl<C2: Fn(&[usize]) -> f64> Search<'_, C2> {
        fn dfs(&mut self, assignment: &mut Vec<usize>, partial_cost: f64) {
            let depth = assignment.len();
            if let Some((_, incumbent)) = &self.best {
                if partial_cost + self.suffix_min[depth] >= *incumbent {
                    return;
                }
            }
            if depth == self.table.len() {
                let total = partial_cost + (self.coupling)(assignment);
                if self.best.as_ref().map_or(true, |(_, b)| total < *b) {
                    self.best = Some((assignment.clone(), total));
                }
                return;
            }
            for j in 0..self.num_tasks {
                let cost = self.table[depth][j].objective;
                if !cost.is_finite() {
                    continue;
                }
                assignment.push(j);
                self.dfs(assignment, partial_cost + cost);
                assignment.pop();
            }
        }
    }

    let mut search = Search {
        table,
        suffix_min: &suffix_min,
        num_tasks: inst.num_tasks,
        coupling: &inst.coupling,
        best: None,
    };
    search.dfs(&mut Vec::with_capacity(inst.num_robots), 0.0);
    search.best
}

/// Convenience check used by tests: whether every per-robot solution in a
/// MIQP solution is optimal.
pub fn all_optimal(solution: &MiqpSolution) -> bool {
    solution
        .per_robot
        .iter()
        .all(|s| s.status == QpStatus::Optimal)
}
