//! Closed-loop simulation: data collection, the control loop, and metrics.
//!
//! A run alternates sensing, joint allocation/control (the per-step MIQP),
//! actuation through the ground-truth dynamics, and the specialization
//! update. In robust mode the execution constraints and the progress scores
//! use per-robot disturbance hulls, usually produced by GP models fitted
//! from a pre-run data-collection sweep of the arena.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::allocator::{decide, ExecutionMode, StepDecision};
use crate::dynamics::{self, DisturbanceHull, DisturbanceSource};
use crate::gp::{self, GpDataset, GpError, GpModel, SquaredExponential};
use crate::scenario::Scenario;
use crate::solver::MiqpError;
use crate::solver::MiqpStrategy;
use crate::specialization::{baseline_delta, robust_delta, ProgressSample, SpecializationMatrix};

/// Where the per-robot disturbance hulls come from in robust mode.
#[derive(Debug, Clone)]
pub enum HullSource {
    /// Singleton zero hulls: robust constraints degenerate to nominal ones.
    Zero,
    /// Fixed hulls, one per robot, used at every step.
    Fixed(Vec<DisturbanceHull>),
    /// Per-dimension GP models per robot, queried at the current state.
    Learned(Vec<Vec<GpModel>>),
}

/// Everything recorded about one control step. States and barrier values
/// refer to the pre-step instant; specializations and deltas reflect the
/// update applied after stepping.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Time at the pre-step instant (s).
    pub time: f64,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<Vector2<f64>>,
    pub assignment: Vec<usize>,
    /// Inputs commanded by the optimizer (saturation happens at actuation).
    pub inputs: Vec<DVector<f64>>,
    pub slacks: Vec<DVector<f64>>,
    pub objective: f64,
    /// Barrier values, robot by task.
    pub barrier_values: DMatrix<f64>,
    /// Sum over robots of the squared assigned-task energy.
    pub energy: f64,
    pub specializations: DMatrix<f64>,
    pub deltas: DMatrix<f64>,
}

/// Append-only log of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub scenario_name: String,
    pub mode: ExecutionMode,
    pub dt: f64,
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn initial_energy(&self) -> f64 {
        self.records.first().map_or(0.0, |r| r.energy)
    }

    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.energy)
    }

    pub fn final_specializations(&self) -> Option<&DMatrix<f64>> {
        self.records.last().map(|r| &r.specializations)
    }

    /// Final specialization of a robot toward its final assigned task.
    pub fn final_assigned_specialization(&self, robot: usize) -> Option<f64> {
        let last = self.records.last()?;
        Some(last.specializations[(robot, last.assignment[robot])])
    }

    /// Write one CSV per record type plus a key-value summary into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_states_csv(&dir.join("states.csv"))?;
        self.write_decisions_csv(&dir.join("decisions.csv"))?;
        self.write_barriers_csv(&dir.join("barriers.csv"))?;
        self.write_energy_csv(&dir.join("energy.csv"))?;
        self.write_specializations_csv(&dir.join("specializations.csv"))?;
        self.write_summary(&dir.join("summary.txt"))?;
        Ok(())
    }

    fn write_states_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# robot states per step; x_m/y_m in metres, heading_rad in radians")?;
        writeln!(f, "# heading_rad is 0 for robots without an orientation state")?;
        writeln!(f, "# out_x_m/out_y_m: planar output point the tasks are defined on")?;
        writeln!(f, "step,time_s,robot,x_m,y_m,heading_rad,out_x_m,out_y_m")?;
        for r in &self.records {
            for (i, x) in r.states.iter().enumerate() {
                let heading = if x.len() > 2 { x[2] } else { 0.0 };
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{}",
                    r.step, r.time, i, x[0], x[1], heading, r.outputs[i][0], r.outputs[i][1]
                )?;
            }
        }
        Ok(())
    }

    fn write_decisions_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let num_tasks = self
            .records
            .first()
            .map_or(0, |r| r.barrier_values.ncols());
        writeln!(f, "# per-robot decisions; u0/u1 in model input units, slacks dimensionless")?;
        let slack_cols: Vec<String> = (0..num_tasks).map(|j| format!("slack{j}")).collect();
        writeln!(f, "step,time_s,robot,assigned_task,u0,u1,{}", slack_cols.join(","))?;
        for r in &self.records {
            for i in 0..r.inputs.len() {
                let slacks: Vec<String> =
                    r.slacks[i].iter().map(|v| format!("{v}")).collect();
                writeln!(
                    f,
                    "{},{},{},{},{},{},{}",
                    r.step,
                    r.time,
                    i,
                    r.assignment[i],
                    r.inputs[i][0],
                    r.inputs[i][1],
                    slacks.join(",")
                )?;
            }
        }
        Ok(())
    }

    fn write_barriers_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# barrier value h (m^2, nonpositive) per robot-task pair")?;
        writeln!(f, "step,time_s,robot,task,h")?;
        for r in &self.records {
            for i in 0..r.barrier_values.nrows() {
                for j in 0..r.barrier_values.ncols() {
                    writeln!(f, "{},{},{},{},{}", r.step, r.time, i, j, r.barrier_values[(i, j)])?;
                }
            }
        }
        Ok(())
    }

    fn write_energy_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# energy: sum over robots of squared assigned-task energy (m^4)")?;
        writeln!(f, "# objective: optimal joint cost of the step problem")?;
        writeln!(f, "step,time_s,energy,objective")?;
        for r in &self.records {
            writeln!(f, "{},{},{},{}", r.step, r.time, r.energy, r.objective)?;
        }
        Ok(())
    }

    fn write_specializations_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# specialization s in [0,1] and its per-step progress score delta")?;
        writeln!(f, "step,time_s,robot,task,s,delta")?;
        for r in &self.records {
            for i in 0..r.specializations.nrows() {
                for j in 0..r.specializations.ncols() {
                    writeln!(
                        f,
                        "{},{},{},{},{},{}",
                        r.step, r.time, i, j,
                        r.specializations[(i, j)],
                        r.deltas[(i, j)]
                    )?;
                }
            }
        }
        Ok(())
    }

    fn write_summary(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let events = detect_reallocations(self);
        writeln!(f, "scenario = {}", self.scenario_name)?;
        writeln!(f, "mode = {}", mode_name(self.mode))?;
        writeln!(f, "steps = {}", self.records.len())?;
        writeln!(f, "initial_energy = {}", self.initial_energy())?;
        writeln!(f, "final_energy = {}", self.final_energy())?;
        let ratio = if self.initial_energy() > 0.0 {
            self.final_energy() / self.initial_energy()
        } else {
            0.0
        };
        writeln!(f, "energy_ratio = {ratio}")?;
        writeln!(f, "reallocation_count = {}", events.len())?;
        match events.first() {
            Some(e) => writeln!(f, "first_reallocation_step = {}", e.step)?,
            None => writeln!(f, "first_reallocation_step = none")?,
        }
        if let Some(last) = self.records.last() {
            for i in 0..last.assignment.len() {
                writeln!(
                    f,
                    "final_specialization_robot{} = {}",
                    i,
                    last.specializations[(i, last.assignment[i])]
                )?;
            }
        }
        Ok(())
    }
}

pub fn mode_name(mode: ExecutionMode) -> &'static str {
    match mode {
        ExecutionMode::Nominal => "nominal",
        ExecutionMode::Robust => "robust",
    }
}

/// An assignment change for one robot between consecutive steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReallocationEvent {
    pub step: usize,
    pub robot: usize,
    pub previous_task: usize,
    pub new_task: usize,
}

/// Every step at which any robot's assignment changed.
pub fn detect_reallocations(log: &RunLog) -> Vec<ReallocationEvent> {
    let mut events = Vec::new();
    for pair in log.records.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        for robot in 0..prev.assignment.len() {
            if prev.assignment[robot] != cur.assignment[robot] {
                events.push(ReallocationEvent {
                    step: cur.step,
                    robot,
                    previous_task: prev.assignment[robot],
                    new_task: cur.assignment[robot],
                });
            }
        }
    }
    events
}

/// First step at which `robot` switches away from a task that some other
/// robot holds at that same step (its task was handed off).
pub fn first_task_handoff(log: &RunLog, robot: usize) -> Option<ReallocationEvent> {
    for pair in log.records.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let old = prev.assignment[robot];
        if cur.assignment[robot] != old
            && cur
                .assignment
                .iter()
                .enumerate()
                .any(|(i, &j)| i != robot && j == old)
        {
            return Some(ReallocationEvent {
                step: cur.step,
                robot,
                previous_task: old,
                new_task: cur.assignment[robot],
            });
        }
    }
    None
}

/// First step at which any robot other than `excluding` is assigned `task`.
/// With `task` being the disturbed robot's initial task, this marks the
/// moment the allocator hands its job to a teammate.
pub fn first_adoption(log: &RunLog, task: usize, excluding: usize) -> Option<usize> {
    log.records.iter().find_map(|r| {
        r.assignment
            .iter()
            .enumerate()
            .any(|(i, &j)| i != excluding && j == task)
            .then_some(r.step)
    })
}

/// A run abort: the step problem failed, with the log up to that point.
#[derive(Debug)]
pub struct RunFailure {
    pub error: MiqpError,
    pub partial: RunLog,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run aborted at step {}: {}",
            self.partial.records.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r > std::f64::consts::PI {
        r -= two_pi;
    } else if r < -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

/// Finite-difference state velocity with angle unwrapping for the heading.
fn finite_difference_rate(
    model: &crate::dynamics::ControlAffineModel,
    before: &DVector<f64>,
    after: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let mut rate = (after - before) / dt;
    if matches!(model, crate::dynamics::ControlAffineModel::Unicycle(_)) {
        rate[2] = wrap_angle(after[2] - before[2]) / dt;
    }
    rate
}

/// Boustrophedon waypoints over the arena at the configured spacing: cell
/// centers row by row, alternating direction.
fn sweep_waypoints(scenario: &Scenario) -> Vec<Vector2<f64>> {
    let spacing = scenario.gp.sweep_spacing;
    let arena = &scenario.arena;
    let mut xs = Vec::new();
    let mut x = arena.x_min + spacing / 2.0;
    while x < arena.x_max {
        xs.push(x);
        x += spacing;
    }
    let mut ys = Vec::new();
    let mut y = arena.y_min + spacing / 2.0;
    while y < arena.y_max {
        ys.push(y);
        y += spacing;
    }
    let mut waypoints = Vec::with_capacity(xs.len() * ys.len());
    for (row, y) in ys.iter().enumerate() {
        if row % 2 == 0 {
            for x in &xs {
                waypoints.push(Vector2::new(*x, *y));
            }
        } else {
            for x in xs.iter().rev() {
                waypoints.push(Vector2::new(*x, *y));
            }
        }
    }
    waypoints
}

/// Output-point speed the sweep controller commands at most; keeps the
/// inverse map within the input limits.
fn sweep_speed_cap(model: &crate::dynamics::ControlAffineModel) -> f64 {
    match model {
        crate::dynamics::ControlAffineModel::Unicycle(m) => {
            0.9 * m.v_max.min(m.lookahead * m.w_max)
        }
        crate::dynamics::ControlAffineModel::SingleIntegrator(m) => 0.9 * m.v_max,
        crate::dynamics::ControlAffineModel::Custom(_) => 0.1,
    }
}

/// Proportional tracking of a waypoint through the output map.
fn sweep_input(
    model: &crate::dynamics::ControlAffineModel,
    x: &DVector<f64>,
    waypoint: &Vector2<f64>,
) -> DVector<f64> {
    const GAIN: f64 = 1.5; // 1/s
    let p = model.output(x);
    let mut pdot = (waypoint - p) * GAIN;
    let cap = sweep_speed_cap(model);
    let speed = pdot.norm();
    if speed > cap {
        pdot *= cap / speed;
    }
    let u = match model {
        crate::dynamics::ControlAffineModel::Unicycle(m) => m.inputs_for_output_velocity(x, &pdot),
        _ => DVector::from_vec(vec![pdot[0], pdot[1]]),
    };
    model.saturate(&u)
}

/// Drive every robot along a deterministic arena sweep under the true
/// dynamics, logging states, commanded inputs, and residual labels from
/// finite-difference velocities.
pub fn collect_training_data(scenario: &Scenario) -> Vec<GpDataset> {
    let waypoints = sweep_waypoints(scenario);
    let reach_tol = 0.25 * scenario.gp.sweep_spacing;

    scenario
        .robots
        .iter()
        .map(|robot| {
            let mut dataset = GpDataset::default();
            let mut x = robot.initial_state.clone();
            let mut log_step = |x: &DVector<f64>, waypoint: &Vector2<f64>| {
                let u = sweep_input(&robot.model, x, waypoint);
                let next = dynamics::step(
                    &robot.model,
                    DisturbanceSource::GroundTruth {
                        disturbances: &scenario.disturbances,
                        kind: &robot.kind,
                    },
                    x,
                    &u,
                    scenario.dt,
                );
                let rate = finite_difference_rate(&robot.model, x, &next, scenario.dt);
                let label = gp::collect_label(&robot.model, x, &u, &rate)
                    .expect("sweep dimensions are consistent");
                dataset.push(x.clone(), u, label);
                next
            };
            let cap = sweep_speed_cap(&robot.model);
            for waypoint in &waypoints {
                // Budget twice the straight-line travel time plus slack, so
                // stalled waypoints (e.g. inside a strong disturbance) are
                // skipped instead of hanging the sweep.
                let distance = (waypoint - robot.model.output(&x)).norm();
                let timeout = ((2.0 * distance / cap + 2.0) / scenario.dt).ceil() as usize;
                for _ in 0..timeout {
                    let p = robot.model.output(&x);
                    if (waypoint - p).norm() < reach_tol {
                        break;
                    }
                    x = log_step(&x, waypoint);
                }
            }
            // A few settling steps at the last waypoint so the final cell's
            // interior states make it into the log too.
            if let Some(last) = waypoints.last() {
                for _ in 0..10 {
                    x = log_step(&x, last);
                }
            }
            dataset
        })
        .collect()
}

fn grid_candidates(base: SquaredExponential) -> Vec<SquaredExponential> {
    let mut out = Vec::new();
    for ls in [0.5, 1.0, 2.0] {
        for sv in [0.25, 1.0, 4.0] {
            out.push(SquaredExponential {
                signal_variance: base.signal_variance * sv,
                lengthscale: base.lengthscale * ls,
                noise_variance: base.noise_variance,
            });
        }
    }
    out
}

/// Fit the per-robot GP models from collected datasets, decimating to the
/// configured point budget first.
pub fn fit_models(
    scenario: &Scenario,
    datasets: &[GpDataset],
) -> Result<Vec<Vec<GpModel>>, GpError> {
    assert_eq!(datasets.len(), scenario.num_robots());
    datasets
        .iter()
        .zip(scenario.robots.iter())
        .map(|(full, robot)| {
            let mut reduced = full.decimate(scenario.gp.max_points);
            reduced.inputs = reduced
                .inputs
                .iter()
                .map(|x| gp::regression_input(&robot.model, x))
                .collect();
            if scenario.gp.optimize_hyperparameters {
                gp::fit_with_grid_search(&reduced, &grid_candidates(scenario.gp.kernel))
            } else {
                gp::fit(&reduced, scenario.gp.kernel)
            }
        })
        .collect()
}

fn hulls_for_step(
    scenario: &Scenario,
    source: &HullSource,
    states: &[DVector<f64>],
) -> Vec<DisturbanceHull> {
    match source {
        HullSource::Zero => scenario
            .robots
            .iter()
            .map(|r| DisturbanceHull::zero(r.model.state_dim()))
            .collect(),
        HullSource::Fixed(hulls) => hulls.clone(),
        HullSource::Learned(models) => scenario
            .robots
            .iter()
            .zip(states.iter())
            .zip(models.iter())
            .map(|((robot, x), m)| {
                let query = gp::regression_input(&robot.model, x);
                gp::disturbance_hull(m, &scenario.gp.estimate, &query)
            })
            .collect(),
    }
}

/// Execute the closed loop for the scenario's step count. The mode comes
/// from the scenario's team configuration; `hull_source` feeds the robust
/// constraints and progress scores and is ignored in nominal mode.
pub fn run(scenario: &Scenario, hull_source: &HullSource) -> Result<RunLog, RunFailure> {
    let models: Vec<_> = scenario.robots.iter().map(|r| r.model).collect();
    let num_robots = scenario.num_robots();
    let num_tasks = scenario.num_tasks();
    let robust = scenario.team.mode == ExecutionMode::Robust;

    let mut states: Vec<DVector<f64>> = scenario
        .robots
        .iter()
        .map(|r| r.initial_state.clone())
        .collect();
    let mut spec = SpecializationMatrix::new(scenario.initial_specialization.clone(), scenario.beta1);
    let mut log = RunLog {
        scenario_name: scenario.name.clone(),
        mode: scenario.team.mode,
        dt: scenario.dt,
        records: Vec::with_capacity(scenario.steps),
    };

    for step_index in 0..scenario.steps {
        let hulls = robust.then(|| hulls_for_step(scenario, hull_source, &states));

        let decision: StepDecision = match decide(
            &scenario.team,
            &models,
            &scenario.tasks,
            &states,
            spec.values(),
            hulls.as_deref(),
            MiqpStrategy::Enumerate,
        ) {
            Ok(d) => d,
            Err(error) => return Err(RunFailure { error, partial: log }),
        };

        // Actuate through the true dynamics with saturated inputs.
        let next_states: Vec<DVector<f64>> = (0..num_robots)
            .map(|i| {
                let u_applied = models[i].saturate(&decision.inputs[i]);
                dynamics::step(
                    &models[i],
                    DisturbanceSource::GroundTruth {
                        disturbances: &scenario.disturbances,
                        kind: &scenario.robots[i].kind,
                    },
                    &states[i],
                    &u_applied,
                    scenario.dt,
                )
            })
            .collect();

        // Progress scores against the modeled step, for every pair; the
        // update itself only touches assigned pairs.
        let deltas = DMatrix::from_fn(num_robots, num_tasks, |i, j| {
            let sample = ProgressSample {
                robot: i,
                task: j,
                state_before: &states[i],
                state_after: &next_states[i],
                input: &decision.inputs[i],
                hull_before: hulls.as_ref().map(|h| &h[i]),
                dt: scenario.dt,
            };
            if robust {
                robust_delta(&sample, &scenario.tasks[j], &models[i])
            } else {
                baseline_delta(&sample, &scenario.tasks[j], &models[i])
            }
        });
        spec.update(step_index, &decision.assignment, &deltas);

        let barrier_values = DMatrix::from_fn(num_robots, num_tasks, |i, j| {
            scenario.tasks[j].value_at_state(&models[i], &states[i])
        });
        let energy = (0..num_robots)
            .map(|i| {
                let j = decision.assignment[i];
                let e = -barrier_values[(i, j)];
                e * e
            })
            .sum();

        log.records.push(StepRecord {
            step: step_index,
            time: step_index as f64 * scenario.dt,
            outputs: states
                .iter()
                .zip(models.iter())
                .map(|(x, m)| m.output(x))
                .collect(),
            states: states.clone(),
            assignment: decision.assignment.clone(),
            inputs: decision.inputs.clone(),
            slacks: decision.slacks.clone(),
            objective: decision.objective,
            barrier_values,
            energy,
            specializations: spec.values().clone(),
            deltas,
        });

        states = next_states;
    }

    Ok(log)
}

/// Collect, fit, and run in robust mode; convenience for tests and the CLI.
pub fn run_with_learning(scenario: &Scenario) -> Result<RunLog, RunFailure> {
    let datasets = collect_training_data(scenario);
    let models = fit_models(scenario, &datasets).map_err(|e| RunFailure {
        error: MiqpError::Qp(crate::solver::QpError::NumericalFailure),
        partial: RunLog {
            scenario_name: format!("{} (gp fit failed: {e})", scenario.name),
            mode: scenario.team.mode,
            dt: scenario.dt,
            records: Vec::new(),
        },
    })?;
    run(scenario, &HullSource::Learned(models))
}
