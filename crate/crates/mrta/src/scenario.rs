//! Scenario files: schema, validation, and conversion to runtime types.
//!
//! Scenarios are TOML with nested sections; unknown keys are rejected and
//! every quantity is unit-annotated here once instead of per file:
//! lengths in metres, angles in radians, speeds in m/s and rad/s, times in
//! seconds, disturbance magnitudes in state units per second.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::allocator::{ExecutionMode, TeamConfig};
use crate::barrier::BarrierTask;
use crate::dynamics::{
    ControlAffineModel, GroundTruthDisturbance, Rect, SingleIntegratorModel, UnicycleModel,
};
use crate::gp::{DisturbanceEstimateConfig, SquaredExponential};

#[derive(Debug)]
pub enum ScenarioError {
    Io { path: PathBuf, source: std::io::Error },
    /// TOML-level failure; the message names missing or unknown keys.
    Parse(toml::de::Error),
    /// Schema-level failure naming the offending key.
    Invalid(String),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io { path, source } => {
                write!(f, "cannot read scenario {}: {}", path.display(), source)
            }
            ScenarioError::Parse(e) => write!(f, "scenario parse error: {e}"),
            ScenarioError::Invalid(msg) => write!(f, "invalid scenario: {msg}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RobotSection {
    kind: String,
    model: String,
    /// `[x, y, theta]` for unicycles, `[x, y]` for single integrators.
    start: Vec<f64>,
    #[serde(default)]
    lookahead: Option<f64>,
    v_max: f64,
    #[serde(default)]
    w_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TaskSection {
    goal: [f64; 2],
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DisturbanceSection {
    region: Rect,
    gain: f64,
    affects: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TeamSection {
    #[serde(default = "default_mode")]
    mode: ExecutionMode,
    coupling_weight: f64,
    slack_weight: f64,
    kappa: f64,
    gamma0: f64,
    desired_distribution: Vec<f64>,
    #[serde(default = "default_delta_max")]
    delta_max: f64,
    #[serde(default)]
    input_bound: Option<f64>,
    #[serde(default)]
    distribution_metric: Option<Vec<f64>>,
}

fn default_mode() -> ExecutionMode {
    ExecutionMode::Nominal
}

fn default_delta_max() -> f64 {
    50.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SpecializationSection {
    beta1: f64,
    /// Uniform initial value in [0, 1].
    initial: f64,
    /// Optional explicit initial matrix, row per robot; overrides `initial`.
    #[serde(default)]
    initial_matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GpSection {
    signal_variance: f64,
    lengthscale: f64,
    noise_variance: f64,
    k_c: f64,
    d_max: f64,
    /// Grid spacing of the data-collection sweep (m).
    sweep_spacing: f64,
    /// Cap on training points per robot after decimation.
    max_points: usize,
    #[serde(default)]
    optimize_hyperparameters: bool,
}

/// Thresholds the `compare` command checks; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictThresholds {
    /// Robust-mode final energy must fall below this fraction of the initial.
    pub robust_energy_max_ratio: Option<f64>,
    /// Baseline final energy must stay above this fraction of the initial.
    pub baseline_energy_min_ratio: Option<f64>,
    /// Robot 0's final specialization toward its assigned task, robust mode.
    pub robust_final_specialization_min: Option<f64>,
    /// Robot 0's final specialization toward its assigned task, baseline mode.
    pub baseline_final_specialization_max: Option<f64>,
    /// Robust mode must show a reallocation that hands robot 0's task to
    /// another robot.
    pub require_reallocation_transfer: Option<bool>,
    /// First robust reallocation step must not precede the baseline one.
    pub require_robust_not_earlier: Option<bool>,
    /// Max per-step energy gap between modes, as a fraction of the initial
    /// energy (for undisturbed scenarios).
    pub max_mode_energy_gap_ratio: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    steps: usize,
    dt: f64,
    /// Reserved for randomized scenario variants; the built-in sweep and the
    /// control loop are deterministic and ignore it.
    #[serde(default)]
    seed: u64,
    arena: Rect,
    robots: Vec<RobotSection>,
    #[serde(default)]
    tasks: Vec<TaskSection>,
    #[serde(default)]
    disturbances: Vec<DisturbanceSection>,
    team: TeamSection,
    specialization: SpecializationSection,
    gp: GpSection,
    #[serde(default)]
    verdict: Option<VerdictThresholds>,
}

/// GP learning settings for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GpSettings {
    pub kernel: SquaredExponential,
    pub estimate: DisturbanceEstimateConfig,
    pub sweep_spacing: f64,
    pub max_points: usize,
    pub optimize_hyperparameters: bool,
}

/// One robot: its kind tag, dynamics, and initial state.
#[derive(Debug, Clone)]
pub struct RobotSpec {
    pub kind: String,
    pub model: ControlAffineModel,
    pub initial_state: DVector<f64>,
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub arena: Rect,
    pub robots: Vec<RobotSpec>,
    pub tasks: Vec<BarrierTask>,
    pub disturbances: Vec<GroundTruthDisturbance>,
    pub team: TeamConfig,
    pub gp: GpSettings,
    pub beta1: f64,
    pub initial_specialization: DMatrix<f64>,
    pub verdict: Option<VerdictThresholds>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Scenario::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(ScenarioError::Parse)?;
        file.validate_and_build()
    }

    pub fn num_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

impl ScenarioFile {
    fn validate_and_build(self) -> Result<Scenario, ScenarioError> {
        if self.steps == 0 {
            return Err(invalid("steps: must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt: must be > 0"));
        }
        if self.arena.x_max <= self.arena.x_min || self.arena.y_max <= self.arena.y_min {
            return Err(invalid("arena: empty extent"));
        }
        if self.robots.is_empty() {
            return Err(invalid("robots: at least one robot is required"));
        }
        if self.tasks.is_empty() {
            return Err(invalid("tasks: at least one task is required"));
        }

        let mut robots = Vec::with_capacity(self.robots.len());
        for (idx, r) in self.robots.iter().enumerate() {
            robots.push(build_robot(idx, r, &self.arena)?);
        }

        let tasks: Vec<BarrierTask> = self
            .tasks
            .iter()
            .map(|t| BarrierTask::new(Vector2::new(t.goal[0], t.goal[1])))
            .collect();

        let mut disturbances = Vec::with_capacity(self.disturbances.len());
        for (idx, d) in self.disturbances.iter().enumerate() {
            if !d.gain.is_finite() {
                return Err(invalid(format!("disturbances[{idx}].gain: must be finite")));
            }
            for kind in &d.affects {
                if !robots.iter().any(|r: &RobotSpec| &r.kind == kind) {
                    return Err(invalid(format!(
                        "disturbances[{idx}].affects: no robot of kind '{kind}'"
                    )));
                }
            }
            disturbances.push(GroundTruthDisturbance {
                region: d.region,
                gain: d.gain,
                affected_kinds: d.affects.clone(),
            });
        }

        if self.team.desired_distribution.len() != tasks.len() {
            return Err(invalid(format!(
                "team.desired_distribution: length {} but {} tasks",
                self.team.desired_distribution.len(),
                tasks.len()
            )));
        }
        let team = TeamConfig {
            coupling_weight: self.team.coupling_weight,
            slack_weight: self.team.slack_weight,
            kappa: self.team.kappa,
            gamma0: self.team.gamma0,
            desired_distribution: DVector::from_vec(self.team.desired_distribution.clone()),
            delta_max: self.team.delta_max,
            input_bound: self.team.input_bound,
            distribution_metric: self.team.distribution_metric.clone().map(DVector::from_vec),
            mode: self.team.mode,
        };
        team.validate()
            .map_err(|msg| invalid(format!("team.{msg}")))?;

        let spec = &self.specialization;
        if !(spec.beta1 > 0.0) {
            return Err(invalid("specialization.beta1: must be > 0"));
        }
        let initial_specialization = match &spec.initial_matrix {
            None => {
                if !(0.0..=1.0).contains(&spec.initial) {
                    return Err(invalid("specialization.initial: must lie in [0, 1]"));
                }
                DMatrix::from_element(robots.len(), tasks.len(), spec.initial)
            }
            Some(rows) => {
                if rows.len() != robots.len() || rows.iter().any(|r| r.len() != tasks.len()) {
                    return Err(invalid(
                        "specialization.initial_matrix: shape must be robots x tasks",
                    ));
                }
                if rows.iter().flatten().any(|s| !(0.0..=1.0).contains(s)) {
                    return Err(invalid(
                        "specialization.initial_matrix: entries must lie in [0, 1]",
                    ));
                }
                DMatrix::from_fn(robots.len(), tasks.len(), |i, j| rows[i][j])
            }
        };

        let g = &self.gp;
        if !(g.signal_variance > 0.0 && g.lengthscale > 0.0 && g.noise_variance >= 0.0) {
            return Err(invalid(
                "gp: signal_variance and lengthscale must be > 0, noise_variance >= 0",
            ));
        }
        if !(g.k_c > 0.0) {
            return Err(invalid("gp.k_c: must be > 0"));
        }
        if !(g.d_max > 0.0) {
            return Err(invalid("gp.d_max: must be > 0"));
        }
        if !(g.sweep_spacing > 0.0) {
            return Err(invalid("gp.sweep_spacing: must be > 0"));
        }
        if g.max_points == 0 {
            return Err(invalid("gp.max_points: must be >= 1"));
        }
        let gp = GpSettings {
            kernel: SquaredExponential {
                signal_variance: g.signal_variance,
                lengthscale: g.lengthscale,
                noise_variance: g.noise_variance,
            },
            estimate: DisturbanceEstimateConfig {
                k_c: g.k_c,
                d_max: g.d_max,
            },
            sweep_spacing: g.sweep_spacing,
            max_points: g.max_points,
            optimize_hyperparameters: g.optimize_hyperparameters,
        };

        Ok(Scenario {
            name: self.name,
            steps: self.steps,
            dt: self.dt,
            seed: self.seed,
            arena: self.arena,
            robots,
            tasks,
            disturbances,
            team,
            gp,
            beta1: spec.beta1,
            initial_specialization,
            verdict: self.verdict,
        })
    }
}

fn build_robot(idx: usize, r: &RobotSection, arena: &Rect) -> Result<RobotSpec, ScenarioError> {
    if !(r.v_max > 0.0) {
        return Err(invalid(format!("robots[{idx}].v_max: must be > 0")));
    }
    let (model, expected_dim) = match r.model.as_str() {
        "unicycle" => {
            let lookahead = r
                .lookahead
                .ok_or_else(|| invalid(format!("robots[{idx}].lookahead: required for unicycle")))?;
            if !(lookahead > 0.0) {
                return Err(invalid(format!("robots[{idx}].lookahead: must be > 0")));
            }
            let w_max = r
                .w_max
                .ok_or_else(|| invalid(format!("robots[{idx}].w_max: required for unicycle")))?;
            if !(w_max > 0.0) {
                return Err(invalid(format!("robots[{idx}].w_max: must be > 0")));
            }
            (
                ControlAffineModel::Unicycle(UnicycleModel::new(lookahead, r.v_max, w_max)),
                3,
            )
        }
        "single_integrator" => (
            ControlAffineModel::SingleIntegrator(SingleIntegratorModel { v_max: r.v_max }),
            2,
        ),
        other => {
            return Err(invalid(format!(
                "robots[{idx}].model: unknown model '{other}' (expected 'unicycle' or 'single_integrator')"
            )));
        }
    };
    if r.start.len() != expected_dim {
        return Err(invalid(format!(
            "robots[{idx}].start: expected {expected_dim} components for model '{}'",
            r.model
        )));
    }
    let position = Vector2::new(r.start[0], r.start[1]);
    if !arena.contains(&position) {
        return Err(invalid(format!(
            "robots[{idx}].start: position outside the arena"
        )));
    }
    Ok(RobotSpec {
        kind: r.kind.clone(),
        model,
        initial_state: DVector::from_vec(r.start.clone()),
    })
}
