//! Robot models, disturbance descriptions, and integration.
//!
//! Robots are control-affine, `xdot = f(x) + g(x) u`, possibly perturbed by
//! an additive state-space disturbance. The disturbance is described either
//! exactly (a [`GroundTruthDisturbance`] acting on the control input, used by
//! the simulated plant) or as a [`DisturbanceHull`], a finite vertex set whose
//! convex hull bounds the unmodeled term (used by the controller).

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::DimensionMismatch;

/// Planar unicycle with a look-ahead output point.
///
/// State is `[x, y, theta]`, input is `[v, omega]`. The output is the point
/// `lookahead` metres ahead of the wheel axis, which makes the map from
/// planar output velocities to inputs invertible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleModel {
    /// Look-ahead projection distance (m), strictly positive.
    pub lookahead: f64,
    /// Linear speed limit (m/s).
    pub v_max: f64,
    /// Angular speed limit (rad/s).
    pub w_max: f64,
}

impl UnicycleModel {
    pub fn new(lookahead: f64, v_max: f64, w_max: f64) -> Self {
        assert!(lookahead > 0.0, "look-ahead distance must be positive");
        UnicycleModel {
            lookahead,
            v_max,
            w_max,
        }
    }

    /// Velocity of the look-ahead output point: `R(theta) * diag(1, lookahead) * u`.
    pub fn output_dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vector2<f64> {
        assert_eq!(x.len(), 3, "unicycle state is [x, y, theta]");
        assert_eq!(u.len(), 2, "unicycle input is [v, omega]");
        let (sin, cos) = x[2].sin_cos();
        Vector2::new(
            cos * u[0] - sin * self.lookahead * u[1],
            sin * u[0] + cos * self.lookahead * u[1],
        )
    }

    /// Inputs that realize a desired output-point velocity:
    /// `u = diag(1, 1/lookahead) * R(theta)^T * pdot`.
    pub fn inputs_for_output_velocity(&self, x: &DVector<f64>, pdot: &Vector2<f64>) -> DVector<f64> {
        let (sin, cos) = x[2].sin_cos();
        DVector::from_vec(vec![
            cos * pdot[0] + sin * pdot[1],
            (-sin * pdot[0] + cos * pdot[1]) / self.lookahead,
        ])
    }
}

/// Planar single integrator, `pdot = u`. Used for the simulated quadcopters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleIntegratorModel {
    /// Speed limit per input component (m/s).
    pub v_max: f64,
}

/// A control-affine model given by plain function pointers; mainly useful for
/// constructing ad-hoc systems in tests.
#[derive(Debug, Clone, Copy)]
pub struct CustomModel {
    pub state_dim: usize,
    pub input_dim: usize,
    pub drift: fn(&DVector<f64>) -> DVector<f64>,
    pub actuation: fn(&DVector<f64>) -> DMatrix<f64>,
    /// Per-component input magnitude limits.
    pub input_limits: fn() -> DVector<f64>,
}

/// A robot's control-affine dynamics `xdot = f(x) + g(x) u` together with the
/// planar output map that tasks are expressed in.
#[derive(Debug, Clone, Copy)]
pub enum ControlAffineModel {
    Unicycle(UnicycleModel),
    SingleIntegrator(SingleIntegratorModel),
    Custom(CustomModel),
}

impl ControlAffineModel {
    pub fn state_dim(&self) -> usize {
        match self {
            ControlAffineModel::Unicycle(_) => 3,
            ControlAffineModel::SingleIntegrator(_) => 2,
            ControlAffineModel::Custom(c) => c.state_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ControlAffineModel::Unicycle(_) => 2,
            ControlAffineModel::SingleIntegrator(_) => 2,
            ControlAffineModel::Custom(c) => c.input_dim,
        }
    }

    /// Drift term `f(x)`. Both concrete robot models are driftless.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ControlAffineModel::Unicycle(_) => DVector::zeros(3),
            ControlAffineModel::SingleIntegrator(_) => DVector::zeros(2),
            ControlAffineModel::Custom(c) => (c.drift)(x),
        }
    }

    /// Actuation matrix `g(x)` of shape `state_dim x input_dim`.
    pub fn actuation(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ControlAffineModel::Unicycle(_) => {
                let (sin, cos) = x[2].sin_cos();
                DMatrix::from_row_slice(3, 2, &[cos, 0.0, sin, 0.0, 0.0, 1.0])
            }
            ControlAffineModel::SingleIntegrator(_) => DMatrix::identity(2, 2),
            ControlAffineModel::Custom(c) => (c.actuation)(x),
        }
    }

    /// Planar output the tasks are written in: the look-ahead point for the
    /// unicycle, the position itself otherwise.
    pub fn output(&self, x: &DVector<f64>) -> Vector2<f64> {
        match self {
            ControlAffineModel::Unicycle(m) => {
                let (sin, cos) = x[2].sin_cos();
                Vector2::new(x[0] + m.lookahead * cos, x[1] + m.lookahead * sin)
            }
            _ => Vector2::new(x[0], x[1]),
        }
    }

    /// Jacobian of the output map, shape `2 x state_dim`.
    pub fn output_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ControlAffineModel::Unicycle(m) => {
                let (sin, cos) = x[2].sin_cos();
                DMatrix::from_row_slice(
                    2,
                    3,
                    &[1.0, 0.0, -m.lookahead * sin, 0.0, 1.0, m.lookahead * cos],
                )
            }
            ControlAffineModel::SingleIntegrator(_) => DMatrix::identity(2, 2),
            ControlAffineModel::Custom(c) => {
                let mut j = DMatrix::zeros(2, c.state_dim);
                j[(0, 0)] = 1.0;
                j[(1, 1)] = 1.0;
                j
            }
        }
    }

    /// Heading angle used by input-level disturbances; zero for models
    /// without an orientation state.
    pub fn heading(&self, x: &DVector<f64>) -> f64 {
        match self {
            ControlAffineModel::Unicycle(_) => x[2],
            _ => 0.0,
        }
    }

    /// Per-component input magnitude limits.
    pub fn input_limits(&self) -> DVector<f64> {
        match self {
            ControlAffineModel::Unicycle(m) => DVector::from_vec(vec![m.v_max, m.w_max]),
            ControlAffineModel::SingleIntegrator(m) => DVector::from_vec(vec![m.v_max, m.v_max]),
            ControlAffineModel::Custom(c) => (c.input_limits)(),
        }
    }

    /// Nominal state derivative `f(x) + g(x) u`.
    pub fn nominal_rate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.actuation(x) * u
    }

    /// Clamp an input to the model's per-component limits.
    pub fn saturate(&self, u: &DVector<f64>) -> DVector<f64> {
        let lim = self.input_limits();
        DVector::from_iterator(
            u.len(),
            u.iter().zip(lim.iter()).map(|(v, l)| v.clamp(-l, *l)),
        )
    }
}

/// Convex hull of finitely many vertex vectors bounding the unmodeled
/// state-space dynamics term.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceHull {
    vertices: Vec<DVector<f64>>,
}

impl DisturbanceHull {
    /// A hull needs at least one vertex and consistent dimensions.
    pub fn new(vertices: Vec<DVector<f64>>) -> Self {
        assert!(!vertices.is_empty(), "a disturbance hull needs >= 1 vertex");
        let dim = vertices[0].len();
        assert!(
            vertices.iter().all(|v| v.len() == dim),
            "hull vertices must share a dimension"
        );
        DisturbanceHull { vertices }
    }

    /// The singleton hull `{0}` in `dim` dimensions (no disturbance).
    pub fn zero(dim: usize) -> Self {
        DisturbanceHull::new(vec![DVector::zeros(dim)])
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    /// Minimum of `w . psi` over the vertices. A linear functional over a
    /// convex hull attains its minimum at a vertex, so this is the exact
    /// minimum over the whole hull.
    pub fn min_dot(&self, w: &DVector<f64>) -> f64 {
        self.vertices
            .iter()
            .map(|v| w.dot(v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Saturate every vertex component to `[-d_max, d_max]`.
    pub fn clamp(&self, d_max: f64) -> Self {
        DisturbanceHull::new(
            self.vertices
                .iter()
                .map(|v| v.map(|c| c.clamp(-d_max, d_max)))
                .collect(),
        )
    }

    /// Largest per-component magnitude over all vertices.
    pub fn max_abs(&self) -> f64 {
        self.vertices
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, c| acc.max(c.abs()))
    }
}

/// Axis-aligned rectangle in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// A simulated environmental disturbance with compact support: inside
/// `region`, affected robots have their control input shifted by
/// `gain * cos(theta)` along the first input component.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthDisturbance {
    pub region: Rect,
    pub gain: f64,
    /// Robot kinds the disturbance acts on; others pass through unchanged.
    pub affected_kinds: Vec<String>,
}

impl GroundTruthDisturbance {
    pub fn affects(&self, kind: &str) -> bool {
        self.affected_kinds.iter().any(|k| k == kind)
    }

    /// Disturbed input for a robot of `kind` at state `x` commanding `u`.
    pub fn apply(
        &self,
        kind: &str,
        model: &ControlAffineModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        let position = Vector2::new(x[0], x[1]);
        if !self.affects(kind) || !self.region.contains(&position) {
            return u.clone();
        }
        let mut disturbed = u.clone();
        disturbed[0] += self.gain * model.heading(x).cos();
        disturbed
    }
}

/// Apply every matching ground-truth disturbance to a commanded input.
pub fn disturbed_input(
    disturbances: &[GroundTruthDisturbance],
    kind: &str,
    model: &ControlAffineModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let mut out = u.clone();
    for d in disturbances {
        out = d.apply(kind, model, x, &out);
    }
    out
}

/// How the true dynamics deviate from the nominal model during a step.
#[derive(Debug, Clone, Copy)]
pub enum DisturbanceSource<'a> {
    /// Pure nominal dynamics.
    None,
    /// Input-level disturbances of the simulated plant.
    GroundTruth {
        disturbances: &'a [GroundTruthDisturbance],
        kind: &'a str,
    },
    /// A fixed additive state-space term `d`: `xdot = f + g u + d`.
    StateOffset(&'a DVector<f64>),
}

/// The set-valued right-hand side at `(x, u)`: the nominal rate plus the
/// convex hull of the offset vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionRhs {
    pub nominal: DVector<f64>,
    pub offsets: Vec<DVector<f64>>,
}

/// Evaluate the differential-inclusion right-hand side `f(x) + g(x) u + co(hull)`.
pub fn evaluate_inclusion(
    model: &ControlAffineModel,
    hull: &DisturbanceHull,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<InclusionRhs, DimensionMismatch> {
    DimensionMismatch::check("state", model.state_dim(), x.len())?;
    DimensionMismatch::check("input", model.input_dim(), u.len())?;
    DimensionMismatch::check("hull", model.state_dim(), hull.dim())?;
    Ok(InclusionRhs {
        nominal: model.nominal_rate(x, u),
        offsets: hull.vertices().to_vec(),
    })
}

/// One explicit Euler step `x' = x + dt * xdot`, with `xdot` taken from the
/// selected dynamics source. Deterministic; the heading state is not wrapped.
pub fn step(
    model: &ControlAffineModel,
    source: DisturbanceSource<'_>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    assert!(dt > 0.0, "step size must be positive");
    let rate = match source {
        DisturbanceSource::None => model.nominal_rate(x, u),
        DisturbanceSource::GroundTruth {
            disturbances,
            kind,
        } => {
            let u_d = disturbed_input(disturbances, kind, model, x, u);
            model.nominal_rate(x, &u_d)
        }
        DisturbanceSource::StateOffset(d) => model.nominal_rate(x, u) + d,
    };
    x + rate * dt
}
