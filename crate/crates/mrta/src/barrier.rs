//! Tasks as barrier functions and their induced control constraints.
//!
//! A go-to-goal task is encoded by the energy-style barrier
//! `h(p) = -||p - goal||^2` over the robot's planar output, so `h = 0`
//! exactly at the goal and `h < 0` elsewhere. Keeping `h` from decreasing
//! therefore drives the task to completion. Gradients with respect to the
//! full robot state are taken through the model's output map.

use nalgebra::{DVector, Vector2};

use crate::dynamics::{ControlAffineModel, DisturbanceHull};

/// A go-to-goal task described by its barrier function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierTask {
    pub goal: Vector2<f64>,
}

impl BarrierTask {
    pub fn new(goal: Vector2<f64>) -> Self {
        BarrierTask { goal }
    }

    /// Barrier value at a planar output point: `-||p - goal||^2`.
    pub fn value(&self, output: &Vector2<f64>) -> f64 {
        -(output - self.goal).norm_squared()
    }

    /// Gradient of the barrier with respect to the output: `-2 (p - goal)`.
    pub fn output_gradient(&self, output: &Vector2<f64>) -> Vector2<f64> {
        -2.0 * (output - self.goal)
    }

    /// Barrier value at a robot state, through the model's output map.
    pub fn value_at_state(&self, model: &ControlAffineModel, x: &DVector<f64>) -> f64 {
        self.value(&model.output(x))
    }

    /// Task energy `J = -h`, zero exactly at completion.
    pub fn energy(&self, model: &ControlAffineModel, x: &DVector<f64>) -> f64 {
        -self.value_at_state(model, x)
    }
}

/// Linear class-K function `gamma(h) = gamma0 * h` setting the allowed
/// barrier decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassKappa {
    pub gamma0: f64,
}

impl ClassKappa {
    pub fn new(gamma0: f64) -> Self {
        assert!(gamma0 > 0.0, "class-K slope must be positive");
        ClassKappa { gamma0 }
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.gamma0 * h
    }
}

/// Barrier value, Lie derivatives, and the state-space gradient at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct LieDerivatives {
    /// `h` at the state.
    pub h: f64,
    /// `grad_h . f(x)`.
    pub l_f: f64,
    /// `g(x)^T grad_h`, length `input_dim`.
    pub l_g: DVector<f64>,
    /// Gradient of `h` with respect to the full state, length `state_dim`.
    pub gradient: DVector<f64>,
}

/// Evaluate `h`, its state gradient, and both Lie derivatives at `x`.
pub fn lie_derivatives(
    task: &BarrierTask,
    model: &ControlAffineModel,
    x: &DVector<f64>,
) -> LieDerivatives {
    let output = model.output(x);
    let grad_p = task.output_gradient(&output);
    let gradient = model.output_jacobian(x).transpose() * grad_p;
    let l_f = gradient.dot(&model.drift(x));
    let l_g = model.actuation(x).transpose() * &gradient;
    LieDerivatives {
        h: task.value(&output),
        l_f,
        l_g,
        gradient,
    }
}

/// One affine constraint on a robot's control input: `coeff . u >= bound`,
/// optionally relaxed by a slack entry (`coeff . u >= bound - delta`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearControlConstraint {
    pub coeff: DVector<f64>,
    pub bound: f64,
    pub slack_index: Option<usize>,
}

/// Execution constraint under the nominal (undisturbed) model:
/// `L_g h . u >= -gamma(h) - L_f h`.
pub fn nominal_constraint(
    task: &BarrierTask,
    model: &ControlAffineModel,
    x: &DVector<f64>,
    kappa: &ClassKappa,
    slack_index: Option<usize>,
) -> LinearControlConstraint {
    let lie = lie_derivatives(task, model, x);
    LinearControlConstraint {
        coeff: lie.l_g,
        bound: -kappa.eval(lie.h) - lie.l_f,
        slack_index,
    }
}

/// Execution constraint robust to every disturbance in the hull: the bound
/// is tightened by the worst-case inner product of the barrier gradient with
/// the hull vertices.
pub fn robust_constraint(
    task: &BarrierTask,
    model: &ControlAffineModel,
    x: &DVector<f64>,
    kappa: &ClassKappa,
    hull: &DisturbanceHull,
    slack_index: Option<usize>,
) -> LinearControlConstraint {
    let lie = lie_derivatives(task, model, x);
    LinearControlConstraint {
        coeff: lie.l_g,
        bound: -kappa.eval(lie.h) - lie.l_f - hull.min_dot(&lie.gradient),
        slack_index,
    }
}

/// Worst-case barrier value after one Euler step under `u` and any
/// disturbance in the hull:
/// `h + dt (L_f h + L_g h . u) + dt min_j grad_h . psi_j`.
pub fn worst_case_progress(
    task: &BarrierTask,
    model: &ControlAffineModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    hull: &DisturbanceHull,
    dt: f64,
) -> f64 {
    assert!(dt > 0.0, "step size must be positive");
    let lie = lie_derivatives(task, model, x);
    lie.h + dt * (lie.l_f + lie.l_g.dot(u)) + dt * hull.min_dot(&lie.gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{SingleIntegratorModel, UnicycleModel};
    use approx::assert_relative_eq;

    fn unicycle() -> ControlAffineModel {
        ControlAffineModel::Unicycle(UnicycleModel::new(0.05, 0.2, 3.6))
    }

    fn integrator() -> ControlAffineModel {
        ControlAffineModel::SingleIntegrator(SingleIntegratorModel { v_max: 0.2 })
    }

    fn state(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    /// Finite-difference gradient of `h(output(x))` used as an oracle.
    fn fd_gradient(task: &BarrierTask, model: &ControlAffineModel, x: &DVector<f64>) -> DVector<f64> {
        let eps = 1e-6;
        let mut grad = DVector::zeros(x.len());
        for d in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[d] += eps;
            lo[d] -= eps;
            grad[d] = (task.value_at_state(model, &hi) - task.value_at_state(model, &lo))
                / (2.0 * eps);
        }
        grad
    }

    #[test]
    fn driftless_model_has_zero_lf() {
        let task = BarrierTask::new(Vector2::new(1.0, 0.5));
        let lie = lie_derivatives(&task, &unicycle(), &state(&[0.0, 0.0, 0.3]));
        assert_eq!(lie.l_f, 0.0);
    }

    #[test]
    fn gradient_vanishes_at_goal() {
        let model = unicycle();
        let x = state(&[0.0, 0.0, 0.0]);
        let goal = model.output(&x);
        let task = BarrierTask::new(goal);
        let lie = lie_derivatives(&task, &model, &x);
        assert_eq!(lie.h, 0.0);
        assert_relative_eq!(lie.gradient.norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(lie.l_g.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn unicycle_gradient_matches_finite_differences() {
        let model = unicycle();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        for x in [
            state(&[0.0, 0.0, 0.0]),
            state(&[0.3, -0.2, 1.2]),
            state(&[-0.5, 0.4, -2.0]),
        ] {
            let lie = lie_derivatives(&task, &model, &x);
            let fd = fd_gradient(&task, &model, &x);
            for d in 0..3 {
                assert_relative_eq!(lie.gradient[d], fd[d], max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn unicycle_lie_derivative_hand_case() {
        // At the origin facing +x with goal (1, 0): the output sits at
        // (lookahead, 0), grad_p = (1.9, 0), and the actuation maps it to
        // L_g h = (1.9, 0).
        let model = unicycle();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let lie = lie_derivatives(&task, &model, &state(&[0.0, 0.0, 0.0]));
        assert_relative_eq!(lie.l_g[0], 1.9, epsilon = 1e-14);
        assert_relative_eq!(lie.l_g[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(lie.gradient[0], 1.9, epsilon = 1e-14);
    }

    #[test]
    fn nominal_constraint_substitution() {
        // Integrator at origin, goal (1, 0): h = -1, grad = (2, 0), so the
        // constraint reads 2 u_1 >= 1 - delta.
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let c = nominal_constraint(&task, &model, &state(&[0.0, 0.0]), &ClassKappa::new(1.0), Some(0));
        assert_relative_eq!(c.coeff[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(c.coeff[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(c.bound, 1.0, epsilon = 1e-15);
        assert_eq!(c.slack_index, Some(0));
    }

    #[test]
    fn nominal_constraint_is_vacuous_at_goal() {
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(0.0, 0.0));
        let c = nominal_constraint(&task, &model, &state(&[0.0, 0.0]), &ClassKappa::new(1.0), None);
        assert_eq!(c.coeff.norm(), 0.0);
        assert_eq!(c.bound, 0.0);
    }

    #[test]
    fn class_kappa_slope_scales_bound_linearly() {
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let x = state(&[0.0, 0.0]);
        let c1 = nominal_constraint(&task, &model, &x, &ClassKappa::new(1.0), None);
        let c2 = nominal_constraint(&task, &model, &x, &ClassKappa::new(2.0), None);
        // Driftless model: the bound is exactly -gamma(h).
        assert_relative_eq!(c2.bound, 2.0 * c1.bound, epsilon = 1e-15);
    }

    #[test]
    fn robust_constraint_with_zero_hull_reduces_to_nominal() {
        let model = unicycle();
        let task = BarrierTask::new(Vector2::new(1.0, 0.2));
        let x = state(&[0.1, -0.3, 0.7]);
        let kappa = ClassKappa::new(1.0);
        let nominal = nominal_constraint(&task, &model, &x, &kappa, Some(1));
        let robust = robust_constraint(&task, &model, &x, &kappa, &DisturbanceHull::zero(3), Some(1));
        assert_eq!(nominal, robust);
    }

    #[test]
    fn robust_constraint_tightens_by_worst_vertex() {
        // Unicycle at origin, goal (1.05, 0): gradient is (2, 0, 0).
        let model = unicycle();
        let task = BarrierTask::new(Vector2::new(1.05, 0.0));
        let x = state(&[0.0, 0.0, 0.0]);
        let kappa = ClassKappa::new(1.0);
        let hull = DisturbanceHull::new(vec![
            state(&[0.1, 0.0, 0.0]),
            state(&[-0.1, 0.0, 0.0]),
        ]);
        let nominal = nominal_constraint(&task, &model, &x, &kappa, None);
        let robust = robust_constraint(&task, &model, &x, &kappa, &hull, None);
        assert_relative_eq!(robust.bound - nominal.bound, 0.2, epsilon = 1e-14);
        assert_eq!(robust.coeff, nominal.coeff);
    }

    #[test]
    fn robust_constraint_ignores_duplicate_vertices() {
        let model = unicycle();
        let task = BarrierTask::new(Vector2::new(0.5, 0.5));
        let x = state(&[0.0, 0.0, 0.4]);
        let kappa = ClassKappa::new(1.0);
        let base = vec![state(&[0.05, -0.02, 0.0]), state(&[-0.03, 0.04, 0.01])];
        let doubled: Vec<_> = base.iter().chain(base.iter()).cloned().collect();
        let a = robust_constraint(&task, &model, &x, &kappa, &DisturbanceHull::new(base), None);
        let b = robust_constraint(&task, &model, &x, &kappa, &DisturbanceHull::new(doubled), None);
        assert_eq!(a, b);
    }

    #[test]
    fn worst_case_progress_zero_hull_zero_input() {
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let x = state(&[0.0, 0.0]);
        let wcp = worst_case_progress(&task, &model, &x, &state(&[0.0, 0.0]), &DisturbanceHull::zero(2), 0.1);
        assert_relative_eq!(wcp, task.value_at_state(&model, &x), epsilon = 1e-15);
    }

    #[test]
    fn worst_case_progress_hand_arithmetic() {
        // h = -1, L_f h = 0, L_g h . u = 0.5, worst vertex term -0.2, dt = 0.1:
        // -1 + 0.05 - 0.02 = -0.97.
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let x = state(&[0.0, 0.0]);
        let u = state(&[0.25, 0.0]);
        let hull = DisturbanceHull::new(vec![state(&[0.1, 0.0]), state(&[-0.1, 0.0])]);
        let wcp = worst_case_progress(&task, &model, &x, &u, &hull, 0.1);
        assert_relative_eq!(wcp, -0.97, epsilon = 1e-14);
    }

    #[test]
    fn worst_case_progress_below_mean_vertex_progress() {
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(0.8, -0.3));
        let x = state(&[-0.2, 0.1]);
        let u = state(&[0.1, 0.05]);
        let hull = DisturbanceHull::new(vec![
            state(&[0.07, -0.01]),
            state(&[-0.05, 0.03]),
            state(&[0.0, 0.04]),
        ]);
        let lie = lie_derivatives(&task, &model, &x);
        let mean = hull
            .vertices()
            .iter()
            .fold(DVector::zeros(2), |acc, v| acc + v)
            / hull.num_vertices() as f64;
        let dt = 0.05;
        let with_mean = lie.h + dt * (lie.l_f + lie.l_g.dot(&u)) + dt * lie.gradient.dot(&mean);
        let wcp = worst_case_progress(&task, &model, &x, &u, &hull, dt);
        assert!(wcp <= with_mean + 1e-15);
    }
}
