//! Specialization matrix and its adaptation laws.
//!
//! `s_ij` in `[0, 1]` weights how effectively robot `i` executes task `j`.
//! After each control step the entries of assigned pairs move by
//! `beta1 * delta_h`, where `delta_h` compares the actual barrier progress
//! against modeled progress: the baseline law simulates one nominal Euler
//! step, the robust law uses the worst-case progress over the disturbance
//! hull so that hull-covered disturbances do not erode the specialization.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::barrier::{worst_case_progress, BarrierTask};
use crate::dynamics::{ControlAffineModel, DisturbanceHull, DisturbanceSource};

/// One observed transition of a robot, used to score progress on a task.
#[derive(Debug, Clone)]
pub struct ProgressSample<'a> {
    pub robot: usize,
    pub task: usize,
    /// State before the step.
    pub state_before: &'a DVector<f64>,
    /// State actually reached after the step.
    pub state_after: &'a DVector<f64>,
    /// Input commanded by the optimizer for the step.
    pub input: &'a DVector<f64>,
    /// Disturbance hull that was in force when the input was chosen; only
    /// needed by the robust law.
    pub hull_before: Option<&'a DisturbanceHull>,
    pub dt: f64,
}

/// Actual minus modeled progress, with the model following nominal dynamics:
/// `h(x_actual) - h(x_sim)` where `x_sim = x + dt (f + g u)`.
pub fn baseline_delta(
    sample: &ProgressSample<'_>,
    task: &BarrierTask,
    model: &ControlAffineModel,
) -> f64 {
    assert!(sample.dt > 0.0);
    let x_sim = crate::dynamics::step(
        model,
        DisturbanceSource::None,
        sample.state_before,
        sample.input,
        sample.dt,
    );
    task.value_at_state(model, sample.state_after) - task.value_at_state(model, &x_sim)
}

/// Actual minus worst-case modeled progress over the disturbance hull.
///
/// Requires `hull_before`; disturbances inside the hull leave this
/// nonnegative up to the Euler linearization error, so only unmodeled
/// excess is penalized.
pub fn robust_delta(
    sample: &ProgressSample<'_>,
    task: &BarrierTask,
    model: &ControlAffineModel,
) -> f64 {
    let hull = sample
        .hull_before
        .expect("robust progress scoring requires the step's disturbance hull");
    let worst = worst_case_progress(
        task,
        model,
        sample.state_before,
        sample.input,
        hull,
        sample.dt,
    );
    task.value_at_state(model, sample.state_after) - worst
}

/// Snapshot of the matrix and the applied deltas after one update.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecializationRecord {
    pub step: usize,
    pub values: DMatrix<f64>,
    pub deltas: DMatrix<f64>,
}

/// Robot-by-task specialization values with their update history.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecializationMatrix {
    values: DMatrix<f64>,
    beta1: f64,
    history: Vec<SpecializationRecord>,
}

impl SpecializationMatrix {
    pub fn new(values: DMatrix<f64>, beta1: f64) -> Self {
        assert!(beta1 > 0.0, "update rate must be positive");
        assert!(
            values.iter().all(|s| (0.0..=1.0).contains(s)),
            "specializations start in [0, 1]"
        );
        SpecializationMatrix {
            values,
            beta1,
            history: Vec::new(),
        }
    }

    pub fn uniform(num_robots: usize, num_tasks: usize, value: f64, beta1: f64) -> Self {
        SpecializationMatrix::new(DMatrix::from_element(num_robots, num_tasks, value), beta1)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn history(&self) -> &[SpecializationRecord] {
        &self.history
    }

    /// Apply one update: `s_ij <- clip(s_ij + beta1 * alpha_ij * delta_ij, 0, 1)`.
    /// Entries of unassigned pairs are untouched.
    pub fn update(&mut self, step: usize, assignment: &[usize], deltas: &DMatrix<f64>) {
        assert_eq!(assignment.len(), self.values.nrows());
        assert_eq!(deltas.nrows(), self.values.nrows());
        assert_eq!(deltas.ncols(), self.values.ncols());
        assert!(deltas.iter().all(|d| d.is_finite()), "deltas must be finite");
        for (i, &j) in assignment.iter().enumerate() {
            let updated = self.values[(i, j)] + self.beta1 * deltas[(i, j)];
            self.values[(i, j)] = updated.clamp(0.0, 1.0);
        }
        self.history.push(SpecializationRecord {
            step,
            values: self.values.clone(),
            deltas: deltas.clone(),
        });
    }

    /// Export the history as CSV: one row per (step, robot, task).
    pub fn write_history_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# specialization history: s dimensionless in [0,1], delta in barrier units")?;
        writeln!(f, "step,robot,task,s,delta")?;
        for record in &self.history {
            for i in 0..record.values.nrows() {
                for j in 0..record.values.ncols() {
                    writeln!(
                        f,
                        "{},{},{},{},{}",
                        record.step,
                        i,
                        j,
                        record.values[(i, j)],
                        record.deltas[(i, j)]
                    )?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{GroundTruthDisturbance, Rect, SingleIntegratorModel, UnicycleModel};
    use approx::assert_relative_eq;
    use nalgebra::Vector2;
    use proptest::prelude::*;

    fn unicycle() -> ControlAffineModel {
        ControlAffineModel::Unicycle(UnicycleModel::new(0.05, 0.2, 3.6))
    }

    fn integrator() -> ControlAffineModel {
        ControlAffineModel::SingleIntegrator(SingleIntegratorModel { v_max: 0.2 })
    }

    fn vec_of(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn baseline_delta_zero_for_nominal_transition() {
        let model = unicycle();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let x = vec_of(&[0.0, 0.0, 0.0]);
        let u = vec_of(&[0.1, 0.0]);
        let dt = 0.033;
        let x_next = crate::dynamics::step(&model, DisturbanceSource::None, &x, &u, dt);
        let sample = ProgressSample {
            robot: 0,
            task: 0,
            state_before: &x,
            state_after: &x_next,
            input: &u,
            hull_before: None,
            dt,
        };
        assert_relative_eq!(baseline_delta(&sample, &task, &model), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn baseline_delta_negative_when_pushed_backward() {
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let x = vec_of(&[0.0, 0.0]);
        let u = vec_of(&[0.1, 0.0]);
        let dt = 0.033;
        // Push opposite the barrier gradient.
        let d = vec_of(&[-0.05, 0.0]);
        let x_next = crate::dynamics::step(&model, DisturbanceSource::StateOffset(&d), &x, &u, dt);
        let sample = ProgressSample {
            robot: 0,
            task: 0,
            state_before: &x,
            state_after: &x_next,
            input: &u,
            hull_before: None,
            dt,
        };
        assert!(baseline_delta(&sample, &task, &model) < 0.0);
    }

    #[test]
    fn baseline_delta_matches_two_hand_euler_steps() {
        // Slope disturbance aids motion toward a goal on the +x axis: the
        // actual step lands closer than the nominal one, so delta > 0.
        let model = unicycle();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let x = vec_of(&[0.0, 0.0, 0.0]);
        let u = vec_of(&[0.1, 0.0]);
        let dt = 0.033;
        let dist = GroundTruthDisturbance {
            region: Rect {
                x_min: -1.0,
                x_max: 1.0,
                y_min: -1.0,
                y_max: 1.0,
            },
            gain: 0.02,
            affected_kinds: vec!["ground".into()],
        };
        let dists = [dist];
        let x_next = crate::dynamics::step(
            &model,
            DisturbanceSource::GroundTruth {
                disturbances: &dists,
                kind: "ground",
            },
            &x,
            &u,
            dt,
        );
        let sample = ProgressSample {
            robot: 0,
            task: 0,
            state_before: &x,
            state_after: &x_next,
            input: &u,
            hull_before: None,
            dt,
        };
        let delta = baseline_delta(&sample, &task, &model);

        // Hand Euler of both trajectories through the look-ahead output.
        let p_act = 0.12 * dt + 0.05; // disturbed wheel + lookahead
        let p_sim = 0.1 * dt + 0.05;
        let expected = -(p_act - 1.0) * (p_act - 1.0) + (p_sim - 1.0) * (p_sim - 1.0);
        assert!(delta > 0.0);
        assert_relative_eq!(delta, expected, epsilon = 1e-14);
    }

    #[test]
    fn robust_delta_near_zero_for_zero_hull_nominal_step() {
        let model = unicycle();
        let task = BarrierTask::new(Vector2::new(0.8, 0.3));
        let x = vec_of(&[0.1, -0.1, 0.5]);
        let u = vec_of(&[0.15, 0.4]);
        let dt = 0.033;
        let hull = DisturbanceHull::zero(3);
        let x_next = crate::dynamics::step(&model, DisturbanceSource::None, &x, &u, dt);
        let sample = ProgressSample {
            robot: 0,
            task: 0,
            state_before: &x,
            state_after: &x_next,
            input: &u,
            hull_before: Some(&hull),
            dt,
        };
        // Chain-rule vs Euler discrepancy is O(dt^2).
        assert!(robust_delta(&sample, &task, &model).abs() < 1e-3 * dt);
    }

    #[test]
    fn robust_delta_forgives_hull_covered_disturbance() {
        // True disturbance equals the worst hull vertex: the robust score is
        // ~zero while the baseline score is clearly negative.
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let x = vec_of(&[0.0, 0.0]);
        let u = vec_of(&[0.0, 0.0]);
        let dt = 0.033;
        let hull = DisturbanceHull::new(vec![vec_of(&[0.05, 0.0]), vec_of(&[-0.05, 0.0])]);
        let worst_vertex = vec_of(&[-0.05, 0.0]);
        let x_next =
            crate::dynamics::step(&model, DisturbanceSource::StateOffset(&worst_vertex), &x, &u, dt);
        let sample = ProgressSample {
            robot: 0,
            task: 0,
            state_before: &x,
            state_after: &x_next,
            input: &u,
            hull_before: Some(&hull),
            dt,
        };
        let robust = robust_delta(&sample, &task, &model);
        let baseline = baseline_delta(&sample, &task, &model);
        // Hand values: h(x_act) = -(1 + 0.05 dt)^2, worst-case model
        // h - dt * 0.1 = -1 - 0.1 dt, difference is -0.0025 dt^2.
        assert_relative_eq!(robust, -0.0025 * dt * dt, epsilon = 1e-12);
        assert!(baseline < -0.003);
    }

    #[test]
    fn robust_delta_penalizes_unmodeled_excess() {
        // True disturbance 0.2 against a hull clamped at 0.1: the uncovered
        // half shows up as a negative robust score.
        let model = integrator();
        let task = BarrierTask::new(Vector2::new(1.0, 0.0));
        let x = vec_of(&[0.0, 0.0]);
        let u = vec_of(&[0.0, 0.0]);
        let dt = 0.033;
        let hull = DisturbanceHull::new(vec![vec_of(&[0.2, 0.0]), vec_of(&[-0.2, 0.0])]).clamp(0.1);
        let true_disturbance = vec_of(&[-0.2, 0.0]);
        let x_next = crate::dynamics::step(
            &model,
            DisturbanceSource::StateOffset(&true_disturbance),
            &x,
            &u,
            dt,
        );
        let sample = ProgressSample {
            robot: 0,
            task: 0,
            state_before: &x,
            state_after: &x_next,
            input: &u,
            hull_before: Some(&hull),
            dt,
        };
        let robust = robust_delta(&sample, &task, &model);
        // Uncovered magnitude is 0.1 along the gradient of size 2.
        assert!(robust < -0.5 * 0.1 * 2.0 * dt);
    }

    #[test]
    fn update_ignores_unassigned_entries() {
        let mut s = SpecializationMatrix::uniform(2, 2, 0.5, 1.0);
        let deltas = DMatrix::from_element(2, 2, -0.3);
        s.update(0, &[1, 0], &deltas);
        assert_relative_eq!(s.values()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.values()[(0, 1)], 0.2, epsilon = 1e-15);
        assert_relative_eq!(s.values()[(1, 0)], 0.2, epsilon = 1e-15);
        assert_relative_eq!(s.values()[(1, 1)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn update_clips_to_unit_interval() {
        let mut s = SpecializationMatrix::uniform(1, 1, 0.5, 1.0);
        s.update(0, &[0], &DMatrix::from_element(1, 1, -0.7));
        assert_eq!(s.values()[(0, 0)], 0.0);

        let mut s = SpecializationMatrix::uniform(1, 1, 0.9, 0.5);
        s.update(0, &[0], &DMatrix::from_element(1, 1, 0.4));
        assert_eq!(s.values()[(0, 0)], 1.0);
    }

    #[test]
    fn history_records_every_update() {
        let mut s = SpecializationMatrix::uniform(1, 2, 1.0, 0.1);
        s.update(0, &[0], &DMatrix::from_element(1, 2, -0.5));
        s.update(1, &[1], &DMatrix::from_element(1, 2, 0.2));
        assert_eq!(s.history().len(), 2);
        assert_eq!(s.history()[0].step, 0);
        assert_eq!(s.history()[1].step, 1);
    }

    proptest! {
        #[test]
        fn update_monotone_in_delta(
            s0 in 0.0f64..1.0,
            beta in 0.01f64..2.0,
            d1 in -1.0f64..1.0,
            d2 in -1.0f64..1.0,
        ) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let mut a = SpecializationMatrix::uniform(1, 1, s0, beta);
            let mut b = SpecializationMatrix::uniform(1, 1, s0, beta);
            a.update(0, &[0], &DMatrix::from_element(1, 1, lo));
            b.update(0, &[0], &DMatrix::from_element(1, 1, hi));
            prop_assert!(a.values()[(0, 0)] <= b.values()[(0, 0)]);
        }

        #[test]
        fn update_stays_in_unit_interval(
            s0 in 0.0f64..1.0,
            beta in 0.01f64..5.0,
            delta in -10.0f64..10.0,
        ) {
            let mut s = SpecializationMatrix::uniform(1, 1, s0, beta);
            s.update(0, &[0], &DMatrix::from_element(1, 1, delta));
            let v = s.values()[(0, 0)];
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
