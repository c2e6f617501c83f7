//! Adaptive multi-robot task allocation under environmental disturbances.
//!
//! A team of control-affine robots executes go-to-goal tasks encoded as
//! barrier functions. Each control step solves a mixed-integer quadratic
//! program that jointly picks a task assignment and the control inputs,
//! with task-execution constraints expressed as (robust) control barrier
//! conditions. Disturbances are learned offline with Gaussian process
//! regression and enter the controller as convex-hull-valued bounds on the
//! unmodeled dynamics; per-robot task specializations adapt online from the
//! gap between modeled and actual progress.
//!
//! Module map:
//!
//! * [`dynamics`] — robot models, disturbance hulls, ground-truth disturbances, Euler stepping
//! * [`barrier`] — task encodings, Lie derivatives, nominal and robust execution constraints
//! * [`gp`] — exact Gaussian process regression and disturbance-hull extraction
//! * [`solver`] — dense active-set QP solver and the mixed-integer layer
//! * [`allocator`] — per-step joint allocation/control problem assembly
//! * [`specialization`] — specialization matrix and its update laws
//! * [`scenario`] — scenario files (TOML) and validation
//! * [`simulator`] — data collection, the closed loop, run logs and metrics

pub mod allocator;
pub mod barrier;
pub mod dynamics;
pub mod gp;
pub mod scenario;
pub mod simulator;
pub mod solver;
pub mod specialization;

use std::fmt;

/// A shape disagreement between two quantities that must match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionMismatch {
    /// What was being checked, e.g. `"input"`.
    pub what: &'static str,
    pub expected: usize,
    pub actual: usize,
}

impl fmt::Display for DimensionMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} dimension mismatch: expected {}, got {}",
            self.what, self.expected, self.actual
        )
    }
}

impl std::error::Error for DimensionMismatch {}

impl DimensionMismatch {
    pub(crate) fn check(what: &'static str, expected: usize, actual: usize) -> Result<(), Self> {
        if expected == actual {
            Ok(())
        } else {
            Err(DimensionMismatch {
                what,
                expected,
                actual,
            })
        }
    }
}
