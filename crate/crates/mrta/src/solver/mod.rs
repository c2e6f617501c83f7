//! Dense convex QP solving and the mixed-integer allocation layer.

pub mod miqp;
pub mod qp;

pub use miqp::{solve_miqp, MiqpError, MiqpInstance, MiqpSolution, MiqpStrategy};
pub use qp::{
    solve_qp, verify_kkt, KktReport, LinearInequality, QpError, QpInstance, QpSolution, QpStatus,
};
