//! Optimization drivers and the finite-difference gradient oracle.

mod adam;
mod flows;
mod gradcheck;
mod toy;

pub use adam::Adam;
pub use flows::{
    downsample, optimize_flows, optimize_flows_from, optimize_problem, upsample_flow, Method,
    OptimConfig, Trace,
};
pub use gradcheck::{gradcheck, gradcheck_all, GradOp, GradcheckRow, FD_STEP};
pub use toy::{
    converged_mask, depth_error, iou, same_branch_mask, toy_problem, toy_reconstruct_m3,
    toy_reconstruct_m3_from, ToyConfig, ToyProblem, TOY_CONVERGENCE, TOY_FREQUENCY_HZ,
};

/// Failure of an optimizer run.
#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize, trace: Trace },
    #[error(transparent)]
    Core(#[from] crate::Error),
}
