//! Numerical building blocks shared by initialization, fitting and scoring.

mod assignment;
mod lasso;
pub(crate) mod linalg;
mod lds;
mod traces;

pub use assignment::{assignment_cost, linear_sum_assignment};
pub use lasso::{cd_lasso_variant, soft_threshold, BlockStats, LassoBlock, LassoProblem, LassoSolution};
pub use lds::{fit_transition, transition_residual};
pub use traces::{
    solve_traces, trace_objective, DecorrelationTerms, TracePrior, TraceProblem, TraceSolution,
};
