//! Feedback and maximum-entropy Nash equilibria of LQ games, and the
//! iterative-LQ loop that finds local equilibria of nonlinear games.

mod ilq;
mod lq_game;
mod policy;

pub use ilq::{
    best_unilateral_improvement, closed_loop_rollout, iterative_lq_solve, iterative_lq_solve_with, LocalNashSolution, SolveDiagnostics,
    SolverOptions,
};
pub use lq_game::{backward_pass, damped_backward_pass, solve_feedback_ne_lq, solve_maxent_ne_lq, LqGameSolution};
pub use policy::{AffineGaussianPolicy, FeedbackLaw, QuadraticValue, RationalityBeta};
