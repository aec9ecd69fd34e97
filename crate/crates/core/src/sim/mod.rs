//! Closed-loop receding-horizon simulation of the merge.
//!
//! Three loops run per episode: the equilibrium re-solve (slow), the belief
//! update and policy (once per control step) and the trajectory tracker
//! (fast). Controls reach the plant through a latency queue, the other
//! agent's acceleration can be disturbed, and every applied control gets a
//! little Gaussian noise.

mod config;
mod episode;
mod experiments;
mod log;

pub use config::{episode_solver_options, EpisodeConfig, LoopPeriods, Perturbation, Rates, Scheduling, StrategyKind};
pub use episode::{run_episode, FREEZE_SECONDS, FREEZE_SPEED_FRACTION};
pub use experiments::{
    default_perturbation, lower_triangle, run_matrix, run_perturb, MatrixCell, MatrixResult, PerturbPair,
};
pub use log::{
    control_total_variation, rate, total_variation, BankRecord, EpisodeLog, EpisodeSummary, Outcome, StepRecord,
};
