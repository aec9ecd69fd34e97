//! Two-car lane merge: kinematic bicycles on spline lanes with soft costs.

pub mod costs;
pub mod scenario;
pub mod spline;
pub mod vehicle;

pub use costs::{CostWeights, MergeObjective};
pub use scenario::{merging_lane, AgentConfig, MergeConfig, MergeScenario};
pub use spline::{CenterlineSpline, CubicSpline, SplineSpec};
pub use vehicle::{
    bicycle_step, Bicycle, VehicleState, ACCEL, CONTROL_DIM, N, PX, PY, S, SINGULARITY_MARGIN, STATE_DIM,
    STEER_RATE, THETA, V, XI, ZETA,
};
