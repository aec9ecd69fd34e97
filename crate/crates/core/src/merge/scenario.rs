//! Scenario configuration, the two-player merge game, and mode seeding.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{DynamicGame, DynamicsModel, ProductDynamics, Vector};
use crate::inference::ModeBank;
use crate::solver::{iterative_lq_solve_with, RationalityBeta, SolverOptions};

use super::costs::{CostWeights, MergeObjective};
use super::spline::{CenterlineSpline, SplineSpec};
use super::vehicle::{Bicycle, VehicleState, CONTROL_DIM, N, PX, PY, S, STATE_DIM, V, XI, ZETA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub name: String,
    pub lane: SplineSpec,
    pub v_ref: f64,
    /// Physical radius used by the collision check.
    pub radius: f64,
    /// Radius used by the soft collision cost.
    pub cost_radius: f64,
    /// Arclength still to go to the merge point at the start.
    pub start_distance: f64,
    pub start_speed: f64,
    #[serde(default)]
    pub start_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    pub dt: f64,
    pub horizon: usize,
    pub beta: f64,
    pub wheelbase: f64,
    pub lane_half_width: f64,
    pub steer_rate_max: f64,
    pub accel_max: f64,
    pub merge_point: [f64; 2],
    /// Distance past the merge point that counts as having merged.
    pub merge_clearance: f64,
    #[serde(default)]
    pub weights: CostWeights,
    pub agents: Vec<AgentConfig>,
}

/// `y(x)` of a lane that runs at height `h` and blends into `y = 0` over
/// `[x0, x1]` with a quintic smootherstep.
pub fn merging_lane(h: f64, x_start: f64, x0: f64, x1: f64, x_end: f64) -> SplineSpec {
    let count = ((x_end - x_start) / 0.25).round() as usize;
    let points = (0..=count)
        .map(|k| {
            let x = x_start + (x_end - x_start) * k as f64 / count as f64;
            let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
            let smooth = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
            [x, h * (1.0 - smooth)]
        })
        .collect();
    SplineSpec { points }
}

impl Default for MergeConfig {
    fn default() -> Self {
        let agent = |name: &str, h: f64| AgentConfig {
            name: name.into(),
            lane: merging_lane(h, -8.0, -4.0, 0.0, 6.0),
            v_ref: 1.5,
            radius: 0.2,
            cost_radius: 0.4,
            start_distance: 3.0,
            start_speed: 1.5,
            start_offset: 0.0,
        };
        Self {
            dt: 0.05,
            horizon: 60,
            beta: 2.0,
            wheelbase: 0.33,
            lane_half_width: 0.2,
            steer_rate_max: 1.5,
            accel_max: 2.0,
            merge_point: [0.0, 0.0],
            merge_clearance: 0.5,
            weights: CostWeights::default(),
            agents: vec![agent("ego", 1.5), agent("other", -1.5)],
        }
    }
}

impl MergeConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.agents.len() != 2 {
            return bad("the merge scenario has exactly two agents");
        }
        if !(self.dt > 0.0) || self.horizon < 2 || !(self.beta > 0.0) || !(self.wheelbase > 0.0) {
            return bad("dt, beta and wheelbase must be positive and horizon at least 2");
        }
        let w = &self.weights;
        let all = [
            w.lateral, w.heading, w.steering, w.velocity, w.boundary, w.sharpness, w.steer_rate,
            w.accel, w.actuator, w.collision, w.terminal,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) || !(w.sharpness > 0.0) {
            return bad("cost weights must be non-negative");
        }
        if self.agents.iter().any(|a| !(a.radius > 0.0) || !(a.cost_radius >= 0.0)) {
            return bad("radii must be positive");
        }
        Ok(())
    }
}

/// A built merge: lanes, the joint game, and the start state.
#[derive(Debug, Clone)]
pub struct MergeScenario {
    pub config: MergeConfig,
    pub lanes: Vec<Arc<CenterlineSpline>>,
    /// Arclength of the merge point on each lane.
    pub merge_s: Vec<f64>,
    pub game: Arc<DynamicGame>,
    pub dynamics: Arc<ProductDynamics>,
}

impl MergeScenario {
    pub fn new(config: MergeConfig) -> Result<Self> {
        config.validate()?;
        let lanes: Vec<Arc<CenterlineSpline>> = config
            .agents
            .iter()
            .map(|a| CenterlineSpline::from_points(&a.lane.points, config.lane_half_width).map(Arc::new))
            .collect::<Result<_>>()?;
        let merge_s: Vec<f64> = lanes.iter().map(|l| l.project(config.merge_point).0).collect();
        let dynamics = Arc::new(ProductDynamics::new(
            lanes
                .iter()
                .map(|l| {
                    Arc::new(
                        Bicycle {
                            spline: l.clone(),
                            wheelbase: config.wheelbase,
                        }
                        .discretized(config.dt),
                    ) as Arc<dyn DynamicsModel>
                })
                .collect(),
        ));
        let game = Arc::new(Self::build_game(&config, dynamics.clone(), config.horizon)?);
        Ok(Self {
            config,
            lanes,
            merge_s,
            game,
            dynamics,
        })
    }

    /// Agent `agent`'s objective. The solver uses the Gauss-Newton variant.
    pub fn objective(config: &MergeConfig, agent: usize, gauss_newton: bool) -> MergeObjective {
        let n = config.agents.len();
        MergeObjective {
            agent,
            num_agents: n,
            weights: config.weights.clone(),
            v_ref: config.agents[agent].v_ref,
            half_width: config.lane_half_width,
            clearance: (0..n)
                .map(|j| config.agents[agent].cost_radius + config.agents[j].cost_radius)
                .collect(),
            steer_rate_max: config.steer_rate_max,
            accel_max: config.accel_max,
            gauss_newton,
        }
    }

    fn build_game(config: &MergeConfig, dynamics: Arc<ProductDynamics>, horizon: usize) -> Result<DynamicGame> {
        let n = config.agents.len();
        let objectives = (0..n)
            .map(|i| Arc::new(Self::objective(config, i, true)) as Arc<dyn crate::game::AgentObjective>)
            .collect();
        DynamicGame::new(dynamics, objectives, &vec![CONTROL_DIM; n], horizon, config.dt)
    }

    /// Same scenario with a different planning horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut out = self.clone();
        out.config.horizon = horizon;
        out.game = Arc::new(Self::build_game(&self.config, self.dynamics.clone(), horizon)?);
        Ok(out)
    }

    pub fn initial_state(&self) -> Vector {
        let mut x = Vector::zeros(STATE_DIM * self.lanes.len());
        for (i, a) in self.config.agents.iter().enumerate() {
            let st = VehicleState::on_lane(&self.lanes[i], self.merge_s[i] - a.start_distance, a.start_offset, a.start_speed);
            x.rows_mut(i * STATE_DIM, STATE_DIM).copy_from(&st.to_vector());
        }
        x
    }

    pub fn vehicle(&self, x: &Vector, i: usize) -> VehicleState {
        VehicleState::from_slice(&x.as_slice()[i * STATE_DIM..(i + 1) * STATE_DIM])
    }

    /// Joint-state indices of agent `i`'s position.
    pub fn position_indices(&self, i: usize) -> [usize; 2] {
        [i * STATE_DIM + PX, i * STATE_DIM + PY]
    }

    pub fn distance(&self, x: &Vector) -> f64 {
        let a = self.vehicle(x, 0);
        let b = self.vehicle(x, 1);
        (a.px - b.px).hypot(a.py - b.py)
    }

    /// Signed arclength past the merge point.
    pub fn progress(&self, x: &Vector, i: usize) -> f64 {
        self.vehicle(x, i).s - self.merge_s[i]
    }

    pub fn has_merged(&self, x: &Vector, i: usize) -> bool {
        self.progress(x, i) > self.config.merge_clearance
    }

    /// Feasible seed controls for one ordering: `leader` holds its reference
    /// speed, everyone else slows toward a fraction of theirs. Lateral control
    /// is a simple lane keeper.
    pub fn seed(&self, x0: &Vector, leader: usize, steps: usize) -> Vec<Vector> {
        let dyn_ = self.game.dynamics();
        let n = self.lanes.len();
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut u = Vector::zeros(CONTROL_DIM * n);
            for i in 0..n {
                let o = i * STATE_DIM;
                let kappa = self.lanes[i].kappa(x[o + S]);
                let zeta_des = (self.config.wheelbase * kappa).atan() - 0.8 * x[o + N] - 1.2 * x[o + XI];
                let target = if i == leader {
                    self.config.agents[i].v_ref
                } else {
                    0.35 * self.config.agents[i].v_ref
                };
                let lim_s = self.config.steer_rate_max;
                let lim_a = 0.8 * self.config.accel_max;
                u[i * CONTROL_DIM] = (4.0 * (zeta_des - x[o + ZETA])).clamp(-lim_s, lim_s);
                u[i * CONTROL_DIM + 1] = (2.0 * (target - x[o + V])).clamp(-lim_a, lim_a);
            }
            x = dyn_.step(&x, &u);
            out.push(u);
        }
        out
    }

    /// One seed per mode: mode `z` lets agent `z` go first.
    pub fn seed_modes(&self, x0: &Vector) -> Vec<Vec<Vector>> {
        let steps = self.game.horizon() - 1;
        (0..self.lanes.len()).map(|z| self.seed(x0, z, steps)).collect()
    }

    /// Agent that reaches the merge point first along `states`, or the one
    /// furthest along at the end if nobody does.
    pub fn leader(&self, states: &[Vector]) -> usize {
        let n = self.lanes.len();
        let ahead = |x: &Vector| {
            (0..n)
                .max_by(|&a, &b| self.progress(x, a).total_cmp(&self.progress(x, b)))
                .unwrap_or(0)
        };
        states
            .iter()
            .find(|x| (0..n).any(|i| self.progress(x, i) >= 0.0))
            .or(states.last())
            .map_or(0, ahead)
    }

    /// Solves one mode per ordering from `x`. Each mode is warm-started from
    /// the matching mode of `previous`, replayed in closed loop from `x` at
    /// `step`. When that lands on the wrong ordering before anyone has
    /// reached the merge point, or there is no previous bank, the mode is
    /// solved from the biased seed instead. If no solve finds the ordering,
    /// the warm-started result is kept.
    pub fn solve_bank(
        &self,
        x: &Vector,
        step: usize,
        previous: Option<&ModeBank>,
        beta: RationalityBeta,
        opts: &SolverOptions,
    ) -> Result<ModeBank> {
        let start = std::time::Instant::now();
        let steps = self.game.horizon() - 1;
        let mut modes = Vec::with_capacity(self.lanes.len());
        // once someone is past the merge point no seed can change the order
        let decided = (0..self.lanes.len()).any(|i| self.progress(x, i) >= 0.0);
        for z in 0..self.lanes.len() {
            let warm = match previous {
                Some(bank) => {
                    let shift = step.saturating_sub(bank.solve_step);
                    let seed = bank.modes[z].shifted_closed_loop_controls(&self.game, x, shift);
                    Some(iterative_lq_solve_with(&self.game, x, &seed, beta, opts)?)
                }
                None => None,
            };
            let sol = match warm {
                Some(w) if self.leader(&w.nominal.states) == z || decided => w,
                warm => {
                    let fresh = iterative_lq_solve_with(&self.game, x, &self.seed(x, z, steps), beta, opts)?;
                    match warm {
                        Some(w) if self.leader(&fresh.nominal.states) != z => w,
                        _ => fresh,
                    }
                }
            };
            modes.push(sol.with_mode(z));
        }
        let mut bank = ModeBank::new(self.game.clone(), modes, x.clone(), step)?;
        bank.solve_time = start.elapsed();
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = MergeConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(MergeConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = MergeConfig::default();
        cfg.weights.collision = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = MergeConfig::default();
        cfg.agents.pop();
        assert!(cfg.validate().is_err());
        assert!(MergeConfig::from_toml_str("dt = 0.05").is_err());
    }

    #[test]
    fn lanes_meet_at_the_merge_point() {
        let sc = MergeScenario::new(MergeConfig::default()).unwrap();
        for (lane, s) in sc.lanes.iter().zip(&sc.merge_s) {
            let [x, y] = lane.position(*s);
            assert!(x.hypot(y) < 1e-3, "{x} {y}");
        }
        let x0 = sc.initial_state();
        assert!((sc.progress(&x0, 0) + 3.0).abs() < 1e-9);
        assert!((sc.progress(&x0, 1) + 3.0).abs() < 1e-9);
        assert!(sc.distance(&x0) > 0.8);
    }

    #[test]
    fn seeds_order_the_agents() {
        let sc = MergeScenario::new(MergeConfig::default()).unwrap();
        let x0 = sc.initial_state();
        for (z, seed) in sc.seed_modes(&x0).iter().enumerate() {
            let traj = crate::game::rollout(&sc.game, &x0, seed).unwrap();
            let last = traj.states.last().unwrap();
            assert!(sc.progress(last, z) > sc.progress(last, 1 - z) + 1.0);
            assert!(traj.states.iter().all(|x| sc.vehicle(x, 0).n.abs() < 0.1));
        }
    }
}
