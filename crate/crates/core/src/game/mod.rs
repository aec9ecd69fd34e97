//! Dynamic games: joint dynamics, per-agent objectives, trajectories and
//! their local linear-quadratic approximations.

pub mod cost;
pub mod dynamics;
pub mod finite_diff;
mod lq;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub use cost::{AgentObjective, QuadraticObjective, StageExpansion, TerminalExpansion};
pub use dynamics::{
    ContinuousDynamics, DynamicsModel, LinearDynamics, ProductDynamics, Rk4, SingleIntegrator,
};
pub use lq::{lq_approximate, regularize_own_block, LqApproximation, LqStage, MIN_OWN_EIGENVALUE};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// An `N`-player general-sum dynamic game over a finite horizon.
///
/// The horizon `T` counts states: a trajectory has `T` states and `T - 1`
/// controls.
#[derive(Debug, Clone)]
pub struct DynamicGame {
    dynamics: Arc<dyn DynamicsModel>,
    objectives: Vec<Arc<dyn AgentObjective>>,
    control_ranges: Vec<Range<usize>>,
    horizon: usize,
    dt: f64,
}

impl DynamicGame {
    pub fn new(
        dynamics: Arc<dyn DynamicsModel>,
        objectives: Vec<Arc<dyn AgentObjective>>,
        control_dims: &[usize],
        horizon: usize,
        dt: f64,
    ) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::InvalidArgument("a game needs at least one agent".into()));
        }
        check_dim("objectives per agent", control_dims.len(), objectives.len())?;
        if horizon < 2 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be at least 2, got {horizon}"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let total: usize = control_dims.iter().sum();
        check_dim("joint control dimension", dynamics.control_dim(), total)?;
        let mut control_ranges = Vec::with_capacity(control_dims.len());
        let mut offset = 0;
        for &m in control_dims {
            if m == 0 {
                return Err(Error::InvalidArgument("agent with empty control".into()));
            }
            control_ranges.push(offset..offset + m);
            offset += m;
        }
        Ok(Self {
            dynamics,
            objectives,
            control_ranges,
            horizon,
            dt,
        })
    }

    /// Same game with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let dims: Vec<usize> = self.control_ranges.iter().map(|r| r.len()).collect();
        Self::new(
            self.dynamics.clone(),
            self.objectives.clone(),
            &dims,
            horizon,
            self.dt,
        )
    }

    pub fn num_agents(&self) -> usize {
        self.objectives.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn dynamics(&self) -> &Arc<dyn DynamicsModel> {
        &self.dynamics
    }

    pub fn objective(&self, agent: usize) -> &Arc<dyn AgentObjective> {
        &self.objectives[agent]
    }

    pub fn control_range(&self, agent: usize) -> Range<usize> {
        self.control_ranges[agent].clone()
    }

    pub fn control_ranges(&self) -> &[Range<usize>] {
        &self.control_ranges
    }
}

/// States `x_1..x_T` and the controls `u_1..u_{T-1}` between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub controls: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial_state(&self) -> &Vector {
        &self.states[0]
    }

    /// Drops the first `k` steps and pads the controls by repeating the last
    /// one, so the result can warm-start a solve from `states[k]`.
    pub fn shifted_controls(&self, k: usize) -> Vec<Vector> {
        let n = self.controls.len();
        (0..n)
            .map(|t| self.controls[(t + k).min(n - 1)].clone())
            .collect()
    }
}

/// Simulates the joint dynamics from `x0` under the given joint controls.
pub fn rollout(game: &DynamicGame, x0: &Vector, controls: &[Vector]) -> Result<Trajectory> {
    check_dim("initial state", game.state_dim(), x0.len())?;
    check_dim("control sequence length", game.horizon() - 1, controls.len())?;
    let mut states = Vec::with_capacity(game.horizon());
    states.push(x0.clone());
    for u in controls {
        check_dim("joint control", game.control_dim(), u.len())?;
        let next = game.dynamics().step(states.last().unwrap(), u);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
    })
}

fn check_trajectory(game: &DynamicGame, traj: &Trajectory) -> Result<()> {
    check_dim("trajectory states", game.horizon(), traj.states.len())?;
    check_dim("trajectory controls", game.horizon() - 1, traj.controls.len())
}

/// `phi^i(x_T) + sum_t l^i(x_t, u_t)` for one agent.
pub fn evaluate_cost(game: &DynamicGame, traj: &Trajectory, agent: usize) -> Result<f64> {
    check_trajectory(game, traj)?;
    if agent >= game.num_agents() {
        return Err(Error::InvalidArgument(format!("no agent {agent}")));
    }
    let obj = game.objective(agent);
    let running: f64 = running_cost_between(game, traj, agent, 0..traj.controls.len());
    Ok(running + obj.terminal_cost(traj.states.last().unwrap()))
}

/// Sum of an agent's running costs over a subrange of control steps.
pub fn running_cost_between(
    game: &DynamicGame,
    traj: &Trajectory,
    agent: usize,
    steps: Range<usize>,
) -> f64 {
    let obj = game.objective(agent);
    steps
        .map(|t| obj.running_cost(&traj.states[t], &traj.controls[t]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrator_game(horizon: usize) -> DynamicGame {
        let obj = QuadraticObjective::diagonal(
            Matrix::identity(1, 1),
            Matrix::identity(1, 1) * 2.0,
            Matrix::identity(1, 1) * 3.0,
        );
        DynamicGame::new(
            Arc::new(SingleIntegrator { dim: 1 }),
            vec![Arc::new(obj)],
            &[1],
            horizon,
            1.0,
        )
        .unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn integrator_rollout() {
        let game = integrator_game(3);
        let traj = rollout(&game, &v(&[0.0]), &[v(&[1.0]), v(&[1.0])]).unwrap();
        let xs: Vec<f64> = traj.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn rollout_rejects_wrong_lengths() {
        let game = integrator_game(3);
        assert!(matches!(
            rollout(&game, &v(&[0.0]), &[v(&[1.0])]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            rollout(&game, &v(&[0.0]), &[v(&[1.0]), v(&[1.0, 2.0])]),
            Err(Error::Dimension { .. })
        ));
        assert!(rollout(&game, &v(&[0.0, 1.0]), &[v(&[1.0]), v(&[1.0])]).is_err());
    }

    #[test]
    fn cost_is_terminal_plus_running() {
        let game = integrator_game(3);
        let traj = rollout(&game, &v(&[1.0]), &[v(&[1.0]), v(&[-1.0])]).unwrap();
        // x = [1, 2, 1]; running: (0.5*1 + 1) + (0.5*4 + 1); terminal: 1.5*1
        let c = evaluate_cost(&game, &traj, 0).unwrap();
        assert!((c - (1.5 + 3.0 + 1.5)).abs() < 1e-12);
    }

    #[test]
    fn game_validation() {
        let obj: Arc<dyn AgentObjective> = Arc::new(QuadraticObjective::diagonal(
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
        ));
        let dyn_: Arc<dyn DynamicsModel> = Arc::new(SingleIntegrator { dim: 1 });
        assert!(DynamicGame::new(dyn_.clone(), vec![obj.clone()], &[1], 1, 0.1).is_err());
        assert!(DynamicGame::new(dyn_.clone(), vec![obj.clone()], &[1], 3, 0.0).is_err());
        assert!(DynamicGame::new(dyn_.clone(), vec![obj.clone()], &[2], 3, 0.1).is_err());
        assert!(DynamicGame::new(dyn_, vec![], &[], 3, 0.1).is_err());
    }
}
