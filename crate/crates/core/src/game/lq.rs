use std::ops::Range;

use nalgebra::SymmetricEigen;

use super::cost::{StageExpansion, TerminalExpansion};
use super::{DynamicGame, Matrix, Trajectory};
use crate::error::{check_dim, Error, Result};

/// Smallest eigenvalue allowed in an agent's own-control Hessian block.
pub const MIN_OWN_EIGENVALUE: f64 = 1e-6;

/// Linearized dynamics and per-agent quadratic costs at one control step.
#[derive(Debug, Clone)]
pub struct LqStage {
    pub a: Matrix,
    /// Joint input matrix; agent `i`'s block is `b.columns(range_i)`.
    pub b: Matrix,
    pub costs: Vec<StageExpansion>,
}

/// A linear-quadratic game in deviation variables `dx = x - x_bar`,
/// `du = u - u_bar` about a nominal trajectory.
#[derive(Debug, Clone)]
pub struct LqApproximation {
    pub nominal: Trajectory,
    pub stages: Vec<LqStage>,
    pub terminal: Vec<TerminalExpansion>,
    pub control_ranges: Vec<Range<usize>>,
    /// `(state, control)` ranges of the diagonal blocks of every `a` and `b`;
    /// a single block spanning everything when the dynamics are coupled.
    pub blocks: Vec<(Range<usize>, Range<usize>)>,
    /// Number of (stage, agent) own-control blocks that needed a shift.
    pub regularized: usize,
}

impl LqApproximation {
    pub fn num_agents(&self) -> usize {
        self.control_ranges.len()
    }

    pub fn state_dim(&self) -> usize {
        self.nominal.states[0].len()
    }

    pub fn control_dim(&self) -> usize {
        self.control_ranges.last().map(|r| r.end).unwrap_or(0)
    }

    /// Input matrix `B^i_t` of one agent.
    pub fn input_matrix(&self, t: usize, agent: usize) -> Matrix {
        let r = &self.control_ranges[agent];
        self.stages[t].b.columns(r.start, r.len()).into_owned()
    }
}

/// Shifts the diagonal block `range` of `m` so its smallest eigenvalue is at
/// least [`MIN_OWN_EIGENVALUE`]. Returns the shift applied (0 if none).
pub fn regularize_own_block(m: &mut Matrix, range: &Range<usize>) -> f64 {
    let block = m
        .view((range.start, range.start), (range.len(), range.len()))
        .into_owned();
    let sym = (&block + block.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    if min_eig >= MIN_OWN_EIGENVALUE {
        return 0.0;
    }
    let shift = MIN_OWN_EIGENVALUE - min_eig;
    for k in range.clone() {
        m[(k, k)] += shift;
    }
    shift
}

/// Linearizes the dynamics and quadraticizes every agent's cost about a
/// dynamically feasible nominal trajectory.
pub fn lq_approximate(game: &DynamicGame, nominal: &Trajectory) -> Result<LqApproximation> {
    check_dim("trajectory states", game.horizon(), nominal.states.len())?;
    check_dim("trajectory controls", game.horizon() - 1, nominal.controls.len())?;
    let n_agents = game.num_agents();
    let mut regularized = 0;
    let mut stages = Vec::with_capacity(nominal.controls.len());
    for (t, (x, u)) in nominal.states.iter().zip(&nominal.controls).enumerate() {
        let (a, b) = game.dynamics().linearize(x, u);
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDerivative { t });
        }
        let mut costs = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let mut e = game.objective(i).running_expansion(x, u);
            if !e.is_finite() {
                return Err(Error::NonFiniteDerivative { t });
            }
            if regularize_own_block(&mut e.luu, &game.control_range(i)) > 0.0 {
                regularized += 1;
            }
            costs.push(e);
        }
        stages.push(LqStage { a, b, costs });
    }
    let x_last = nominal.states.last().unwrap();
    let mut terminal = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let e = game.objective(i).terminal_expansion(x_last);
        if !e.is_finite() {
            return Err(Error::NonFiniteDerivative {
                t: nominal.states.len() - 1,
            });
        }
        terminal.push(e);
    }
    Ok(LqApproximation {
        nominal: nominal.clone(),
        stages,
        terminal,
        control_ranges: game.control_ranges().to_vec(),
        blocks: game
            .dynamics()
            .blocks()
            .unwrap_or_else(|| vec![(0..game.state_dim(), 0..game.control_dim())]),
        regularized,
    })
}
