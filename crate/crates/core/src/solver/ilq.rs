//! Outer iterative-LQ loop for nonlinear games.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{lq_approximate, rollout, DynamicGame, Trajectory, Vector};

use super::lq_game::{damped_backward_pass, LqGameSolution};
use super::policy::{AffineGaussianPolicy, QuadraticValue, RationalityBeta};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverOptions {
    /// Converged when a full step would change no nominal control by more than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub step_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            max_iterations: 100,
            max_halvings: 20,
            step_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub final_step: f64,
    pub converged: bool,
    pub stationarity_residual: f64,
    pub regularized: usize,
}

/// One local (maximum-entropy) LQ Nash equilibrium, tagged with its mode.
#[derive(Debug, Clone)]
pub struct LocalNashSolution {
    pub mode: usize,
    pub nominal: Arc<Trajectory>,
    pub policies: Vec<AffineGaussianPolicy>,
    pub values: Vec<QuadraticValue>,
    pub beta: RationalityBeta,
    pub diagnostics: SolveDiagnostics,
}

impl LocalNashSolution {
    pub fn num_agents(&self) -> usize {
        self.policies.len()
    }

    pub fn with_mode(mut self, mode: usize) -> Self {
        self.mode = mode;
        self
    }

    /// Joint mean control of all agents at step `t` and state `x`.
    pub fn joint_mean(&self, t: usize, x: &Vector) -> Vector {
        let parts: Vec<Vector> = self.policies.iter().map(|p| p.mean(t, x)).collect();
        let total = parts.iter().map(|p| p.len()).sum();
        let mut out = Vector::zeros(total);
        let mut off = 0;
        for p in parts {
            out.rows_mut(off, p.len()).copy_from(&p);
            off += p.len();
        }
        out
    }

    /// Controls from rolling the policy means out in closed loop from `x`,
    /// `shift` steps into the plan, holding the last control once the plan
    /// runs out. Seeds a re-solve that keeps this solution's structure even
    /// when `x` is off the nominal.
    pub fn shifted_closed_loop_controls(&self, game: &DynamicGame, x: &Vector, shift: usize) -> Vec<Vector> {
        let steps = self.nominal.controls.len();
        let mut x = x.clone();
        let mut out: Vec<Vector> = Vec::with_capacity(steps);
        for t in 0..steps {
            let u = match out.last() {
                Some(last) if t + shift >= steps => last.clone(),
                _ => self.joint_mean((t + shift).min(steps - 1), &x),
            };
            x = game.dynamics().step(&x, &u);
            out.push(u);
        }
        out
    }

    fn from_lq(
        sol: LqGameSolution,
        beta: RationalityBeta,
        diagnostics: SolveDiagnostics,
    ) -> Self {
        let policies = sol.gaussian_policies(beta);
        let nominal = sol.laws[0].nominal.clone();
        Self {
            mode: 0,
            nominal,
            policies,
            values: sol.values,
            beta,
            diagnostics,
        }
    }
}

fn forward(
    game: &DynamicGame,
    x0: &Vector,
    sol: &LqGameSolution,
    alpha: f64,
) -> Option<Trajectory> {
    let nominal = &sol.laws[0].nominal;
    let steps = nominal.controls.len();
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for t in 0..steps {
        let dx = &x - &nominal.states[t];
        let mut u = nominal.controls[t].clone();
        for law in &sol.laws {
            let r = game.control_range(law.agent);
            let du = &law.gains[t] * &dx + &law.feedforward[t] * alpha;
            let mut seg = u.rows_mut(r.start, r.len());
            seg -= du;
        }
        let next = game.dynamics().step(&x, &u);
        if !next.iter().chain(u.iter()).all(|v| v.is_finite()) {
            return None;
        }
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    states.push(x);
    Some(Trajectory { states, controls })
}

fn solve_at(game: &DynamicGame, traj: &Trajectory, beta: f64, damping: f64) -> Result<LqGameSolution> {
    let lq = lq_approximate(game, traj)?;
    damped_backward_pass(&lq, Some(beta), damping)
}

/// Iterates LQ approximation and maximum-entropy LQ solves with a backtracking
/// line search on the stationarity residual, starting from `seed`'s controls.
pub fn iterative_lq_solve(
    game: &DynamicGame,
    x0: &Vector,
    seed: &Trajectory,
    beta: RationalityBeta,
) -> Result<LocalNashSolution> {
    iterative_lq_solve_with(game, x0, &seed.controls, beta, &SolverOptions::default())
}

pub fn iterative_lq_solve_with(
    game: &DynamicGame,
    x0: &Vector,
    seed_controls: &[Vector],
    beta: RationalityBeta,
    opts: &SolverOptions,
) -> Result<LocalNashSolution> {
    let mut traj = rollout(game, x0, seed_controls)?;
    if !traj.states.iter().all(|x| x.iter().all(|v| v.is_finite())) {
        return Err(Error::Diverged { iteration: 0 });
    }
    let b = beta.get();
    // Levenberg-Marquardt style damping of the own-control blocks; it only
    // shapes the search direction and is zero in the reported solution
    let mut damping = 0.0;
    let mut sol = solve_at(game, &traj, b, damping)?;
    let mut best: Option<(Trajectory, f64)> = None;
    let mut iterations = 0;
    let mut final_step = 1.0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        if sol.max_feedforward < opts.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut alpha = 1.0;
        let mut accepted: Option<(Trajectory, LqGameSolution, f64)> = None;
        for _ in 0..=opts.max_halvings {
            if let Some(cand) = forward(game, x0, &sol, alpha) {
                if let Ok(cand_sol) = solve_at(game, &cand, b, damping) {
                    if cand_sol.stationarity_residual < sol.stationarity_residual {
                        accepted = Some((cand, cand_sol, alpha));
                        break;
                    }
                }
            }
            alpha *= opts.step_factor;
        }
        let keep_best = best
            .as_ref()
            .map_or(true, |(_, r)| sol.stationarity_residual < *r);
        if keep_best {
            best = Some((traj.clone(), sol.stationarity_residual));
        }
        match accepted {
            Some((cand, cand_sol, alpha)) => {
                traj = cand;
                sol = cand_sol;
                final_step = alpha;
                if alpha == 1.0 {
                    damping = if damping < 1e-6 { 0.0 } else { damping * 0.1 };
                }
            }
            None => {
                damping = (damping * 10.0).max(1e-2);
                if damping > 1e8 {
                    break;
                }
                sol = solve_at(game, &traj, b, damping)?;
                final_step = 0.0;
            }
        }
    }

    if !converged {
        if let Some((best_traj, r)) = best {
            if r < sol.stationarity_residual {
                traj = best_traj;
            }
        }
    }
    let sol = solve_at(game, &traj, b, 0.0)?;
    let diagnostics = SolveDiagnostics {
        iterations,
        final_step,
        converged,
        stationarity_residual: sol.stationarity_residual,
        regularized: sol.regularized,
    };
    Ok(LocalNashSolution::from_lq(sol, beta, diagnostics))
}

/// Rolls out the policy means in closed loop from `x0`. If `deviation` is
/// given, that agent instead plays its nominal controls plus the offsets open
/// loop while everyone else keeps reacting through their feedback laws.
pub fn closed_loop_rollout(
    game: &DynamicGame,
    x0: &Vector,
    sol: &LocalNashSolution,
    deviation: Option<(usize, &[Vector])>,
) -> Trajectory {
    let steps = sol.nominal.controls.len();
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for t in 0..steps {
        let mut u = sol.joint_mean(t, &x);
        if let Some((agent, offsets)) = deviation {
            let r = game.control_range(agent);
            let own = sol.nominal.controls[t].rows(r.start, r.len()) + &offsets[t];
            u.rows_mut(r.start, r.len()).copy_from(&own);
        }
        let next = game.dynamics().step(&x, &u);
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    states.push(x);
    Trajectory { states, controls }
}

/// Largest cost decrease any agent achieves over the given unilateral
/// open-loop deviations; a local Nash equilibrium keeps this near zero.
pub fn best_unilateral_improvement(
    game: &DynamicGame,
    x0: &Vector,
    sol: &LocalNashSolution,
    deviations: &[(usize, Vec<Vector>)],
) -> Result<f64> {
    let base = closed_loop_rollout(game, x0, sol, None);
    let base_costs: Vec<f64> = (0..game.num_agents())
        .map(|i| crate::game::evaluate_cost(game, &base, i))
        .collect::<Result<_>>()?;
    let mut worst = f64::NEG_INFINITY;
    for (agent, offsets) in deviations {
        let dev = closed_loop_rollout(game, x0, sol, Some((*agent, offsets)));
        let cost = crate::game::evaluate_cost(game, &dev, *agent)?;
        worst = worst.max(base_costs[*agent] - cost);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{LinearDynamics, Matrix, QuadraticObjective};
    use crate::toy::ToyGame;

    fn beta(b: f64) -> RationalityBeta {
        RationalityBeta::new(b).unwrap()
    }

    fn lq_pursuit(horizon: usize) -> DynamicGame {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]);
        let b = Matrix::from_row_slice(2, 2, &[0.1, 0.0, 0.05, 0.2]);
        let p1 = QuadraticObjective {
            q: Matrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]),
            q_lin: Vector::from_vec(vec![0.2, 0.0]),
            r: Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            r_lin: Vector::zeros(2),
            s: Matrix::zeros(2, 2),
            qf: Matrix::identity(2, 2) * 2.0,
            qf_lin: Vector::zeros(2),
        };
        let p2 = QuadraticObjective {
            q: Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]),
            q_lin: Vector::from_vec(vec![0.0, -0.3]),
            r: Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.5]),
            r_lin: Vector::zeros(2),
            s: Matrix::zeros(2, 2),
            qf: Matrix::identity(2, 2),
            qf_lin: Vector::zeros(2),
        };
        DynamicGame::new(
            Arc::new(LinearDynamics { a, b }),
            vec![Arc::new(p1), Arc::new(p2)],
            &[1, 1],
            horizon,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn lq_game_converges_in_one_iteration() {
        let game = lq_pursuit(15);
        let x0 = Vector::from_vec(vec![1.0, -1.0]);
        let zero = vec![Vector::zeros(2); 14];
        let sol = iterative_lq_solve_with(&game, &x0, &zero, beta(2.0), &SolverOptions::default())
            .unwrap();
        assert!(sol.diagnostics.converged);
        assert_eq!(sol.diagnostics.iterations, 1);
        // the nominal equals the closed-loop rollout of the one-shot LQ solution
        let seed = rollout(&game, &x0, &zero).unwrap();
        let direct = solve_at(&game, &seed, 2.0, 0.0).unwrap();
        let once = forward(&game, &x0, &direct, 1.0).unwrap();
        for (a, b) in once.controls.iter().zip(&sol.nominal.controls) {
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn toy_modes_from_opposite_seeds() {
        let toy = ToyGame::new(0.1, 0.5).unwrap();
        let game = toy.game();
        for (seed, sign) in [(1.0, 1.0), (-1.0, -1.0)] {
            let sol = iterative_lq_solve(&game, &toy.x0(), &toy.seed(0.0, seed), toy.beta).unwrap();
            assert!(sol.diagnostics.converged);
            let u = &sol.nominal.controls[0];
            assert!((u[1] - sign * 0.73).abs() < 0.01, "{u}");
            assert!((u[0] - 0.75 * u[1]).abs() < 1e-8);
            let s1 = sol.policies[0].covariance(0)[(0, 0)];
            let s2 = sol.policies[1].covariance(0)[(0, 0)];
            assert!((s1 - 0.5).abs() < 1e-9);
            assert!((s2 - 0.53).abs() < 0.05, "{s2}");
            assert!(sol.diagnostics.stationarity_residual < 1e-12);
        }
    }

    #[test]
    fn converged_toy_modes_are_local_nash() {
        let toy = ToyGame::new(0.1, 0.5).unwrap();
        let game = toy.game();
        for seed in [1.0, -1.0] {
            let sol = iterative_lq_solve(&game, &toy.x0(), &toy.seed(0.0, seed), toy.beta).unwrap();
            let devs: Vec<(usize, Vec<Vector>)> = (0..40)
                .map(|k| {
                    let ang = k as f64 * 0.7;
                    (k % 2, vec![Vector::from_element(1, 1e-3 * ang.cos().signum())])
                })
                .collect();
            let gain = best_unilateral_improvement(&game, &toy.x0(), &sol, &devs).unwrap();
            assert!(gain <= 1e-6, "{gain}");
        }
    }

    #[test]
    fn diverging_seed_is_reported() {
        let toy = ToyGame::new(0.1, 0.5).unwrap();
        let game = toy.game();
        let bad = vec![Vector::from_vec(vec![f64::NAN, 0.0])];
        assert!(iterative_lq_solve_with(&game, &toy.x0(), &bad, toy.beta, &SolverOptions::default()).is_err());
    }
}
