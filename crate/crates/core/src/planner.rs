//! Ego strategies over a bank of local equilibria: QMDP over the mode belief,
//! the most likely mode, or a fixed mode.

use std::time::Instant;

use crate::error::{check_dim, Result};
use crate::game::{regularize_own_block, Matrix, Vector};
use crate::inference::{
    belief_update, estimate_controls, others_controls, prior_belief, Belief, BeliefUpdate,
    ControlEstimate, ModeBank,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Always follow one mode's policy.
    NoInference { mode: usize },
    /// Follow the most likely mode.
    MaximumLikelihood,
    Qmdp,
}

/// What the ego does at one planning tick.
#[derive(Debug, Clone)]
pub struct EgoDecision {
    pub strategy: Strategy,
    /// Ego control at the planning state.
    pub control: Vector,
    /// Feedback gain on the joint state deviation, for the tracker.
    pub gain: Matrix,
    /// Joint state the decision was made at.
    pub state: Vector,
    /// Belief-weighted joint state one step ahead.
    pub predicted_next: Vector,
    /// Belief-weighted nominal joint states from this step to the horizon.
    pub plan: Vec<Vector>,
    pub belief: Belief,
    /// Mode whose policy was executed, if a single one was.
    pub mode: Option<usize>,
    /// Wall time of the bank solve this decision used.
    pub ne_solve_us: f64,
    pub policy_us: f64,
    /// The belief-weighted Hessian needed a shift to be positive definite.
    pub regularized: bool,
}

fn joint_with_ego(bank: &ModeBank, z: usize, ego: usize, t: usize, x: &Vector, u_ego: &Vector) -> Vector {
    let mut u = bank.modes[z].joint_mean(t, x);
    let r = bank.game.control_range(ego);
    u.rows_mut(r.start, r.len()).copy_from(u_ego);
    u
}

fn weighted_plan(b: &Belief, bank: &ModeBank, t: usize) -> Vec<Vector> {
    let len = bank.modes[0].nominal.states.len();
    (t.min(len - 1)..len)
        .map(|k| {
            bank.modes
                .iter()
                .zip(b.probs())
                .fold(Vector::zeros(bank.game.state_dim()), |acc, (m, p)| acc + &m.nominal.states[k] * *p)
        })
        .collect()
}

fn predicted_next(b: &Belief, bank: &ModeBank, ego: usize, t: usize, x: &Vector, u_ego: &Vector) -> Vector {
    let dyn_ = bank.game.dynamics();
    bank.modes
        .iter()
        .enumerate()
        .zip(b.probs())
        .filter(|(_, p)| **p > 0.0)
        .fold(Vector::zeros(x.len()), |acc, ((z, _), p)| {
            acc + dyn_.step(x, &joint_with_ego(bank, z, ego, t, x, u_ego)) * *p
        })
}

fn single_mode(
    strategy: Strategy,
    bank: &ModeBank,
    belief: Belief,
    z: usize,
    ego: usize,
    t: usize,
    x: &Vector,
) -> EgoDecision {
    let start = Instant::now();
    let pol = &bank.modes[z].policies[ego];
    let control = pol.mean(t, x);
    let gain = pol.gain(t).clone();
    let point = Belief::degenerate(bank.num_modes(), z);
    let predicted_next = predicted_next(&point, bank, ego, t, x, &control);
    let plan = weighted_plan(&point, bank, t);
    EgoDecision {
        strategy,
        control,
        gain,
        state: x.clone(),
        predicted_next,
        plan,
        belief,
        mode: Some(z),
        ne_solve_us: bank.solve_time.as_secs_f64() * 1e6,
        policy_us: start.elapsed().as_secs_f64() * 1e6,
        regularized: false,
    }
}

/// QMDP: minimizes `sum_z b(z) [l(x, u, mu_z) + V_z(x'_z)]` over the ego
/// control. Under each mode's LQ model the bracket is
/// `1/2 (u - mu_z)' H_z (u - mu_z)` plus a constant, so the minimizer is the
/// Hessian-weighted average of the mode means.
pub fn qmdp_policy(b: &Belief, bank: &ModeBank, ego: usize, step: usize, x: &Vector) -> Result<EgoDecision> {
    check_dim("belief size", bank.num_modes(), b.len())?;
    let start = Instant::now();
    let t = bank.local_step(step);
    let m = bank.game.control_range(ego).len();
    let nx = bank.game.state_dim();
    let mut h = Matrix::zeros(m, m);
    let mut g = Vector::zeros(m);
    let mut hk = Matrix::zeros(m, nx);
    for (mode, p) in bank.modes.iter().zip(b.probs()) {
        if *p == 0.0 {
            continue;
        }
        let pol = &mode.policies[ego];
        let hz = pol.q_hessian(t) * *p;
        g += &hz * pol.mean(t, x);
        hk += &hz * pol.gain(t);
        h += hz;
    }
    let regularized = regularize_own_block(&mut h, &(0..m)) > 0.0;
    let chol = h.cholesky().expect("regularized Hessian is positive definite");
    let control = chol.solve(&g);
    let gain = chol.solve(&hk);
    let predicted_next = predicted_next(b, bank, ego, t, x, &control);
    let plan = weighted_plan(b, bank, t);
    Ok(EgoDecision {
        strategy: Strategy::Qmdp,
        control,
        gain,
        state: x.clone(),
        predicted_next,
        plan,
        belief: b.clone(),
        mode: None,
        ne_solve_us: bank.solve_time.as_secs_f64() * 1e6,
        policy_us: start.elapsed().as_secs_f64() * 1e6,
        regularized,
    })
}

/// The QMDP objective evaluated directly: true stage cost and dynamics with
/// the other agents on each mode's mean policy, plus that mode's quadratic
/// value at the next step.
pub fn qmdp_objective(b: &Belief, bank: &ModeBank, ego: usize, step: usize, x: &Vector, u_ego: &Vector) -> f64 {
    let t = bank.local_step(step);
    let obj = bank.game.objective(ego);
    bank.modes
        .iter()
        .enumerate()
        .zip(b.probs())
        .map(|((z, mode), p)| {
            let u = joint_with_ego(bank, z, ego, t, x, u_ego);
            let next = bank.game.dynamics().step(x, &u);
            p * (obj.running_cost(x, &u) + mode.values[ego].eval(t + 1, &next))
        })
        .sum()
}

/// Policy of the most likely mode; ties go to the lowest index.
pub fn ml_policy(b: &Belief, bank: &ModeBank, ego: usize, step: usize, x: &Vector) -> EgoDecision {
    let z = b.argmax();
    single_mode(Strategy::MaximumLikelihood, bank, b.clone(), z, ego, bank.local_step(step), x)
}

pub fn noinf_policy(mode: usize, bank: &ModeBank, ego: usize, step: usize, x: &Vector) -> EgoDecision {
    let b = Belief::degenerate(bank.num_modes(), mode);
    single_mode(Strategy::NoInference { mode }, bank, b, mode, ego, bank.local_step(step), x)
}

pub fn decide(strategy: Strategy, b: &Belief, bank: &ModeBank, ego: usize, step: usize, x: &Vector) -> Result<EgoDecision> {
    match strategy {
        Strategy::NoInference { mode } => Ok(noinf_policy(mode, bank, ego, step, x)),
        Strategy::MaximumLikelihood => Ok(ml_policy(b, bank, ego, step, x)),
        Strategy::Qmdp => qmdp_policy(b, bank, ego, step, x),
    }
}

/// One observed transition, and the filter step it produced.
#[derive(Debug, Clone)]
pub struct Inference {
    pub estimate: ControlEstimate,
    pub update: BeliefUpdate,
}

/// Estimates the joint control that moved `prev` to `x` and filters the
/// belief on the other agents' part of it. `bank` must be the bank the
/// controls were computed from.
pub fn infer_step(b: &Belief, bank: &ModeBank, ego: usize, prev_step: usize, prev: &Vector, x: &Vector) -> Result<Inference> {
    let estimate = estimate_controls(bank.game.dynamics().as_ref(), prev, x)?;
    let u_others = others_controls(&bank.game, ego, &estimate.controls);
    let update = belief_update(b, bank, ego, bank.local_step(prev_step), prev, &u_others)?;
    Ok(Inference { estimate, update })
}

/// One agent's fast loop: filters its belief on every observed control step
/// and decides at planning ticks.
#[derive(Debug, Clone)]
pub struct Planner {
    pub ego: usize,
    pub strategy: Strategy,
    belief: Option<Belief>,
    last: Option<(usize, Vector)>,
    pub last_inference: Option<Inference>,
}

impl Planner {
    pub fn new(ego: usize, strategy: Strategy) -> Self {
        Self {
            ego,
            strategy,
            belief: None,
            last: None,
            last_inference: None,
        }
    }

    /// Filter belief, if any bank has been seen.
    pub fn belief(&self) -> Option<&Belief> {
        self.belief.as_ref()
    }

    /// Feeds the state at control step `step`; `bank` is the bank in force
    /// during the transition that ended here.
    pub fn observe(&mut self, bank: &ModeBank, step: usize, x: &Vector) -> Result<()> {
        let b = self
            .belief
            .get_or_insert_with(|| prior_belief(bank, &bank.x_solve, bank.beta()))
            .clone();
        if let Some((prev_step, prev)) = &self.last {
            if step == prev_step + 1 {
                let inf = infer_step(&b, bank, self.ego, *prev_step, prev, x)?;
                self.belief = Some(inf.update.belief.clone());
                self.last_inference = Some(inf);
            }
        }
        self.last = Some((step, x.clone()));
        Ok(())
    }

    pub fn decide(&self, bank: &ModeBank, step: usize, x: &Vector) -> Result<EgoDecision> {
        let b = self
            .belief
            .clone()
            .unwrap_or_else(|| prior_belief(bank, &bank.x_solve, bank.beta()));
        decide(self.strategy, &b, bank, self.ego, step, x)
    }

    /// Observe then decide.
    pub fn plan_step(&mut self, bank: &ModeBank, step: usize, x: &Vector) -> Result<EgoDecision> {
        self.observe(bank, step, x)?;
        self.decide(bank, step, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::ToyGame;

    fn toy_bank() -> ModeBank {
        ToyGame::new(0.1, 0.5).unwrap().mode_bank().unwrap()
    }

    fn b(p: f64) -> Belief {
        Belief::new(vec![p, 1.0 - p]).unwrap()
    }

    #[test]
    fn toy_qmdp_hedges() {
        let bank = toy_bank();
        let x0 = Vector::zeros(2);
        let b0 = prior_belief(&bank, &x0, bank.beta());
        let d = qmdp_policy(&b0, &bank, 0, 0, &x0).unwrap();
        assert!(d.control[0].abs() < 0.03, "{}", d.control[0]);
        assert!(!d.regularized);
    }

    #[test]
    fn degenerate_belief_collapses_to_mode() {
        let bank = toy_bank();
        let x = Vector::from_vec(vec![0.1, -0.2]);
        for z in 0..2 {
            let point = Belief::degenerate(2, z);
            let q = qmdp_policy(&point, &bank, 0, 0, &x).unwrap();
            let m = bank.modes[z].policies[0].mean(0, &x);
            assert!((q.control - m).amax() < 1e-12);
            assert_eq!(ml_policy(&point, &bank, 0, 0, &x).control, noinf_policy(z, &bank, 0, 0, &x).control);
        }
    }

    #[test]
    fn identical_modes_make_strategies_agree() {
        let mut bank = toy_bank();
        bank.modes[1] = bank.modes[0].clone();
        let x = Vector::zeros(2);
        for p in [0.1, 0.5, 0.93] {
            let q = qmdp_policy(&b(p), &bank, 0, 0, &x).unwrap().control;
            let m = ml_policy(&b(p), &bank, 0, 0, &x).control;
            let n = noinf_policy(1, &bank, 0, 0, &x).control;
            assert!((&q - &m).amax() < 1e-12 && (&m - &n).amax() < 1e-12);
        }
    }

    #[test]
    fn ml_tie_break_and_flip() {
        let bank = toy_bank();
        let x = Vector::zeros(2);
        assert_eq!(ml_policy(&b(0.5), &bank, 0, 0, &x).mode, Some(0));
        assert_eq!(ml_policy(&b(0.5 + 1e-9), &bank, 0, 0, &x).mode, Some(0));
        assert_eq!(ml_policy(&b(0.0), &bank, 0, 0, &x).mode, Some(1));
    }

    #[test]
    fn qmdp_is_continuous_and_ml_jumps() {
        let bank = toy_bank();
        let x = Vector::zeros(2);
        let n = 200;
        let q: Vec<f64> = (0..=n).map(|k| qmdp_policy(&b(k as f64 / n as f64), &bank, 0, 0, &x).unwrap().control[0]).collect();
        let m: Vec<f64> = (0..=n).map(|k| ml_policy(&b(k as f64 / n as f64), &bank, 0, 0, &x).control[0]).collect();
        let dq: Vec<f64> = q.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let median = {
            let mut s = dq.clone();
            s.sort_by(f64::total_cmp);
            s[s.len() / 2]
        };
        assert!(dq.iter().all(|d| *d <= 10.0 * median));
        let jumps = m.windows(2).filter(|w| (w[1] - w[0]).abs() > 0.5).count();
        assert_eq!(jumps, 1);
    }

    #[test]
    fn qmdp_minimizes_its_objective() {
        let bank = toy_bank();
        let x = Vector::from_vec(vec![0.05, 0.1]);
        for p in [0.2, 0.52, 0.8] {
            let bel = b(p);
            let d = qmdp_policy(&bel, &bank, 0, 0, &x).unwrap();
            let best = qmdp_objective(&bel, &bank, 0, 0, &x, &d.control);
            for k in 0..100 {
                let u = Vector::from_element(1, -1.5 + 3.0 * k as f64 / 99.0);
                assert!(qmdp_objective(&bel, &bank, 0, 0, &x, &u) >= best - 1e-12);
            }
            for z in 0..2 {
                let mz = bank.modes[z].policies[0].mean(0, &x);
                assert!(qmdp_objective(&bel, &bank, 0, 0, &x, &mz) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn planner_filters_other_agent() {
        let bank = toy_bank();
        let mut planner = Planner::new(0, Strategy::Qmdp);
        let x0 = Vector::zeros(2);
        let first = planner.plan_step(&bank, 0, &x0).unwrap();
        assert!(first.control[0].abs() < 0.03);
        // player 2 plays its mode-2 move
        let x1 = Vector::from_vec(vec![first.control[0], bank.modes[1].policies[1].mean(0, &x0)[0]]);
        planner.observe(&bank, 1, &x1).unwrap();
        assert!(planner.belief().unwrap().probs()[1] > 0.8);
    }
}
