//! Beliefs over which local equilibrium the other agents are playing.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Duration;

use crate::error::{check_dim, Error, Result};
use crate::game::{DynamicGame, DynamicsModel, Matrix, Vector};
use crate::solver::{
    iterative_lq_solve_with, LocalNashSolution, RationalityBeta, SolverOptions,
};

/// Tie tolerance of [`Belief::argmax`].
pub const ARGMAX_TIE: f64 = 1e-12;

/// Per-mode log-likelihoods are clamped from below at this value.
pub const LOG_LIKELIHOOD_FLOOR: f64 = -50.0;

/// A probability vector over modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("belief over zero modes".into()));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("not a distribution: {probs:?}")));
        }
        Ok(Self(probs.into_iter().map(|p| p / sum).collect()))
    }

    pub fn uniform(modes: usize) -> Self {
        Self(vec![1.0 / modes as f64; modes])
    }

    pub fn degenerate(modes: usize, mode: usize) -> Self {
        let mut p = vec![0.0; modes];
        p[mode] = 1.0;
        Self(p)
    }

    /// Normalizes `exp(log_weights)` with log-sum-exp. `None` if no weight is finite.
    pub fn from_log_weights(log_weights: &[f64]) -> Option<Self> {
        let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        Some(Self(w.into_iter().map(|x| x / sum).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most likely mode. Weights within `ARGMAX_TIE` of the largest count as
    /// tied and go to the lowest index, so exact mathematical ties (mirrored
    /// scenarios) do not hinge on rounding.
    pub fn argmax(&self) -> usize {
        let top = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.0.iter().position(|p| *p >= top - ARGMAX_TIE).unwrap_or(0)
    }

    /// Bayes rule in the log domain: `b'(z) ∝ b(z) exp(log_lik[z])`.
    pub fn bayes(&self, log_lik: &[f64]) -> Option<Self> {
        let lw: Vec<f64> = self
            .0
            .iter()
            .zip(log_lik)
            .map(|(p, l)| p.ln() + l)
            .collect();
        Self::from_log_weights(&lw)
    }
}

/// Local equilibria solved from a common joint state.
#[derive(Debug, Clone)]
pub struct ModeBank {
    pub game: Arc<DynamicGame>,
    pub modes: Vec<LocalNashSolution>,
    pub x_solve: Vector,
    /// Control step at which the bank was solved; policies are indexed relative to it.
    pub solve_step: usize,
    pub solve_time: Duration,
}

impl ModeBank {
    pub fn new(
        game: Arc<DynamicGame>,
        modes: Vec<LocalNashSolution>,
        x_solve: Vector,
        solve_step: usize,
    ) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty mode bank".into()))?;
        for m in &modes {
            check_dim("agents per mode", first.num_agents(), m.num_agents())?;
            check_dim("mode horizon", first.nominal.len(), m.nominal.len())?;
            if m.beta != first.beta {
                return Err(Error::InvalidArgument("modes disagree on beta".into()));
            }
        }
        check_dim("solve state", game.state_dim(), x_solve.len())?;
        Ok(Self {
            game,
            modes,
            x_solve,
            solve_step,
            solve_time: Duration::ZERO,
        })
    }

    /// Solves one mode per seed from `x`; mode `z` comes from `seeds[z]`.
    pub fn solve(
        game: Arc<DynamicGame>,
        x: &Vector,
        step: usize,
        seeds: &[Vec<Vector>],
        beta: RationalityBeta,
        opts: &SolverOptions,
    ) -> Result<Self> {
        let start = std::time::Instant::now();
        let modes = seeds
            .iter()
            .enumerate()
            .map(|(z, s)| iterative_lq_solve_with(&game, x, s, beta, opts).map(|m| m.with_mode(z)))
            .collect::<Result<Vec<_>>>()?;
        let mut bank = Self::new(game, modes, x.clone(), step)?;
        bank.solve_time = start.elapsed();
        Ok(bank)
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn beta(&self) -> RationalityBeta {
        self.modes[0].beta
    }

    /// Policy time index for an absolute control step.
    pub fn local_step(&self, step: usize) -> usize {
        step.saturating_sub(self.solve_step)
    }
}

/// `b0(z) ∝ exp(-beta sum_i V^{i,z}_0(x0))`.
pub fn prior_belief(modes: &ModeBank, x0: &Vector, beta: RationalityBeta) -> Belief {
    let lw: Vec<f64> = modes
        .modes
        .iter()
        .map(|m| -beta.get() * m.values.iter().map(|v| v.eval(0, x0)).sum::<f64>())
        .collect();
    Belief::from_log_weights(&lw).unwrap_or_else(|| {
        log::warn!("prior weights are not finite; using a uniform belief");
        Belief::uniform(modes.num_modes())
    })
}

/// Result of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefUpdate {
    pub belief: Belief,
    /// False when every mode hit the likelihood floor and the prior was kept.
    pub informative: bool,
}

fn gaussian_log_density(x: &Vector, mean: &Vector, cov: &Matrix) -> f64 {
    let d = x - mean;
    let k = d.len() as f64;
    match cov.clone().cholesky() {
        Some(c) => {
            let sol = c.solve(&d);
            let log_det = 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            -0.5 * (d.dot(&sol) + log_det + k * (2.0 * PI).ln())
        }
        None => f64::NEG_INFINITY,
    }
}

fn floored(log_lik: Vec<f64>, b: &Belief) -> BeliefUpdate {
    let informative = log_lik.iter().any(|l| *l > LOG_LIKELIHOOD_FLOOR);
    if !informative {
        return BeliefUpdate {
            belief: b.clone(),
            informative,
        };
    }
    let ll: Vec<f64> = log_lik
        .into_iter()
        .map(|l| if l.is_nan() { LOG_LIKELIHOOD_FLOOR } else { l.max(LOG_LIKELIHOOD_FLOOR) })
        .collect();
    BeliefUpdate {
        belief: b.bayes(&ll).unwrap_or_else(|| b.clone()),
        informative,
    }
}

/// Log-likelihood of the other agents' observed controls under each mode's
/// Gaussian policies, evaluated in feedback form at the state `x` where the
/// controls were applied.
pub fn control_log_likelihoods(
    modes: &ModeBank,
    ego: usize,
    t: usize,
    x: &Vector,
    u_others: &Vector,
) -> Result<Vec<f64>> {
    let others: Vec<usize> = (0..modes.game.num_agents()).filter(|&i| i != ego).collect();
    let dim: usize = others.iter().map(|&i| modes.game.control_range(i).len()).sum();
    check_dim("other agents' controls", dim, u_others.len())?;
    Ok(modes
        .modes
        .iter()
        .map(|m| {
            let mut off = 0;
            let mut ll = 0.0;
            for &j in &others {
                let p = &m.policies[j];
                let n = modes.game.control_range(j).len();
                let obs = u_others.rows(off, n).into_owned();
                ll += gaussian_log_density(&obs, &p.mean(t, x), p.covariance(t));
                off += n;
            }
            ll
        })
        .collect())
}

/// Maximum-entropy Bayesian filter step on observed non-ego controls.
pub fn belief_update(
    b: &Belief,
    modes: &ModeBank,
    ego: usize,
    t: usize,
    x: &Vector,
    u_others: &Vector,
) -> Result<BeliefUpdate> {
    check_dim("belief size", modes.num_modes(), b.len())?;
    let ll = control_log_likelihoods(modes, ego, t, x, u_others)?;
    Ok(floored(ll, b))
}

/// Non-ego slice of a joint control vector.
pub fn others_controls(game: &DynamicGame, ego: usize, u: &Vector) -> Vector {
    let parts: Vec<f64> = (0..game.num_agents())
        .filter(|&i| i != ego)
        .flat_map(|i| {
            let r = game.control_range(i);
            u.rows(r.start, r.len()).iter().cloned().collect::<Vec<_>>()
        })
        .collect();
    Vector::from_vec(parts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlEstimate {
    pub controls: Vector,
    pub residual: f64,
    pub low_confidence: bool,
}

/// Least-squares joint control explaining an observed transition, by
/// Gauss-Newton from zero.
pub fn estimate_controls(
    dynamics: &dyn DynamicsModel,
    x: &Vector,
    x_next: &Vector,
) -> Result<ControlEstimate> {
    check_dim("state", dynamics.state_dim(), x.len())?;
    check_dim("next state", dynamics.state_dim(), x_next.len())?;
    let m = dynamics.control_dim();
    let mut u = Vector::zeros(m);
    let mut r = x_next - dynamics.step(x, &u);
    for _ in 0..20 {
        let (_, b) = dynamics.linearize(x, &u);
        let btb = b.transpose() * &b + Matrix::identity(m, m) * 1e-12;
        let du = match btb.cholesky() {
            Some(c) => c.solve(&(b.transpose() * &r)),
            None => break,
        };
        u += &du;
        r = x_next - dynamics.step(x, &u);
        if du.amax() < 1e-12 {
            break;
        }
    }
    let residual = r.norm();
    Ok(ControlEstimate {
        low_confidence: !(residual <= 1e-2 * x_next.norm()),
        controls: u,
        residual,
    })
}

/// Baseline filter: isotropic Gaussian likelihood of the observed non-ego
/// positions about each mode's nominal prediction at step `t`.
pub fn naive_belief_update(
    b: &Belief,
    modes: &ModeBank,
    t: usize,
    position_indices: &[usize],
    observed: &Vector,
    sigma: f64,
) -> Result<BeliefUpdate> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    check_dim("observed positions", position_indices.len(), observed.len())?;
    check_dim("belief size", modes.num_modes(), b.len())?;
    let ll: Vec<f64> = modes
        .modes
        .iter()
        .map(|m| {
            let states = &m.nominal.states;
            let pred = &states[t.min(states.len() - 1)];
            let d2: f64 = position_indices
                .iter()
                .zip(observed.iter())
                .map(|(&i, o)| (o - pred[i]).powi(2))
                .sum();
            let k = position_indices.len() as f64;
            -0.5 * d2 / (sigma * sigma) - k * (sigma * (2.0 * PI).sqrt()).ln()
        })
        .collect();
    Ok(floored(ll, b))
}

/// Default measurement standard deviation of the naive filter, in meters.
pub const NAIVE_SIGMA: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{rollout, SingleIntegrator};
    use crate::toy::ToyGame;
    use proptest::prelude::*;

    fn toy_bank(eps: f64) -> ModeBank {
        ToyGame::new(eps, 0.5).unwrap().mode_bank().unwrap()
    }

    #[test]
    fn belief_validation() {
        assert!(Belief::new(vec![]).is_err());
        assert!(Belief::new(vec![0.5, 0.6]).is_err());
        assert!(Belief::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(Belief::new(vec![0.5, 0.5]).unwrap().argmax(), 0);
        assert_eq!(Belief::new(vec![0.0, 1.0]).unwrap().argmax(), 1);
        assert_eq!(Belief::new(vec![0.5 - 1e-15, 0.5 + 1e-15]).unwrap().argmax(), 0);
        assert_eq!(Belief::new(vec![0.5 - 1e-9, 0.5 + 1e-9]).unwrap().argmax(), 1);
    }

    #[test]
    fn toy_prior() {
        let bank = toy_bank(0.1);
        let b0 = prior_belief(&bank, &Vector::zeros(2), bank.beta());
        assert!((b0.probs()[0] - 0.52).abs() < 0.02, "{b0:?}");
        assert!(b0.probs()[0] > b0.probs()[1]);
    }

    #[test]
    fn identical_modes_give_uniform_prior() {
        let mut bank = toy_bank(0.1);
        bank.modes[1] = bank.modes[0].clone();
        let b0 = prior_belief(&bank, &Vector::zeros(2), bank.beta());
        assert_eq!(b0.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn hot_limit_prior_is_uniform() {
        let bank = toy_bank(0.1);
        let b0 = prior_belief(&bank, &Vector::zeros(2), RationalityBeta::new(1e-12).unwrap());
        assert!((b0.probs()[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn bayes_two_to_one() {
        let b = Belief::uniform(2).bayes(&[2f64.ln(), 0.0]).unwrap();
        assert!((b.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn extreme_ratios_stay_finite() {
        let b = Belief::uniform(2);
        for l in [300.0, -300.0] {
            let post = b.bayes(&[l, -l]).unwrap();
            assert!(post.probs().iter().all(|p| p.is_finite()));
            assert!((post.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_controls_identify_the_mode() {
        let bank = toy_bank(0.1);
        let x0 = Vector::zeros(2);
        let b = Belief::uniform(2);
        let up = belief_update(&b, &bank, 0, 0, &x0, &Vector::from_element(1, 0.73)).unwrap();
        assert!(up.informative);
        // hand computation with the two Gaussians N(m_z, s_z)
        let dens = |m: &LocalNashSolution| {
            let (mu, s) = (m.policies[1].mean(0, &x0)[0], m.policies[1].covariance(0)[(0, 0)]);
            (-(0.73 - mu).powi(2) / (2.0 * s)).exp() / (2.0 * PI * s).sqrt()
        };
        let (d0, d1) = (dens(&bank.modes[0]), dens(&bank.modes[1]));
        assert!((up.belief.probs()[0] - d0 / (d0 + d1)).abs() < 1e-12);
        assert!(up.belief.probs()[0] > 0.8);
        let mut twin = bank.clone();
        twin.modes[1] = twin.modes[0].clone();
        let prior = Belief::new(vec![0.3, 0.7]).unwrap();
        let same = belief_update(&prior, &twin, 0, 0, &x0, &Vector::from_element(1, 0.2)).unwrap();
        assert!((same.belief.probs()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn wild_observation_keeps_prior() {
        let bank = toy_bank(0.1);
        let b = Belief::new(vec![0.3, 0.7]).unwrap();
        let up = belief_update(&b, &bank, 0, 0, &Vector::zeros(2), &Vector::from_element(1, 40.0)).unwrap();
        assert!(!up.informative);
        assert_eq!(up.belief, b);
    }

    #[test]
    fn integrator_estimate_is_difference() {
        let dynamics = SingleIntegrator { dim: 3 };
        let x = Vector::from_vec(vec![0.1, -2.0, 3.0]);
        let y = Vector::from_vec(vec![0.4, -1.0, 2.5]);
        let est = estimate_controls(&dynamics, &x, &y).unwrap();
        assert!((est.controls - (&y - &x)).amax() < 1e-12);
        assert!(!est.low_confidence);
    }

    #[test]
    fn naive_filter_symmetry_and_domination() {
        let bank = toy_bank(0.1);
        let b = Belief::uniform(2);
        // the modes predict player 2 near +-0.73 after one step
        let mid = 0.5 * (bank.modes[0].nominal.states[1][1] + bank.modes[1].nominal.states[1][1]);
        let eq = naive_belief_update(&b, &bank, 1, &[1], &Vector::from_element(1, mid), 0.1).unwrap();
        assert!((eq.belief.probs()[0] - 0.5).abs() < 1e-9);
        let on = naive_belief_update(&b, &bank, 1, &[1], &Vector::from_element(1, -0.73), 0.05).unwrap();
        assert!(on.belief.probs()[1] > 0.999);
        assert!(naive_belief_update(&b, &bank, 1, &[1], &Vector::from_element(1, 0.0), 0.0).is_err());
    }

    #[test]
    fn estimate_recovers_linear_controls() {
        let toy = ToyGame::new(0.1, 0.5).unwrap();
        let game = toy.game();
        let u = Vector::from_vec(vec![0.55, -0.73]);
        let traj = rollout(&game, &toy.x0(), &[u.clone()]).unwrap();
        let est = estimate_controls(game.dynamics().as_ref(), &traj.states[0], &traj.states[1]).unwrap();
        assert!((est.controls - u).amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn updates_stay_on_simplex(
            p in 0.001f64..0.999,
            lls in proptest::collection::vec(proptest::collection::vec(-400.0f64..400.0, 2), 1..30),
        ) {
            let mut b = Belief::new(vec![p, 1.0 - p]).unwrap();
            for ll in lls {
                b = floored(ll, &b).belief;
                let s: f64 = b.probs().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(b.probs().iter().all(|q| *q >= 0.0));
            }
        }

        #[test]
        fn permutation_equivariance(p in 0.01f64..0.99, l0 in -40.0f64..10.0, l1 in -40.0f64..10.0) {
            let b = Belief::new(vec![p, 1.0 - p]).unwrap();
            let swapped = Belief::new(vec![1.0 - p, p]).unwrap();
            let a = b.bayes(&[l0, l1]).unwrap();
            let c = swapped.bayes(&[l1, l0]).unwrap();
            prop_assert!((a.probs()[0] - c.probs()[1]).abs() < 1e-12);
        }

        #[test]
        fn two_updates_equal_one_squared(p in 0.01f64..0.99, l0 in -20.0f64..5.0, l1 in -20.0f64..5.0) {
            let b = Belief::new(vec![p, 1.0 - p]).unwrap();
            let twice = b.bayes(&[l0, l1]).unwrap().bayes(&[l0, l1]).unwrap();
            let once = b.bayes(&[2.0 * l0, 2.0 * l1]).unwrap();
            prop_assert!((twice.probs()[0] - once.probs()[0]).abs() < 1e-12);
        }
    }
}
