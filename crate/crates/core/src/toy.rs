//! The one-step, two-player toy game with a bimodal non-ego objective, and
//! brute-force oracles for its exact Nash and exact maximum-entropy solutions.
//!
//! Player 1 tracks player 2: `J1 = u1^2/2 + 3/2 (x1 - x2)^2`. Player 2 wants to
//! reach either `+1` or `-1`: `J2 = u2^2/2 + SM(3/2 (x2 - 1)^2, 3/2 (x2 + 1)^2 + eps)`
//! where `SM(a, b) = -ln(e^-a + e^-b)`. Both start at zero with single
//! integrator dynamics, so `x_1 = u_0`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{
    AgentObjective, DynamicGame, Matrix, QuadraticObjective, SingleIntegrator, StageExpansion,
    TerminalExpansion, Trajectory, Vector,
};
use crate::inference::ModeBank;
use crate::solver::{RationalityBeta, SolverOptions};

/// `-ln(e^-a + e^-b)`, evaluated without overflow.
pub fn softmin(a: f64, b: f64) -> f64 {
    let m = a.min(b);
    m - (-(a - b).abs()).exp().ln_1p()
}

/// Value, first and second derivative of `SM(a(x), b(x))` for scalar `x`.
fn softmin_derivatives(a: (f64, f64, f64), b: (f64, f64, f64)) -> (f64, f64, f64) {
    let value = softmin(a.0, b.0);
    // weights e^-a / (e^-a + e^-b), computed from the difference
    let wa = 1.0 / (1.0 + (a.0 - b.0).exp());
    let wb = 1.0 - wa;
    let d1 = wa * a.1 + wb * b.1;
    let d2 = wa * a.2 + wb * b.2 - wa * wb * (a.1 - b.1).powi(2);
    (value, d1, d2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyGame {
    pub epsilon: f64,
    pub beta: RationalityBeta,
}

impl ToyGame {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "toy epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            epsilon,
            beta: RationalityBeta::new(beta)?,
        })
    }

    /// Player 2's terminal cost and its first two derivatives.
    pub fn phi2(&self, x: f64) -> (f64, f64, f64) {
        let a = (1.5 * (x - 1.0).powi(2), 3.0 * (x - 1.0), 3.0);
        let b = (1.5 * (x + 1.0).powi(2) + self.epsilon, 3.0 * (x + 1.0), 3.0);
        softmin_derivatives(a, b)
    }

    /// Player 2's total cost as a function of its own control.
    pub fn j2(&self, u2: f64) -> f64 {
        0.5 * u2 * u2 + self.phi2(u2).0
    }

    pub fn j1(&self, u1: f64, u2: f64) -> f64 {
        0.5 * u1 * u1 + 1.5 * (u1 - u2).powi(2)
    }

    pub fn x0(&self) -> Vector {
        Vector::zeros(2)
    }

    /// The toy as a two-state, horizon-2 dynamic game.
    pub fn game(&self) -> DynamicGame {
        let p1 = QuadraticObjective {
            q: Matrix::zeros(2, 2),
            q_lin: Vector::zeros(2),
            r: Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            r_lin: Vector::zeros(2),
            s: Matrix::zeros(2, 2),
            qf: Matrix::from_row_slice(2, 2, &[3.0, -3.0, -3.0, 3.0]),
            qf_lin: Vector::zeros(2),
        };
        DynamicGame::new(
            Arc::new(SingleIntegrator { dim: 2 }),
            vec![Arc::new(p1), Arc::new(BimodalObjective { toy: *self })],
            &[1, 1],
            2,
            1.0,
        )
        .expect("toy game is well formed")
    }

    /// A feasible one-step trajectory from the origin.
    pub fn seed(&self, u1: f64, u2: f64) -> Trajectory {
        let u = Vector::from_vec(vec![u1, u2]);
        Trajectory {
            states: vec![self.x0(), u.clone()],
            controls: vec![u],
        }
    }

    /// Local LQ MaxEnt equilibria from the origin: mode 0 seeded with player
    /// 2 heading for `+1`, mode 1 for `-1`.
    pub fn mode_bank(&self) -> Result<ModeBank> {
        let seeds = [1.0, -1.0].map(|u2| self.seed(0.0, u2).controls);
        ModeBank::solve(Arc::new(self.game()), &self.x0(), 0, &seeds, self.beta, &SolverOptions::default())
    }
}

/// Player 2's objective: quadratic control effort plus the soft-min terminal cost.
#[derive(Debug, Clone)]
struct BimodalObjective {
    toy: ToyGame,
}

impl AgentObjective for BimodalObjective {
    fn running_cost(&self, _x: &Vector, u: &Vector) -> f64 {
        0.5 * u[1] * u[1]
    }

    fn terminal_cost(&self, x: &Vector) -> f64 {
        self.toy.phi2(x[1]).0
    }

    fn running_expansion(&self, x: &Vector, u: &Vector) -> StageExpansion {
        let mut e = StageExpansion::zeros(2, 2);
        e.value = self.running_cost(x, u);
        e.lu[1] = u[1];
        e.luu[(1, 1)] = 1.0;
        e
    }

    fn terminal_expansion(&self, x: &Vector) -> TerminalExpansion {
        let (v, d1, d2) = self.toy.phi2(x[1]);
        let mut e = TerminalExpansion::zeros(2);
        e.value = v;
        e.lx[1] = d1;
        e.lxx[(1, 1)] = d2;
        e
    }
}

/// Exact Nash equilibrium `(u1, u2)`: player 2's problem is solved by Newton's
/// method from both `+1` and `-1`, keeping the lower cost; player 1's best
/// response is `3/4 u2`.
pub fn exact_ne(toy: &ToyGame) -> (f64, f64) {
    let newton = |mut u: f64| {
        for _ in 0..100 {
            let (_, d1, d2) = toy.phi2(u);
            let g = u + d1;
            let h = 1.0 + d2;
            let step = if h > 1e-9 { g / h } else { g.signum() * 0.1 };
            u -= step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        u
    };
    let right = newton(1.0);
    let left = newton(-1.0);
    let u2 = if toy.j2(right) <= toy.j2(left) { right } else { left };
    (0.75 * u2, u2)
}

/// Uniform quadrature grid on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self {
            lo: -6.0,
            hi: 6.0,
            points: 4001,
        }
    }
}

const REFINE_TOL: f64 = 1e-8;
const MAX_POINTS: usize = 1 << 22;

impl QuadratureGrid {
    fn validate(&self) -> Result<()> {
        if !(self.hi > self.lo) || self.points < 3 {
            return Err(Error::InvalidArgument(format!(
                "bad quadrature grid {self:?}"
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|i| self.lo + h * i as f64).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    fn refined(&self) -> Self {
        Self {
            points: 2 * self.points - 1,
            ..*self
        }
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Halves the grid spacing until the integral of `f` changes by less than
/// `1e-8` (relative). Returns the final grid, the samples and the integral.
fn refine<F: Fn(f64) -> f64>(f: &F, grid: QuadratureGrid) -> Result<(QuadratureGrid, Vec<f64>, f64)> {
    grid.validate()?;
    let mut g = grid;
    let mut samples: Vec<f64> = g.nodes().into_iter().map(f).collect();
    let mut integral = trapezoid(&samples, g.spacing());
    loop {
        let fine = g.refined();
        if fine.points > MAX_POINTS {
            return Err(Error::Precision(format!(
                "integral still changing after refining to {} points",
                g.points
            )));
        }
        let fine_samples: Vec<f64> = fine.nodes().into_iter().map(f).collect();
        let fine_integral = trapezoid(&fine_samples, fine.spacing());
        let drift = (fine_integral - integral).abs();
        g = fine;
        samples = fine_samples;
        if drift <= REFINE_TOL * integral.abs().max(f64::MIN_POSITIVE) {
            return Ok((g, samples, fine_integral));
        }
        integral = fine_integral;
    }
}

/// A normalized density sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub grid: QuadratureGrid,
    pub density: Vec<f64>,
}

impl GridDensity {
    pub fn nodes(&self) -> Vec<f64> {
        self.grid.nodes()
    }

    fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let vals: Vec<f64> = self
            .nodes()
            .iter()
            .zip(&self.density)
            .map(|(&u, &p)| f(u) * p)
            .collect();
        trapezoid(&vals, self.grid.spacing())
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.density, self.grid.spacing())
    }

    pub fn mean(&self) -> f64 {
        self.expect(|u| u)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|u| (u - m).powi(2))
    }

    /// Linear interpolation; zero outside the grid.
    pub fn eval(&self, u: f64) -> f64 {
        let h = self.grid.spacing();
        let r = (u - self.grid.lo) / h;
        if !(r >= 0.0) || r > (self.density.len() - 1) as f64 {
            return 0.0;
        }
        let i = (r.floor() as usize).min(self.density.len() - 2);
        let f = r - i as f64;
        self.density[i] * (1.0 - f) + self.density[i + 1] * f
    }

    /// Mean and variance of the density restricted to `u > 0` and renormalized.
    pub fn positive_part_moments(&self) -> (f64, f64) {
        let mass = self.expect(|u| if u > 0.0 { 1.0 } else { 0.0 });
        let m = self.expect(|u| if u > 0.0 { u } else { 0.0 }) / mass;
        let v = self.expect(|u| if u > 0.0 { (u - m).powi(2) } else { 0.0 }) / mass;
        (m, v)
    }

    /// Grid locations of strict interior local maxima.
    pub fn local_maxima(&self) -> Vec<f64> {
        let nodes = self.nodes();
        (1..self.density.len() - 1)
            .filter(|&i| {
                self.density[i] > self.density[i - 1] && self.density[i] > self.density[i + 1]
            })
            .map(|i| nodes[i])
            .collect()
    }
}

/// Exact maximum-entropy Nash equilibrium `(pi1, pi2)` by quadrature.
///
/// Player 2's objective does not depend on player 1, so `pi2` is the
/// Boltzmann density of `J2` alone; `pi1` is then the Boltzmann density of
/// player 1's cost in expectation over `pi2`.
pub fn exact_maxent_ne(toy: &ToyGame, grid: QuadratureGrid) -> Result<(GridDensity, GridDensity)> {
    if grid.lo > -6.0 || grid.hi < 6.0 || grid.points < 4001 {
        return Err(Error::InvalidArgument(
            "exact MaxEnt quadrature needs [-6, 6] with at least 4001 points".into(),
        ));
    }
    let beta = toy.beta.get();
    // shift by the minimum cost so the exponent never overflows
    let (_, u2_star) = exact_ne(toy);
    let j2_min = toy.j2(u2_star).min(toy.j2(-u2_star));
    let w2 = |u: f64| (-beta * (toy.j2(u) - j2_min)).exp();
    let (g2, s2, z2) = refine(&w2, grid)?;
    let pi2 = GridDensity {
        grid: g2,
        density: s2.iter().map(|w| w / z2).collect(),
    };
    let m1 = pi2.mean();
    let m2 = pi2.expect(|v| v * v);
    let q1 = |u: f64| 0.5 * u * u + 1.5 * (u * u - 2.0 * u * m1 + m2);
    let q1_min = q1(0.75 * m1);
    let w1 = |u: f64| (-beta * (q1(u) - q1_min)).exp();
    let (g1, s1, z1) = refine(&w1, grid)?;
    let pi1 = GridDensity {
        grid: g1,
        density: s1.iter().map(|w| w / z1).collect(),
    };
    Ok((pi1, pi2))
}

/// `-(1/beta) ln \int exp(-beta cost(u)) du` by refined trapezoidal quadrature.
pub fn onestep_maxent_value<F: Fn(f64) -> f64>(
    cost: F,
    beta: RationalityBeta,
    grid: QuadratureGrid,
) -> Result<f64> {
    grid.validate()?;
    let b = beta.get();
    let shift = grid
        .nodes()
        .into_iter()
        .map(&cost)
        .fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return Err(Error::Precision("cost is not finite on the grid".into()));
    }
    let w = |u: f64| (-b * (cost(u) - shift)).exp();
    let (_, _, z) = refine(&w, grid)?;
    Ok(shift - z.ln() / b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(eps: f64) -> ToyGame {
        ToyGame::new(eps, 0.5).unwrap()
    }

    #[test]
    fn softmin_examples() {
        assert!((softmin(0.0, 0.0) + 2f64.ln()).abs() < 1e-15);
        assert!(softmin(0.0, 100.0).abs() < 1e-40);
        assert!(softmin(1000.0, 1001.0).is_finite());
        assert!((softmin(3.0, -2.0) - softmin(-2.0, 3.0)).abs() < 1e-15);
    }

    #[test]
    fn phi2_derivatives_match_finite_differences() {
        let t = toy(0.1);
        for &x in &[-1.3, -0.2, 0.0, 0.73, 2.0] {
            let h = 1e-5;
            let (_, d1, d2) = t.phi2(x);
            let fd1 = (t.phi2(x + h).0 - t.phi2(x - h).0) / (2.0 * h);
            let fd2 = (t.phi2(x + h).1 - t.phi2(x - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-8, "{x}");
            assert!((d2 - fd2).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn player2_curvature_at_its_equilibrium() {
        // control quadratic 1 plus soft-min curvature ~2.60
        let (_, d1, d2) = toy(0.1).phi2(0.73);
        assert!((1.0 + d2 - 3.60).abs() < 0.01, "{}", 1.0 + d2);
        assert!(d1.is_finite());
    }

    #[test]
    fn exact_ne_values() {
        let t = toy(0.1);
        let (u1, u2) = exact_ne(&t);
        assert!((u2 - 0.73).abs() < 0.01, "{u2}");
        assert!((u1 - 0.75 * u2).abs() < 1e-15);
        // stationarity of player 2's cost
        let (_, d1, _) = t.phi2(u2);
        assert!((u2 + d1).abs() < 1e-12);
    }

    #[test]
    fn best_response_ignores_epsilon_for_fixed_u2() {
        // J1 does not involve eps: its minimizer over u1 for u2 = 0.73 is 0.5475
        for eps in [0.01, 0.1, 0.9] {
            let t = toy(eps);
            let u2 = 0.73;
            let best = (0..=20000)
                .map(|i| -1.0 + 2.0 * i as f64 / 20000.0)
                .min_by(|a, b| t.j1(*a, u2).total_cmp(&t.j1(*b, u2)))
                .unwrap();
            assert!((best - 0.75 * u2).abs() < 1e-4);
        }
    }

    #[test]
    fn exact_maxent_normalizes_and_is_bimodal() {
        for eps in [0.05, 0.1, 0.5, 1.0] {
            let (pi1, pi2) = exact_maxent_ne(&toy(eps), QuadratureGrid::default()).unwrap();
            assert!((pi1.integral() - 1.0).abs() < 1e-8);
            assert!((pi2.integral() - 1.0).abs() < 1e-8);
            let maxima = pi2.local_maxima();
            assert_eq!(maxima.len(), 2, "eps {eps}: {maxima:?}");
            assert!((maxima[0] + 0.73).abs() < 0.05 && (maxima[1] - 0.73).abs() < 0.05);
            assert_eq!(pi1.local_maxima().len(), 1);
        }
    }

    #[test]
    fn exact_maxent_unit_beta_closed_form() {
        // at beta = 1, pi2 is an exact mixture of N(+-3/4, 1/4) with weights
        // proportional to 1 and e^-eps, so mean(pi1) = (3/4)^2 tanh(eps/2)
        for eps in [0.05, 0.1, 0.5] {
            let t = ToyGame::new(eps, 1.0).unwrap();
            let (pi1, pi2) = exact_maxent_ne(&t, QuadratureGrid::default()).unwrap();
            assert!((pi2.mean() - 0.75 * (eps / 2.0).tanh()).abs() < 1e-9);
            assert!((pi1.mean() - 0.5625 * (eps / 2.0).tanh()).abs() < 1e-9);
        }
    }

    #[test]
    fn ego_mean_vanishes_with_epsilon() {
        let means: Vec<f64> = [0.4, 0.1, 0.01, 0.001]
            .iter()
            .map(|&e| exact_maxent_ne(&toy(e), QuadratureGrid::default()).unwrap().0.mean())
            .collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]));
        assert!(means[3].abs() < 2e-4);
    }

    #[test]
    fn interpolation_hits_nodes() {
        let (pi1, _) = exact_maxent_ne(&toy(0.1), QuadratureGrid::default()).unwrap();
        let nodes = pi1.nodes();
        for i in [0, 17, nodes.len() / 2, nodes.len() - 1] {
            assert!((pi1.eval(nodes[i]) - pi1.density[i]).abs() < 1e-12);
        }
        let mid = 0.5 * (nodes[100] + nodes[101]);
        assert!((pi1.eval(mid) - 0.5 * (pi1.density[100] + pi1.density[101])).abs() < 1e-12);
        assert_eq!(pi1.eval(7.0), 0.0);
    }

    #[test]
    fn coarse_grid_rejected() {
        let g = QuadratureGrid {
            lo: -6.0,
            hi: 6.0,
            points: 101,
        };
        assert!(exact_maxent_ne(&toy(0.1), g).is_err());
    }

    #[test]
    fn gaussian_free_energy() {
        let beta = RationalityBeta::new(0.7).unwrap();
        let h = 2.5;
        let v = onestep_maxent_value(|u| 0.5 * h * u * u, beta, QuadratureGrid::default()).unwrap();
        let exact = -(1.0 / 0.7) * (2.0 * std::f64::consts::PI / (0.7 * h)).sqrt().ln();
        assert!((v - exact).abs() < 1e-10);
    }
}
