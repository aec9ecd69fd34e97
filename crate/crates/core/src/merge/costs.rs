//! Per-agent merge objectives on the joint state of two cars.

use serde::{Deserialize, Serialize};

use crate::game::{AgentObjective, StageExpansion, TerminalExpansion, Vector};

use super::vehicle::{ACCEL, CONTROL_DIM, N, PX, PY, STATE_DIM, STEER_RATE, V, XI, ZETA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Squared lateral offset from the centerline.
    pub lateral: f64,
    /// Squared heading error; part of centerline tracking.
    pub heading: f64,
    /// Squared steering angle.
    pub steering: f64,
    /// Squared deviation from the reference speed.
    pub velocity: f64,
    /// Squared softplus of the lane-boundary violation.
    pub boundary: f64,
    /// Softplus sharpness, 1/m.
    pub sharpness: f64,
    pub steer_rate: f64,
    pub accel: f64,
    /// Squared softplus of actuator-limit violations.
    pub actuator: f64,
    /// Weight of `max(0, D^2 - d^2)^2`.
    pub collision: f64,
    /// Multiplies the state terms at the final step.
    pub terminal: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lateral: 20.0,
            heading: 0.5,
            steering: 0.2,
            velocity: 1.0,
            boundary: 2000.0,
            sharpness: 40.0,
            steer_rate: 0.1,
            accel: 0.2,
            actuator: 20.0,
            collision: 50.0,
            terminal: 1.0,
        }
    }
}

/// `ln(1 + e^{kz}) / k`, its slope and curvature.
fn softplus(z: f64, k: f64) -> (f64, f64, f64) {
    let kz = k * z;
    let value = if kz > 30.0 {
        z + (-kz).exp().ln_1p() / k
    } else {
        kz.exp().ln_1p() / k
    };
    let sig = 1.0 / (1.0 + (-kz).exp());
    (value, sig, k * sig * (1.0 - sig))
}

/// `softplus(z)^2` with derivatives.
fn softplus_sq(z: f64, k: f64) -> (f64, f64, f64) {
    let (s, d1, d2) = softplus(z, k);
    (s * s, 2.0 * s * d1, 2.0 * d1 * d1 + 2.0 * s * d2)
}

/// Two-sided penalty on leaving `[-limit, limit]`.
fn band(z: f64, limit: f64, k: f64) -> (f64, f64, f64) {
    let (a, a1, a2) = softplus_sq(z - limit, k);
    let (b, b1, b2) = softplus_sq(-z - limit, k);
    (a + b, a1 - b1, a2 + b2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeObjective {
    pub agent: usize,
    pub num_agents: usize,
    pub weights: CostWeights,
    pub v_ref: f64,
    pub half_width: f64,
    /// Penalty distance to each agent, `D = R_i + R_j`; entry `agent` unused.
    pub clearance: Vec<f64>,
    pub steer_rate_max: f64,
    pub accel_max: f64,
    /// Drop the concave part of the collision Hessian so the solver sees a
    /// positive semidefinite penalty. Values and gradients stay exact.
    pub gauss_newton: bool,
}

impl MergeObjective {
    fn off(&self, i: usize) -> usize {
        i * STATE_DIM
    }

    fn collision_terms(&self, x: &Vector, scale: f64, lx: &mut Vector, lxx: &mut crate::game::Matrix) -> f64 {
        let w = self.weights.collision * scale;
        let oi = self.off(self.agent);
        let mut total = 0.0;
        for j in 0..self.num_agents {
            if j == self.agent {
                continue;
            }
            let oj = self.off(j);
            let dx = x[oi + PX] - x[oj + PX];
            let dy = x[oi + PY] - x[oj + PY];
            let g = self.clearance[j].powi(2) - dx * dx - dy * dy;
            if g <= 0.0 {
                continue;
            }
            total += w * g * g;
            // g depends on delta = p_i - p_j with dg/ddelta = -2 delta
            let grad = [-2.0 * dx, -2.0 * dy];
            let idx = [[oi + PX, oi + PY], [oj + PX, oj + PY]];
            let sign = [1.0, -1.0];
            for a in 0..2 {
                for c in 0..2 {
                    lx[idx[a][c]] += w * 2.0 * g * grad[c] * sign[a];
                }
            }
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        for e in 0..2 {
                            let gn = 2.0 * grad[c] * grad[e] * sign[a] * sign[b];
                            let curv = if c == e && !self.gauss_newton {
                                -4.0 * g * sign[a] * sign[b]
                            } else {
                                0.0
                            };
                            lxx[(idx[a][c], idx[b][e])] += w * (gn + curv);
                        }
                    }
                }
            }
        }
        total
    }

    fn state_terms(&self, x: &Vector, scale: f64, lx: &mut Vector, lxx: &mut crate::game::Matrix) -> f64 {
        let w = &self.weights;
        let o = self.off(self.agent);
        let mut value = 0.0;
        let quad = |idx: usize, target: f64, weight: f64, lx: &mut Vector, lxx: &mut crate::game::Matrix| {
            let d = x[o + idx] - target;
            lx[o + idx] += 2.0 * weight * scale * d;
            lxx[(o + idx, o + idx)] += 2.0 * weight * scale;
            weight * scale * d * d
        };
        value += quad(N, 0.0, w.lateral, lx, lxx);
        value += quad(XI, 0.0, w.heading, lx, lxx);
        value += quad(ZETA, 0.0, w.steering, lx, lxx);
        value += quad(V, self.v_ref, w.velocity, lx, lxx);
        let (b, b1, b2) = band(x[o + N], self.half_width, w.sharpness);
        value += w.boundary * scale * b;
        lx[o + N] += w.boundary * scale * b1;
        lxx[(o + N, o + N)] += w.boundary * scale * b2;
        value + self.collision_terms(x, scale, lx, lxx)
    }
}

impl AgentObjective for MergeObjective {
    fn running_cost(&self, x: &Vector, u: &Vector) -> f64 {
        self.running_expansion(x, u).value
    }

    fn terminal_cost(&self, x: &Vector) -> f64 {
        self.terminal_expansion(x).value
    }

    fn running_expansion(&self, x: &Vector, u: &Vector) -> StageExpansion {
        let mut e = StageExpansion::zeros(x.len(), u.len());
        e.value = self.state_terms(x, 1.0, &mut e.lx, &mut e.lxx);
        let w = &self.weights;
        let c = self.agent * CONTROL_DIM;
        for (ch, weight, limit) in [
            (STEER_RATE, w.steer_rate, self.steer_rate_max),
            (ACCEL, w.accel, self.accel_max),
        ] {
            let v = u[c + ch];
            let (b, b1, b2) = band(v, limit, w.sharpness);
            e.value += weight * v * v + w.actuator * b;
            e.lu[c + ch] += 2.0 * weight * v + w.actuator * b1;
            e.luu[(c + ch, c + ch)] += 2.0 * weight + w.actuator * b2;
        }
        e
    }

    fn terminal_expansion(&self, x: &Vector) -> TerminalExpansion {
        let mut e = TerminalExpansion::zeros(x.len());
        e.value = self.state_terms(x, self.weights.terminal, &mut e.lx, &mut e.lxx);
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::finite_diff::{
        stage_expansion_error, stage_expansion_fd, terminal_expansion_error, terminal_expansion_fd,
    };
    use proptest::prelude::*;

    fn objective(agent: usize) -> MergeObjective {
        MergeObjective {
            agent,
            num_agents: 2,
            weights: CostWeights::default(),
            v_ref: 1.5,
            half_width: 0.35,
            clearance: vec![0.8, 0.8],
            steer_rate_max: 1.5,
            accel_max: 2.0,
            gauss_newton: false,
        }
    }

    fn state(p0: [f64; 2], p1: [f64; 2]) -> Vector {
        let mut x = Vector::zeros(16);
        x[PX] = p0[0];
        x[PY] = p0[1];
        x[8 + PX] = p1[0];
        x[8 + PY] = p1[1];
        x[V] = 1.5;
        x[8 + V] = 1.5;
        x
    }

    #[test]
    fn collision_support() {
        let o = objective(0);
        let far = state([0.0, 0.0], [0.81, 0.0]);
        let mut lx = Vector::zeros(16);
        let mut lxx = crate::game::Matrix::zeros(16, 16);
        assert_eq!(o.collision_terms(&far, 1.0, &mut lx, &mut lxx), 0.0);
        let near = state([0.0, 0.0], [0.79, 0.0]);
        assert!(o.collision_terms(&near, 1.0, &mut lx, &mut lxx) > 0.0);
    }

    #[test]
    fn nominal_driving_is_nearly_free() {
        let o = objective(1);
        let x = state([-3.0, 1.0], [3.0, 0.0]);
        assert!(o.running_cost(&x, &Vector::zeros(4)) < 1e-6);
    }

    #[test]
    fn gauss_newton_hessian_is_exact_minus_concave_part() {
        let exact = objective(0);
        let gn = MergeObjective { gauss_newton: true, ..objective(0) };
        let x = state([0.0, 0.0], [0.5, 0.2]);
        let u = Vector::zeros(4);
        let (a, b) = (exact.running_expansion(&x, &u), gn.running_expansion(&x, &u));
        assert_eq!(a.value, b.value);
        assert_eq!(a.lx, b.lx);
        let g = 0.64 - 0.29;
        let shift = 4.0 * 50.0 * g;
        assert!((b.lxx[(PX, PX)] - a.lxx[(PX, PX)] - shift).abs() < 1e-9);
        assert!((b.lxx[(PX, 8 + PX)] - a.lxx[(PX, 8 + PX)] + shift).abs() < 1e-9);
        let mut lx = Vector::zeros(16);
        let mut lxx = crate::game::Matrix::zeros(16, 16);
        gn.collision_terms(&x, 1.0, &mut lx, &mut lxx);
        assert!(lxx.symmetric_eigenvalues().min() > -1e-9);
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(
            raw in proptest::collection::vec(-1.0f64..1.0, 20),
            agent in 0usize..2,
        ) {
            let o = objective(agent);
            let mut x = Vector::from_iterator(16, raw[..16].iter().map(|v| 0.5 * v));
            x[V] += 1.0;
            x[8 + PX] = x[PX] + 0.6 * raw[16];
            x[8 + PY] = x[PY] + 0.6 * raw[17];
            let u = Vector::from_iterator(4, raw[16..].iter().map(|v| 2.5 * v));
            let e = o.running_expansion(&x, &u);
            prop_assert!(stage_expansion_error(&e, &stage_expansion_fd(&o, &x, &u, 1e-5)) < 1e-4);
            let t = o.terminal_expansion(&x);
            prop_assert!(terminal_expansion_error(&t, &terminal_expansion_fd(&o, &x, 1e-5)) < 1e-4);
        }
    }
}
