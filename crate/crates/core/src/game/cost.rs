//! Per-agent objectives and their second-order expansions.

use std::fmt::Debug;

use super::{Matrix, Vector};

/// Second-order expansion of a running cost at a point `(x, u)`.
///
/// `lux` is `n_u x n_x`; all Hessians are with respect to the joint state and
/// joint control.
#[derive(Debug, Clone, PartialEq)]
pub struct StageExpansion {
    pub value: f64,
    pub lx: Vector,
    pub lu: Vector,
    pub lxx: Matrix,
    pub luu: Matrix,
    pub lux: Matrix,
}

impl StageExpansion {
    pub fn zeros(nx: usize, nu: usize) -> Self {
        Self {
            value: 0.0,
            lx: Vector::zeros(nx),
            lu: Vector::zeros(nu),
            lxx: Matrix::zeros(nx, nx),
            luu: Matrix::zeros(nu, nu),
            lux: Matrix::zeros(nu, nx),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.lx.iter().all(|v| v.is_finite())
            && self.lu.iter().all(|v| v.is_finite())
            && self.lxx.iter().all(|v| v.is_finite())
            && self.luu.iter().all(|v| v.is_finite())
            && self.lux.iter().all(|v| v.is_finite())
    }
}

/// Second-order expansion of a terminal cost at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalExpansion {
    pub value: f64,
    pub lx: Vector,
    pub lxx: Matrix,
}

impl TerminalExpansion {
    pub fn zeros(nx: usize) -> Self {
        Self {
            value: 0.0,
            lx: Vector::zeros(nx),
            lxx: Matrix::zeros(nx, nx),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.lx.iter().all(|v| v.is_finite())
            && self.lxx.iter().all(|v| v.is_finite())
    }
}

/// One agent's objective: a running cost `l(x, u)` summed over the controlled
/// steps plus a terminal cost `phi(x_T)`.
pub trait AgentObjective: Send + Sync + Debug {
    fn running_cost(&self, x: &Vector, u: &Vector) -> f64;
    fn terminal_cost(&self, x: &Vector) -> f64;
    fn running_expansion(&self, x: &Vector, u: &Vector) -> StageExpansion;
    fn terminal_expansion(&self, x: &Vector) -> TerminalExpansion;
}

/// Quadratic objective
/// `l = 1/2 x'Qx + q'x + 1/2 u'Ru + r'u + u'Sx`, `phi = 1/2 x'Qf x + qf'x`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub q: Matrix,
    pub q_lin: Vector,
    pub r: Matrix,
    pub r_lin: Vector,
    pub s: Matrix,
    pub qf: Matrix,
    pub qf_lin: Vector,
}

impl QuadraticObjective {
    /// Pure state/control penalty with no linear or cross terms.
    pub fn diagonal(q: Matrix, r: Matrix, qf: Matrix) -> Self {
        let (nx, nu) = (q.nrows(), r.nrows());
        Self {
            q,
            q_lin: Vector::zeros(nx),
            r,
            r_lin: Vector::zeros(nu),
            s: Matrix::zeros(nu, nx),
            qf,
            qf_lin: Vector::zeros(nx),
        }
    }
}

impl AgentObjective for QuadraticObjective {
    fn running_cost(&self, x: &Vector, u: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q * x))
            + self.q_lin.dot(x)
            + 0.5 * u.dot(&(&self.r * u))
            + self.r_lin.dot(u)
            + u.dot(&(&self.s * x))
    }

    fn terminal_cost(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.qf * x)) + self.qf_lin.dot(x)
    }

    fn running_expansion(&self, x: &Vector, u: &Vector) -> StageExpansion {
        StageExpansion {
            value: self.running_cost(x, u),
            lx: &self.q * x + &self.q_lin + self.s.transpose() * u,
            lu: &self.r * u + &self.r_lin + &self.s * x,
            lxx: self.q.clone(),
            luu: self.r.clone(),
            lux: self.s.clone(),
        }
    }

    fn terminal_expansion(&self, x: &Vector) -> TerminalExpansion {
        TerminalExpansion {
            value: self.terminal_cost(x),
            lx: &self.qf * x + &self.qf_lin,
            lxx: self.qf.clone(),
        }
    }
}
