use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{Matrix, Trajectory, Vector};

/// Inverse temperature of the maximum-entropy policies.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RationalityBeta(f64);

impl RationalityBeta {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta.is_finite() {
            Ok(Self(beta))
        } else {
            Err(Error::InvalidArgument(format!(
                "rationality beta must be positive and finite, got {beta}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Time-indexed affine feedback law for one agent:
/// `u_t(x) = u_bar_t - K_t (x - x_bar_t) - k_t`.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub agent: usize,
    pub gains: Vec<Matrix>,
    pub feedforward: Vec<Vector>,
    /// Nominal joint trajectory the law is expressed about.
    pub nominal: Arc<Trajectory>,
    /// This agent's slice of the nominal joint controls.
    pub nominal_controls: Vec<Vector>,
}

impl FeedbackLaw {
    pub fn steps(&self) -> usize {
        self.gains.len()
    }

    /// Step index clamped to the last controlled step.
    pub fn clamp_step(&self, t: usize) -> usize {
        t.min(self.steps() - 1)
    }

    pub fn mean(&self, t: usize, x: &Vector) -> Vector {
        let t = self.clamp_step(t);
        let dx = x - &self.nominal.states[t];
        &self.nominal_controls[t] - &self.gains[t] * dx - &self.feedforward[t]
    }
}

/// Gaussian policy `u ~ N(mean_t(x), Sigma_t)`; the maximum-entropy policy of
/// an LQ game.
#[derive(Debug, Clone)]
pub struct AffineGaussianPolicy {
    pub law: FeedbackLaw,
    /// `Sigma_t = (beta H_t)^-1`.
    pub covariances: Vec<Matrix>,
    /// `H_t`: the agent's own-control Hessian of its Q-function.
    pub q_hessians: Vec<Matrix>,
}

impl AffineGaussianPolicy {
    pub fn agent(&self) -> usize {
        self.law.agent
    }

    pub fn mean(&self, t: usize, x: &Vector) -> Vector {
        self.law.mean(t, x)
    }

    pub fn covariance(&self, t: usize) -> &Matrix {
        &self.covariances[self.law.clamp_step(t)]
    }

    pub fn q_hessian(&self, t: usize) -> &Matrix {
        &self.q_hessians[self.law.clamp_step(t)]
    }

    pub fn gain(&self, t: usize) -> &Matrix {
        &self.law.gains[self.law.clamp_step(t)]
    }
}

/// `V_t(x) = 1/2 dx' P_t dx + p_t' dx + c_t` with `dx = x - x_bar_t`, for
/// `t = 0..T` (the last entry is the terminal cost expansion).
#[derive(Debug, Clone)]
pub struct QuadraticValue {
    pub quadratic: Vec<Matrix>,
    pub linear: Vec<Vector>,
    pub constant: Vec<f64>,
    pub nominal: Arc<Trajectory>,
}

impl QuadraticValue {
    pub fn len(&self) -> usize {
        self.constant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constant.is_empty()
    }

    pub fn eval(&self, t: usize, x: &Vector) -> f64 {
        let t = t.min(self.len() - 1);
        let dx = x - &self.nominal.states[t];
        0.5 * dx.dot(&(&self.quadratic[t] * &dx)) + self.linear[t].dot(&dx) + self.constant[t]
    }

    pub fn gradient(&self, t: usize, x: &Vector) -> Vector {
        let t = t.min(self.len() - 1);
        let dx = x - &self.nominal.states[t];
        &self.quadratic[t] * dx + &self.linear[t]
    }
}
