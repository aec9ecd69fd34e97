//! Discrete-time dynamics models and the RK4 discretization of continuous ones.

use std::fmt::Debug;
use std::ops::Range;
use std::sync::Arc;

use super::{Matrix, Vector};

/// Discrete dynamics `x_{t+1} = f(x_t, u_t)` with analytic Jacobians.
pub trait DynamicsModel: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn step(&self, x: &Vector, u: &Vector) -> Vector;
    /// Returns `(df/dx, df/du)` at `(x, u)`.
    fn linearize(&self, x: &Vector, u: &Vector) -> (Matrix, Matrix);
    /// `(state, control)` ranges of decoupled subsystems when both Jacobians
    /// are block diagonal in them.
    fn blocks(&self) -> Option<Vec<(Range<usize>, Range<usize>)>> {
        None
    }
}

/// Continuous dynamics `dx/dt = g(x, u)`.
pub trait ContinuousDynamics: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn derivative(&self, x: &Vector, u: &Vector) -> Vector;
    /// Returns `(dg/dx, dg/du)`.
    fn jacobians(&self, x: &Vector, u: &Vector) -> (Matrix, Matrix);
}

/// Classic 4th-order Runge-Kutta step with zero-order-hold control.
#[derive(Debug, Clone)]
pub struct Rk4<C> {
    pub model: C,
    pub dt: f64,
}

impl<C: ContinuousDynamics> Rk4<C> {
    pub fn new(model: C, dt: f64) -> Self {
        Self { model, dt }
    }
}

impl<C: ContinuousDynamics> DynamicsModel for Rk4<C> {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    fn step(&self, x: &Vector, u: &Vector) -> Vector {
        let h = self.dt;
        let k1 = self.model.derivative(x, u);
        let k2 = self.model.derivative(&(x + &k1 * (0.5 * h)), u);
        let k3 = self.model.derivative(&(x + &k2 * (0.5 * h)), u);
        let k4 = self.model.derivative(&(x + &k3 * h), u);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    fn linearize(&self, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
        let h = self.dt;
        let n = x.len();
        let eye = Matrix::identity(n, n);

        let k1 = self.model.derivative(x, u);
        let (a1, b1) = self.model.jacobians(x, u);
        let x2 = x + &k1 * (0.5 * h);
        let k2 = self.model.derivative(&x2, u);
        let (a2, b2) = self.model.jacobians(&x2, u);
        let x3 = x + &k2 * (0.5 * h);
        let k3 = self.model.derivative(&x3, u);
        let (a3, b3) = self.model.jacobians(&x3, u);
        let x4 = x + &k3 * h;
        let (a4, b4) = self.model.jacobians(&x4, u);

        // chain rule through the stages
        let dk1_dx = a1;
        let dk1_du = b1;
        let dk2_dx = &a2 * (&eye + &dk1_dx * (0.5 * h));
        let dk2_du = &a2 * &dk1_du * (0.5 * h) + b2;
        let dk3_dx = &a3 * (&eye + &dk2_dx * (0.5 * h));
        let dk3_du = &a3 * &dk2_du * (0.5 * h) + b3;
        let dk4_dx = &a4 * (&eye + &dk3_dx * h);
        let dk4_du = &a4 * &dk3_du * h + b4;

        let a = eye + (dk1_dx + dk2_dx * 2.0 + dk3_dx * 2.0 + dk4_dx) * (h / 6.0);
        let b = (dk1_du + dk2_du * 2.0 + dk3_du * 2.0 + dk4_du) * (h / 6.0);
        (a, b)
    }
}

/// `x_{t+1} = x_t + u_t`.
#[derive(Debug, Clone, Copy)]
pub struct SingleIntegrator {
    pub dim: usize,
}

impl DynamicsModel for SingleIntegrator {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn control_dim(&self) -> usize {
        self.dim
    }

    fn step(&self, x: &Vector, u: &Vector) -> Vector {
        x + u
    }

    fn linearize(&self, _x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
        (
            Matrix::identity(self.dim, self.dim),
            Matrix::identity(self.dim, self.dim),
        )
    }
}

/// Time-invariant linear dynamics `x_{t+1} = A x_t + B u_t`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: Matrix,
    pub b: Matrix,
}

impl DynamicsModel for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    fn linearize(&self, _x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
        (self.a.clone(), self.b.clone())
    }
}

/// Agents with independent dynamics stacked into one joint system.
///
/// The joint state is the concatenation of the agents' states and the joint
/// control is the concatenation of their controls, in agent order.
#[derive(Debug, Clone)]
pub struct ProductDynamics {
    parts: Vec<Arc<dyn DynamicsModel>>,
    state_offsets: Vec<usize>,
    control_offsets: Vec<usize>,
}

impl ProductDynamics {
    pub fn new(parts: Vec<Arc<dyn DynamicsModel>>) -> Self {
        let mut state_offsets = Vec::with_capacity(parts.len() + 1);
        let mut control_offsets = Vec::with_capacity(parts.len() + 1);
        let (mut xs, mut us) = (0, 0);
        for p in &parts {
            state_offsets.push(xs);
            control_offsets.push(us);
            xs += p.state_dim();
            us += p.control_dim();
        }
        state_offsets.push(xs);
        control_offsets.push(us);
        Self {
            parts,
            state_offsets,
            control_offsets,
        }
    }

    pub fn parts(&self) -> &[Arc<dyn DynamicsModel>] {
        &self.parts
    }

    pub fn state_range(&self, i: usize) -> Range<usize> {
        self.state_offsets[i]..self.state_offsets[i + 1]
    }

    pub fn control_range(&self, i: usize) -> Range<usize> {
        self.control_offsets[i]..self.control_offsets[i + 1]
    }
}

impl DynamicsModel for ProductDynamics {
    fn state_dim(&self) -> usize {
        *self.state_offsets.last().unwrap()
    }

    fn control_dim(&self) -> usize {
        *self.control_offsets.last().unwrap()
    }

    fn step(&self, x: &Vector, u: &Vector) -> Vector {
        let mut out = Vector::zeros(self.state_dim());
        for (i, p) in self.parts.iter().enumerate() {
            let xr = self.state_range(i);
            let ur = self.control_range(i);
            let xi = x.rows(xr.start, xr.len()).into_owned();
            let ui = u.rows(ur.start, ur.len()).into_owned();
            out.rows_mut(xr.start, xr.len()).copy_from(&p.step(&xi, &ui));
        }
        out
    }

    fn linearize(&self, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
        let mut a = Matrix::zeros(self.state_dim(), self.state_dim());
        let mut b = Matrix::zeros(self.state_dim(), self.control_dim());
        for (i, p) in self.parts.iter().enumerate() {
            let xr = self.state_range(i);
            let ur = self.control_range(i);
            let xi = x.rows(xr.start, xr.len()).into_owned();
            let ui = u.rows(ur.start, ur.len()).into_owned();
            let (ai, bi) = p.linearize(&xi, &ui);
            a.view_mut((xr.start, xr.start), (xr.len(), xr.len()))
                .copy_from(&ai);
            b.view_mut((xr.start, ur.start), (xr.len(), ur.len()))
                .copy_from(&bi);
        }
        (a, b)
    }

    fn blocks(&self) -> Option<Vec<(Range<usize>, Range<usize>)>> {
        Some((0..self.parts.len()).map(|i| (self.state_range(i), self.control_range(i))).collect())
    }
}
