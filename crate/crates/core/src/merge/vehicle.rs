//! Kinematic bicycle carrying both Cartesian and path-relative coordinates.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{ContinuousDynamics, DynamicsModel, Matrix, Rk4, Vector};

use super::spline::CenterlineSpline;

pub const STATE_DIM: usize = 8;
pub const CONTROL_DIM: usize = 2;

pub const PX: usize = 0;
pub const PY: usize = 1;
pub const V: usize = 2;
pub const THETA: usize = 3;
pub const ZETA: usize = 4;
pub const S: usize = 5;
pub const N: usize = 6;
pub const XI: usize = 7;

pub const STEER_RATE: usize = 0;
pub const ACCEL: usize = 1;

/// Smallest admissible `1 - n kappa(s)`.
pub const SINGULARITY_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub v: f64,
    pub theta: f64,
    pub zeta: f64,
    pub s: f64,
    pub n: f64,
    pub xi: f64,
}

impl VehicleState {
    /// A car at `(s, n)` on the lane, aligned with it, wheels straight.
    pub fn on_lane(spline: &CenterlineSpline, s: f64, n: f64, v: f64) -> Self {
        let [px, py] = spline.frenet_to_cartesian(s, n);
        Self {
            px,
            py,
            v,
            theta: spline.heading(s),
            zeta: 0.0,
            s,
            n,
            xi: 0.0,
        }
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_vec(vec![
            self.px, self.py, self.v, self.theta, self.zeta, self.s, self.n, self.xi,
        ])
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            px: x[PX],
            py: x[PY],
            v: x[V],
            theta: x[THETA],
            zeta: x[ZETA],
            s: x[S],
            n: x[N],
            xi: x[XI],
        }
    }
}

/// Continuous-time bicycle with a Frenet companion frame on `spline`.
#[derive(Debug, Clone)]
pub struct Bicycle {
    pub spline: Arc<CenterlineSpline>,
    pub wheelbase: f64,
}

impl Bicycle {
    fn denom(&self, x: &Vector) -> (f64, f64) {
        let kappa = self.spline.kappa(x[S]);
        ((1.0 - x[N] * kappa).max(SINGULARITY_MARGIN), kappa)
    }

    pub fn discretized(self, dt: f64) -> Rk4<Bicycle> {
        Rk4::new(self, dt)
    }
}

impl ContinuousDynamics for Bicycle {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn control_dim(&self) -> usize {
        CONTROL_DIM
    }

    fn derivative(&self, x: &Vector, u: &Vector) -> Vector {
        let (d, kappa) = self.denom(x);
        let (v, theta, zeta, xi) = (x[V], x[THETA], x[ZETA], x[XI]);
        let yaw = v * zeta.tan() / self.wheelbase;
        let s_dot = v * xi.cos() / d;
        Vector::from_vec(vec![
            v * theta.cos(),
            v * theta.sin(),
            u[ACCEL],
            yaw,
            u[STEER_RATE],
            s_dot,
            v * xi.sin(),
            yaw - kappa * s_dot,
        ])
    }

    fn jacobians(&self, x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
        let (d, kappa) = self.denom(x);
        let clamped = 1.0 - x[N] * kappa < SINGULARITY_MARGIN;
        let dkappa = self.spline.kappa_slope(x[S]);
        let (v, theta, zeta, xi) = (x[V], x[THETA], x[ZETA], x[XI]);
        let l = self.wheelbase;
        let mut a = Matrix::zeros(STATE_DIM, STATE_DIM);
        a[(PX, V)] = theta.cos();
        a[(PX, THETA)] = -v * theta.sin();
        a[(PY, V)] = theta.sin();
        a[(PY, THETA)] = v * theta.cos();
        a[(THETA, V)] = zeta.tan() / l;
        a[(THETA, ZETA)] = v / (l * zeta.cos().powi(2));

        let s_dot = v * xi.cos() / d;
        let ds_dv = xi.cos() / d;
        let ds_dxi = -v * xi.sin() / d;
        // through d = 1 - n kappa(s), unless the guard is active
        let (ds_dn, ds_ds) = if clamped {
            (0.0, 0.0)
        } else {
            (s_dot * kappa / d, s_dot * x[N] * dkappa / d)
        };
        a[(S, V)] = ds_dv;
        a[(S, XI)] = ds_dxi;
        a[(S, N)] = ds_dn;
        a[(S, S)] = ds_ds;
        a[(N, V)] = xi.sin();
        a[(N, XI)] = v * xi.cos();
        a[(XI, V)] = a[(THETA, V)] - kappa * ds_dv;
        a[(XI, ZETA)] = a[(THETA, ZETA)];
        a[(XI, S)] = -dkappa * s_dot - kappa * ds_ds;
        a[(XI, N)] = -kappa * ds_dn;
        a[(XI, XI)] = -kappa * ds_dxi;

        let mut b = Matrix::zeros(STATE_DIM, CONTROL_DIM);
        b[(V, ACCEL)] = 1.0;
        b[(ZETA, STEER_RATE)] = 1.0;
        (a, b)
    }
}

/// One RK4 step of the bicycle, refusing states at the centerline singularity.
pub fn bicycle_step(
    state: &VehicleState,
    steer_rate: f64,
    accel: f64,
    spline: &Arc<CenterlineSpline>,
    wheelbase: f64,
    dt: f64,
) -> Result<VehicleState> {
    let check = |st: &VehicleState| {
        let margin = 1.0 - st.n * spline.kappa(st.s);
        if margin > SINGULARITY_MARGIN {
            Ok(())
        } else {
            Err(Error::Singularity { s: st.s, margin })
        }
    };
    check(state)?;
    let model = Bicycle {
        spline: spline.clone(),
        wheelbase,
    }
    .discretized(dt);
    let next = model.step(&state.to_vector(), &Vector::from_vec(vec![steer_rate, accel]));
    let out = VehicleState::from_slice(next.as_slice());
    check(&out)?;
    Ok(out)
}
