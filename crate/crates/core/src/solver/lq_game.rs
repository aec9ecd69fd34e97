//! Coupled backward recursions for feedback Nash and maximum-entropy Nash
//! equilibria of linear-quadratic games.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{regularize_own_block, LqApproximation, Matrix, Vector};

use super::policy::{AffineGaussianPolicy, FeedbackLaw, QuadraticValue, RationalityBeta};

const ASYMMETRY_TOL: f64 = 1e-8;

/// Output of one backward pass.
#[derive(Debug, Clone)]
pub struct LqGameSolution {
    pub laws: Vec<FeedbackLaw>,
    pub values: Vec<QuadraticValue>,
    /// `[agent][t]` own-control Hessian of the agent's Q-function.
    pub q_hessians: Vec<Vec<Matrix>>,
    /// Sum over steps and agents of the squared own-control Q gradients at
    /// the nominal.
    pub stationarity_residual: f64,
    /// Largest feedforward entry; the control change a full Newton step would make.
    pub max_feedforward: f64,
    /// Number of Q-function own-control blocks that were shifted to be positive definite.
    pub regularized: usize,
}

impl LqGameSolution {
    /// Attaches the Gaussian covariances `(beta H)^-1` to the laws.
    pub fn gaussian_policies(&self, beta: RationalityBeta) -> Vec<AffineGaussianPolicy> {
        self.laws
            .iter()
            .zip(&self.q_hessians)
            .map(|(law, hs)| AffineGaussianPolicy {
                law: law.clone(),
                covariances: hs.iter().map(|h| covariance(h, beta.get())).collect(),
                q_hessians: hs.clone(),
            })
            .collect()
    }
}

fn try_covariance(h: &Matrix, beta: f64) -> Option<Matrix> {
    let scaled = h * beta;
    match scaled.clone().cholesky() {
        Some(c) => Some(c.inverse()),
        None => scaled.try_inverse(),
    }
    .filter(|m| m.iter().all(|v| v.is_finite()))
}

fn covariance(h: &Matrix, beta: f64) -> Matrix {
    try_covariance(h, beta).expect("own-control Hessian is regularized")
}

fn log_det_pd(m: &Matrix) -> f64 {
    match m.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => m.determinant().abs().ln(),
    }
}

type Blocks = [(Range<usize>, Range<usize>)];

/// `out = m * d` for `d` block diagonal; `state` picks the blocks' column
/// ranges from the state ranges (for `a`) or the control ranges (for `b`).
fn mul_block_diag(out: &mut Matrix, m: &Matrix, d: &Matrix, blocks: &Blocks, state: bool) {
    out.fill(0.0);
    for (r, c) in blocks {
        let c = if state { r } else { c };
        out.view_mut((0, c.start), (m.nrows(), c.len())).gemm(
            1.0,
            &m.columns(r.start, r.len()),
            &d.view((r.start, c.start), (r.len(), c.len())),
            0.0,
        );
    }
}

/// `out += d^T * m` for `d` block diagonal.
fn add_tr_mul_block_diag(out: &mut Matrix, d: &Matrix, m: &Matrix, blocks: &Blocks, state: bool) {
    for (r, c) in blocks {
        let c = if state { r } else { c };
        out.view_mut((c.start, 0), (c.len(), m.ncols())).gemm_tr(
            1.0,
            &d.view((r.start, c.start), (r.len(), c.len())),
            &m.rows(r.start, r.len()),
            1.0,
        );
    }
}

fn block(m: &Matrix, r: &std::ops::Range<usize>) -> Matrix {
    m.view((r.start, r.start), (r.len(), r.len())).into_owned()
}

/// Deterministic feedback Nash equilibrium of an LQ game.
pub fn solve_feedback_ne_lq(lq: &LqApproximation) -> Result<LqGameSolution> {
    backward_pass(lq, None)
}

/// Maximum-entropy Nash equilibrium of an LQ game. The policy means are the
/// feedback Nash laws; the values carry the entropy and expectation terms.
pub fn solve_maxent_ne_lq(
    lq: &LqApproximation,
    beta: RationalityBeta,
) -> Result<(Vec<AffineGaussianPolicy>, LqGameSolution)> {
    let sol = backward_pass(lq, Some(beta.get()))?;
    Ok((sol.gaussian_policies(beta), sol))
}

/// Shared recursion. With `beta = None` only the deterministic values are
/// propagated; the gains and feedforwards do not depend on `beta`.
pub fn backward_pass(lq: &LqApproximation, beta: Option<f64>) -> Result<LqGameSolution> {
    damped_backward_pass(lq, beta, 0.0)
}

/// Backward pass whose gains come from own-control blocks shifted by
/// `damping * I`; values are propagated with the undamped Q-functions.
/// Zero damping is the plain recursion.
pub fn damped_backward_pass(
    lq: &LqApproximation,
    beta: Option<f64>,
    damping: f64,
) -> Result<LqGameSolution> {
    let n_agents = lq.num_agents();
    let nx = lq.state_dim();
    let nu = lq.control_dim();
    let steps = lq.stages.len();
    let horizon = steps + 1;
    let ranges = &lq.control_ranges;

    let mut p_quad: Vec<Vec<Matrix>> = vec![vec![Matrix::zeros(0, 0); horizon]; n_agents];
    let mut p_lin: Vec<Vec<Vector>> = vec![vec![Vector::zeros(0); horizon]; n_agents];
    let mut p_const: Vec<Vec<f64>> = vec![vec![0.0; horizon]; n_agents];
    let mut gains: Vec<Vec<Matrix>> = vec![Vec::with_capacity(steps); n_agents];
    let mut ffs: Vec<Vec<Vector>> = vec![Vec::with_capacity(steps); n_agents];
    let mut q_hessians: Vec<Vec<Matrix>> = vec![Vec::with_capacity(steps); n_agents];

    for (i, term) in lq.terminal.iter().enumerate() {
        p_quad[i][steps] = (&term.lxx + term.lxx.transpose()) * 0.5;
        p_lin[i][steps] = term.lx.clone();
        p_const[i][steps] = term.value;
    }

    let mut pa = Matrix::zeros(nx, nx);
    let mut pb = Matrix::zeros(nx, nu);
    let mut residual = 0.0;
    let mut max_ff: f64 = 0.0;
    let mut regularized = 0;

    for t in (0..steps).rev() {
        let stage = &lq.stages[t];

        let mut q_xx = Vec::with_capacity(n_agents);
        let mut q_ux = Vec::with_capacity(n_agents);
        let mut q_uu = Vec::with_capacity(n_agents);
        let mut q_x = Vec::with_capacity(n_agents);
        let mut q_u = Vec::with_capacity(n_agents);
        let mut q_0 = Vec::with_capacity(n_agents);

        let mut s = Matrix::zeros(nu, nu);
        let mut rhs = Matrix::zeros(nu, nx + 1);

        for i in 0..n_agents {
            let l = &stage.costs[i];
            let p = &p_quad[i][t + 1];
            let pl = &p_lin[i][t + 1];
            let blocks = &lq.blocks;
            mul_block_diag(&mut pa, p, &stage.a, blocks, true);
            mul_block_diag(&mut pb, p, &stage.b, blocks, false);
            let mut xx = l.lxx.clone();
            add_tr_mul_block_diag(&mut xx, &stage.a, &pa, blocks, true);
            let mut ux = l.lux.clone();
            add_tr_mul_block_diag(&mut ux, &stage.b, &pa, blocks, false);
            let mut uu = l.luu.clone();
            add_tr_mul_block_diag(&mut uu, &stage.b, &pb, blocks, false);
            let mut x1 = l.lx.clone();
            x1.gemv_tr(1.0, &stage.a, pl, 1.0);
            let mut u1 = l.lu.clone();
            u1.gemv_tr(1.0, &stage.b, pl, 1.0);
            let r = &ranges[i];
            if regularize_own_block(&mut uu, r) > 0.0 {
                regularized += 1;
            }
            s.rows_mut(r.start, r.len()).copy_from(&uu.rows(r.start, r.len()));
            for d in r.clone() {
                s[(d, d)] += damping;
            }
            rhs.view_mut((r.start, 0), (r.len(), nx))
                .copy_from(&ux.rows(r.start, r.len()));
            rhs.view_mut((r.start, nx), (r.len(), 1))
                .copy_from(&u1.rows(r.start, r.len()));
            residual += u1.rows(r.start, r.len()).norm_squared();
            q_0.push(l.value + p_const[i][t + 1]);
            q_xx.push(xx);
            q_ux.push(ux);
            q_uu.push(uu);
            q_x.push(x1);
            q_u.push(u1);
        }

        let sol = s
            .lu()
            .solve(&rhs)
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or(Error::IllPosedStage { t })?;
        let k_gain = sol.columns(0, nx).into_owned();
        let k_ff = sol.column(nx).into_owned();
        max_ff = max_ff.max(k_ff.amax());

        let own_h: Vec<Matrix> = (0..n_agents).map(|i| block(&q_uu[i], &ranges[i])).collect();
        let sigmas: Option<Vec<Matrix>> = match beta {
            Some(b) => Some(
                own_h
                    .iter()
                    .map(|h| try_covariance(h, b))
                    .collect::<Option<Vec<_>>>()
                    .ok_or(Error::IllPosedStage { t })?,
            ),
            None => None,
        };

        for i in 0..n_agents {
            // P = Qxx + K'(Quu K - Qux) - Qux' K
            let mut m = q_ux[i].clone();
            m.gemm(1.0, &q_uu[i], &k_gain, -1.0);
            let mut p_new = q_xx[i].clone();
            p_new.gemm_tr(1.0, &k_gain, &m, 1.0);
            p_new.gemm_tr(-1.0, &q_ux[i], &k_gain, 1.0);
            let mut asym: f64 = 0.0;
            for a in 0..nx {
                for b in a + 1..nx {
                    let (u, v) = (p_new[(a, b)], p_new[(b, a)]);
                    asym = asym.max((u - v).abs());
                    let mean = 0.5 * (u + v);
                    p_new[(a, b)] = mean;
                    p_new[(b, a)] = mean;
                }
            }
            if asym > ASYMMETRY_TOL * p_new.amax().max(1.0) {
                return Err(Error::Asymmetric {
                    t,
                    agent: i,
                    residual: asym,
                });
            }
            let quu_kff = &q_uu[i] * &k_ff;
            let mut p_lin_new = q_x[i].clone();
            p_lin_new.gemv_tr(1.0, &k_gain, &(&quu_kff - &q_u[i]), 1.0);
            p_lin_new.gemv_tr(-1.0, &q_ux[i], &k_ff, 1.0);
            let mut c_new = q_0[i] + 0.5 * k_ff.dot(&quu_kff) - k_ff.dot(&q_u[i]);

            if let (Some(b), Some(sig)) = (beta, sigmas.as_ref()) {
                // expectation over the other agents' Gaussian noise
                for (j, r) in ranges.iter().enumerate() {
                    if j != i {
                        c_new += 0.5 * (block(&q_uu[i], r) * &sig[j]).trace();
                    }
                }
                // -(1/beta) ln Z for the agent's own Gaussian
                let m = ranges[i].len() as f64;
                c_new += (log_det_pd(&(&own_h[i] * b)) - m * (2.0 * PI).ln()) / (2.0 * b);
            }

            p_quad[i][t] = p_new;
            p_lin[i][t] = p_lin_new;
            p_const[i][t] = c_new;
            let r = &ranges[i];
            gains[i].push(k_gain.rows(r.start, r.len()).into_owned());
            ffs[i].push(k_ff.rows(r.start, r.len()).into_owned());
            q_hessians[i].push(own_h[i].clone());
        }
    }

    let nominal = Arc::new(lq.nominal.clone());
    let mut laws = Vec::with_capacity(n_agents);
    let mut values = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        gains[i].reverse();
        ffs[i].reverse();
        q_hessians[i].reverse();
        let r = &ranges[i];
        laws.push(FeedbackLaw {
            agent: i,
            gains: std::mem::take(&mut gains[i]),
            feedforward: std::mem::take(&mut ffs[i]),
            nominal: nominal.clone(),
            nominal_controls: lq
                .nominal
                .controls
                .iter()
                .map(|u| u.rows(r.start, r.len()).into_owned())
                .collect(),
        });
        values.push(QuadraticValue {
            quadratic: std::mem::take(&mut p_quad[i]),
            linear: std::mem::take(&mut p_lin[i]),
            constant: std::mem::take(&mut p_const[i]),
            nominal: nominal.clone(),
        });
    }

    Ok(LqGameSolution {
        laws,
        values,
        q_hessians,
        stationarity_residual: residual,
        max_feedforward: max_ff,
        regularized,
    })
}
