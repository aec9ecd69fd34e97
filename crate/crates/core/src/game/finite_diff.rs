//! Central finite-difference derivatives, used to cross-check the analytic
//! Jacobians and Hessians supplied by dynamics and cost implementations.

use super::cost::{AgentObjective, StageExpansion, TerminalExpansion};
use super::dynamics::DynamicsModel;
use super::{Matrix, Vector};

/// Largest entrywise error, scaled by the magnitude of the reference (floored at 1).
pub fn max_rel_err(a: &Matrix, reference: &Matrix) -> f64 {
    let scale = reference.amax().max(1.0);
    (a - reference).amax() / scale
}

pub fn max_rel_err_vec(a: &Vector, reference: &Vector) -> f64 {
    let scale = reference.amax().max(1.0);
    (a - reference).amax() / scale
}

fn perturbed(v: &Vector, i: usize, h: f64) -> Vector {
    let mut out = v.clone();
    out[i] += h;
    out
}

pub fn dynamics_jacobians_fd(
    model: &dyn DynamicsModel,
    x: &Vector,
    u: &Vector,
    h: f64,
) -> (Matrix, Matrix) {
    let n = x.len();
    let m = u.len();
    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, m);
    for j in 0..n {
        let d = (model.step(&perturbed(x, j, h), u) - model.step(&perturbed(x, j, -h), u))
            / (2.0 * h);
        a.set_column(j, &d);
    }
    for j in 0..m {
        let d = (model.step(x, &perturbed(u, j, h)) - model.step(x, &perturbed(u, j, -h)))
            / (2.0 * h);
        b.set_column(j, &d);
    }
    (a, b)
}

/// Gradients from differences of the cost value; Hessians from differences
/// of the analytic gradient.
pub fn stage_expansion_fd(
    obj: &dyn AgentObjective,
    x: &Vector,
    u: &Vector,
    h: f64,
) -> StageExpansion {
    let (n, m) = (x.len(), u.len());
    let mut out = StageExpansion::zeros(n, m);
    out.value = obj.running_cost(x, u);
    for j in 0..n {
        out.lx[j] = (obj.running_cost(&perturbed(x, j, h), u)
            - obj.running_cost(&perturbed(x, j, -h), u))
            / (2.0 * h);
        let gp = obj.running_expansion(&perturbed(x, j, h), u);
        let gm = obj.running_expansion(&perturbed(x, j, -h), u);
        out.lxx.set_column(j, &((gp.lx - gm.lx) / (2.0 * h)));
        out.lux.set_column(j, &((gp.lu - gm.lu) / (2.0 * h)));
    }
    for j in 0..m {
        out.lu[j] = (obj.running_cost(x, &perturbed(u, j, h))
            - obj.running_cost(x, &perturbed(u, j, -h)))
            / (2.0 * h);
        let gp = obj.running_expansion(x, &perturbed(u, j, h));
        let gm = obj.running_expansion(x, &perturbed(u, j, -h));
        out.luu.set_column(j, &((gp.lu - gm.lu) / (2.0 * h)));
    }
    out
}

pub fn terminal_expansion_fd(obj: &dyn AgentObjective, x: &Vector, h: f64) -> TerminalExpansion {
    let n = x.len();
    let mut out = TerminalExpansion::zeros(n);
    out.value = obj.terminal_cost(x);
    for j in 0..n {
        out.lx[j] = (obj.terminal_cost(&perturbed(x, j, h))
            - obj.terminal_cost(&perturbed(x, j, -h)))
            / (2.0 * h);
        let gp = obj.terminal_expansion(&perturbed(x, j, h));
        let gm = obj.terminal_expansion(&perturbed(x, j, -h));
        out.lxx.set_column(j, &((gp.lx - gm.lx) / (2.0 * h)));
    }
    out
}

/// Worst relative error between an analytic stage expansion and its
/// finite-difference counterpart, over all gradient and Hessian blocks.
pub fn stage_expansion_error(analytic: &StageExpansion, fd: &StageExpansion) -> f64 {
    [
        max_rel_err_vec(&analytic.lx, &fd.lx),
        max_rel_err_vec(&analytic.lu, &fd.lu),
        max_rel_err(&analytic.lxx, &fd.lxx),
        max_rel_err(&analytic.luu, &fd.luu),
        max_rel_err(&analytic.lux, &fd.lux),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn terminal_expansion_error(analytic: &TerminalExpansion, fd: &TerminalExpansion) -> f64 {
    max_rel_err_vec(&analytic.lx, &fd.lx).max(max_rel_err(&analytic.lxx, &fd.lxx))
}
