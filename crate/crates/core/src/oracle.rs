//! Single-shooting solver for the one-interval optimality conditions, used
//! to cross-check the collocation controller.
//!
//! State and costate satisfy
//!
//! ```text
//! x' = y            y' = drift(x, y) - lambda_2 / eta_m
//! lambda_1' = -lambda_2 d drift/dx
//! lambda_2' = -theta_sigma (y - r_sigma) - lambda_1 - lambda_2 d drift/dy
//! ```
//!
//! with `x(0), y(0)` given and `lambda(T) = (theta_p (x(T) - r_p_hat), 0)`.
//! Newton's method adjusts `lambda(0)` until the terminal conditions hold.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VpError};
use crate::integrate::rk4_step;
use crate::optimal::{IntervalProblem, Plant, SampledTrajectory};

pub const MIN_SUBSTEPS: usize = 1000;
pub const MAX_NEWTON_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub trajectory: SampledTrajectory,
    pub lambda0: [f64; 2],
    /// Max-norm of the terminal costate residual.
    pub residual: f64,
    pub iterations: usize,
}

fn hamiltonian_rhs(plant: &Plant, prob: &IntervalProblem, tau: f64, s: &[f64; 4]) -> [f64; 4] {
    let [x, y, l1, l2] = *s;
    let w = prob.weights;
    let (fx, fy) = plant.drift_jacobian(x, y);
    let u = -l2 / w.eta_m;
    [
        y,
        plant.drift(x, y) + u,
        -l2 * fx,
        -w.theta_sigma * (y - prob.r_sigma_at(tau)) - l1 - l2 * fy,
    ]
}

fn shoot(plant: &Plant, prob: &IntervalProblem, lambda0: [f64; 2], steps: usize, keep: bool) -> Result<([f64; 4], SampledTrajectory)> {
    let h = prob.period / steps as f64;
    let f = |tau: f64, s: &[f64; 4]| hamiltonian_rhs(plant, prob, tau, s);
    let mut s = [prob.state.x, prob.state.y, lambda0[0], lambda0[1]];
    let mut traj = SampledTrajectory::default();
    let eta = prob.weights.eta_m;
    for i in 0..=steps {
        let tau = i as f64 * h;
        if keep {
            traj.tau.push(tau);
            traj.x.push(s[0]);
            traj.v.push(s[1]);
            traj.u.push(-s[3] / eta);
        }
        if i < steps {
            let next = rk4_step(&f, tau, &s, h);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(VpError::OracleFailure(format!("shooting trajectory diverged at tau = {tau}")));
            }
            s = next;
        }
    }
    Ok((s, traj))
}

fn terminal_residual(prob: &IntervalProblem, end: &[f64; 4]) -> [f64; 2] {
    [end[2] - prob.weights.theta_p * (end[0] - prob.r_p_hat), end[3]]
}

/// Solves the boundary value problem by single shooting over `lambda(0)`.
pub fn bvp_oracle(prob: &IntervalProblem, plant: &Plant, substeps: usize) -> Result<OracleSolution> {
    prob.validate()?;
    let steps = substeps.max(MIN_SUBSTEPS);
    let eval = |l: [f64; 2]| -> Result<[f64; 2]> {
        let (end, _) = shoot(plant, prob, l, steps, false)?;
        Ok(terminal_residual(prob, &end))
    };
    // zero-control, zero-costate initial guess
    let mut lam = [0.0, 0.0];
    let mut r = eval(lam)?;
    let scale = prob.weights.eta_m.max(1e-12);
    for iter in 0..MAX_NEWTON_ITERATIONS {
        let norm = r[0].abs().max(r[1].abs());
        if norm < 1e-13 {
            let (_, trajectory) = shoot(plant, prob, lam, steps, true)?;
            return Ok(OracleSolution { trajectory, lambda0: lam, residual: norm, iterations: iter });
        }
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let d = 1e-6 * (lam[j].abs() + scale);
            let mut lp = lam;
            let mut lm = lam;
            lp[j] += d;
            lm[j] -= d;
            let (rp, rm) = (eval(lp)?, eval(lm)?);
            for i in 0..2 {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * d);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(VpError::OracleFailure(format!("singular shooting Jacobian at iteration {iter}")));
        }
        let dl0 = (jac[1][1] * r[0] - jac[0][1] * r[1]) / det;
        let dl1 = (-jac[1][0] * r[0] + jac[0][0] * r[1]) / det;
        let next = [lam[0] - dl0, lam[1] - dl1];
        let rn = eval(next)?;
        let stalled = (dl0.abs() <= 1e-16 * (1.0 + lam[0].abs())) && (dl1.abs() <= 1e-16 * (scale + lam[1].abs()));
        lam = next;
        r = rn;
        if stalled {
            let norm = r[0].abs().max(r[1].abs());
            let (_, trajectory) = shoot(plant, prob, lam, steps, true)?;
            return Ok(OracleSolution { trajectory, lambda0: lam, residual: norm, iterations: iter + 1 });
        }
    }
    Err(VpError::OracleFailure(format!(
        "Newton did not converge in {MAX_NEWTON_ITERATIONS} iterations (residual {:e})",
        r[0].abs().max(r[1].abs())
    )))
}
