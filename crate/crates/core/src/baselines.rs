//! Comparison followers: the reactive-predictive controller (a bank of
//! slow sinusoids with adaptive amplitudes plus an integral velocity
//! correction) and an HKB follower with fixed couplings.

use serde::{Deserialize, Serialize};

use crate::dynamics::{check_dt, hkb_step, HkbParams, HkbState, PLANT_SUBSTEPS};
use crate::error::{ensure_finite, Result, VpError};
use crate::integrate::{integrate, Scheme};
use crate::perception::ReferenceSample;

pub const RPC_MODES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RpcState {
    pub x: f64,
    pub x_dot: f64,
    /// Integral velocity correction.
    pub f: f64,
    pub a: [f64; RPC_MODES],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpcParams {
    /// Fixed frequencies (rad/s).
    pub omega: [f64; RPC_MODES],
    /// Amplitude adaptation rate.
    pub lambda: f64,
    /// Velocity-correction gain.
    pub k: f64,
}

impl Default for RpcParams {
    fn default() -> Self {
        Self { omega: [0.025, 0.05, 0.075, 0.1, 0.125], lambda: 0.01, k: 30.0 }
    }
}

type RpcVec = [f64; 3 + RPC_MODES];

fn rpc_rhs(t: f64, s: &RpcVec, r_v_hat: f64, p: &RpcParams) -> RpcVec {
    let mut out = [0.0; 3 + RPC_MODES];
    let mut feed = 0.0;
    let mut fit = 0.0;
    for i in 0..RPC_MODES {
        let (sn, cs) = (p.omega[i] * t).sin_cos();
        feed += s[3 + i] * p.omega[i] * cs;
        fit += s[3 + i] * sn;
    }
    out[0] = s[1];
    out[1] = feed + s[2];
    out[2] = p.k * (r_v_hat - s[1]);
    for i in 0..RPC_MODES {
        out[3 + i] = p.lambda * (r_v_hat - fit) * (p.omega[i] * t).sin();
    }
    out
}

/// Advances the RPC avatar from absolute time `t` by `dt` with the leader
/// velocity estimate held.
pub fn rpc_step(state: RpcState, r_v_hat: f64, p: &RpcParams, t: f64, dt: f64) -> Result<RpcState> {
    check_dt(dt)?;
    ensure_finite("RPC inputs", &[state.x, state.x_dot, state.f, r_v_hat, t, p.lambda, p.k])?;
    ensure_finite("RPC amplitudes", &state.a)?;
    let mut y0 = [0.0; 3 + RPC_MODES];
    y0[0] = state.x;
    y0[1] = state.x_dot;
    y0[2] = state.f;
    y0[3..].copy_from_slice(&state.a);
    let f = |tt: f64, s: &RpcVec| rpc_rhs(tt, s, r_v_hat, p);
    let s = integrate(Scheme::Rk4, &f, t, &y0, dt, PLANT_SUBSTEPS)
        .map_err(|(last, tt)| VpError::Divergence { last: HkbState::new(last[0], last[1]), t: tt })?;
    let mut a = [0.0; RPC_MODES];
    a.copy_from_slice(&s[3..]);
    Ok(RpcState { x: s[0], x_dot: s[1], f: s[2], a })
}

/// Fixed-coupling HKB input `[a + b (x - r_p)^2] (x' - r_v)`.
pub fn hkb_fixed_control(state: HkbState, reference: &ReferenceSample, a: f64, b: f64) -> f64 {
    let ex = state.x - reference.r_p;
    (a + b * ex * ex) * (state.y - reference.r_v_hat)
}

pub fn hkb_fixed_follower_step(
    state: HkbState,
    reference: &ReferenceSample,
    a: f64,
    b: f64,
    p: &HkbParams,
    dt: f64,
) -> Result<HkbState> {
    ensure_finite("couplings", &[a, b])?;
    hkb_step(state, hkb_fixed_control(state, reference, a, b), p, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::{afc_control, AdaptiveConfig, AdaptiveGains};

    fn reference(r_p: f64, r_v_hat: f64) -> ReferenceSample {
        ReferenceSample { t: 0.0, r_p, r_v_hat, r_p_hat_next: r_p + 0.1 * r_v_hat }
    }

    fn run(mut s: RpcState, r_v: impl Fn(f64) -> f64, p: &RpcParams, dt: f64, n: usize) -> RpcState {
        for k in 0..n {
            let t = k as f64 * dt;
            s = rpc_step(s, r_v(t), p, t, dt).unwrap();
        }
        s
    }

    #[test]
    fn rest_stays_at_rest() {
        let s = run(RpcState::default(), |_| 0.0, &RpcParams::default(), 0.1, 100);
        assert_eq!(s, RpcState::default());
    }

    // With the amplitudes frozen the loop x'' = f, f' = k (c - x') has no
    // damping: x' = c (1 - cos(sqrt(k) t)), oscillating about c.
    #[test]
    fn frozen_bank_velocity_oscillates_about_target() {
        let p = RpcParams { lambda: 0.0, ..RpcParams::default() };
        let c = 0.3;
        let dt = 0.01;
        let mut s = RpcState::default();
        let w = p.k.sqrt();
        let mut mean = 0.0;
        let n = 2000;
        for k in 0..n {
            let t = k as f64 * dt;
            s = rpc_step(s, c, &p, t, dt).unwrap();
            let t1 = (k + 1) as f64 * dt;
            let exact = c * (1.0 - (w * t1).cos());
            assert!((s.x_dot - exact).abs() < 1e-7, "t = {t1}");
            mean += s.x_dot / n as f64;
        }
        assert!((mean - c).abs() < 0.01 * c, "{mean}");
        assert_eq!(s.a, [0.0; RPC_MODES]);
    }

    #[test]
    fn agrees_with_step_halving() {
        let p = RpcParams::default();
        let r_v = |t: f64| 0.4 * 2.0 * std::f64::consts::PI * 0.25 * (2.0 * std::f64::consts::PI * 0.25 * t).cos();
        let coarse = run(RpcState::default(), r_v, &p, 0.01, 500);
        let mut fine = RpcState::default();
        for k in 0..1000 {
            let t = k as f64 * 0.005;
            // leader velocity held over each coarse interval, as in the coarse run
            fine = rpc_step(fine, r_v((k / 2) as f64 * 0.01), &p, t, 0.005).unwrap();
        }
        assert!((coarse.x - fine.x).abs() < 1e-6);
        assert!((coarse.x_dot - fine.x_dot).abs() < 1e-6);
    }

    #[test]
    fn amplitudes_stay_bounded() {
        let p = RpcParams::default();
        let peak = 0.4 * 2.0 * std::f64::consts::PI * 0.25;
        let r_v = |t: f64| peak * (2.0 * std::f64::consts::PI * 0.25 * t).cos();
        let s = run(RpcState::default(), r_v, &p, 0.1, 600);
        assert!(s.a.iter().all(|a| a.abs() <= 10.0 * peak));
    }

    #[test]
    fn hkb_fixed_examples() {
        let p = HkbParams::adaptive_default();
        let st = HkbState::new(0.1, 0.2);
        let matched = reference(0.1, 0.2);
        assert_eq!(hkb_fixed_control(st, &matched, -1.0, -1.0), 0.0);
        let free = hkb_step(st, 0.0, &p, 0.1).unwrap();
        assert_eq!(hkb_fixed_follower_step(st, &matched, -1.0, -1.0, &p, 0.1).unwrap(), free);
        let other = reference(-0.2, 0.5);
        assert_eq!(hkb_fixed_follower_step(st, &other, 0.0, 0.0, &p, 0.1).unwrap(), free);
    }

    #[test]
    fn hkb_fixed_matches_afc_coordination_term() {
        let p = HkbParams::adaptive_default();
        let cfg = AdaptiveConfig { c_p: 0.0, ..AdaptiveConfig::default() };
        let st = HkbState::new(0.13, -0.4);
        let r = reference(-0.05, 0.3);
        let u = afc_control(st, &r, AdaptiveGains { a: -1.3, b: 2.1 }, &cfg).unwrap();
        let via_afc = hkb_step(st, u, &p, 0.1).unwrap();
        let direct = hkb_fixed_follower_step(st, &r, -1.3, 2.1, &p, 0.1).unwrap();
        assert_eq!(via_afc, direct);
    }
}
