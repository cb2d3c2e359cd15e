//! Adaptive feedback controller (AFC).
//!
//! The control law combines an HKB-style coordination term with adaptive
//! couplings `a`, `b` and a gated position correction:
//!
//! ```text
//! u = [a + b (x - r_p)^2] (x' - r_v) - C_p exp(-delta (x' - r_v)^2) (x - r_p)
//! ```
//!
//! The couplings follow adaptive laws chosen so that, inside each sampling
//! interval (where the velocity estimate is frozen and the reference moves
//! along its linear prediction), the energy
//! `E = [(x - r_p)^2 + (y - r_v)^2 + e^{2a} + e^{2b}] / 2` obeys
//! `dE/dt = -2 eta_a E` for any plant input.

use serde::{Deserialize, Serialize};

use crate::dynamics::{check_dt, DampingForm, HkbParams, HkbState};
use crate::error::{ensure_finite, Result, VpError};
use crate::integrate::{rk4_step, substeps};
use crate::perception::{ReferenceSample, ARENA_LENGTH};

/// Gains are clamped to `[-GAIN_LIMIT, GAIN_LIMIT]`.
pub const GAIN_LIMIT: f64 = 10.0;
/// Adaptive-law substeps per sampling interval (substep at most T/20).
pub const GAIN_SUBSTEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub c_p: f64,
    /// Velocity-gate width (s^2).
    pub delta: f64,
    /// Adaptation rate (1/s).
    pub eta_a: f64,
    /// Sampling period (s).
    pub period: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self { c_p: 40.0, delta: 0.25, eta_a: 30.0, period: 0.1 }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("adaptive config", &[self.c_p, self.delta, self.eta_a, self.period])?;
        if self.c_p <= 0.0 || self.delta <= 0.0 || self.period <= 0.0 {
            return Err(VpError::InvalidInput("C_p, delta and T must be positive".into()));
        }
        let (ok, threshold) = check_eta_condition(self.eta_a, self.period);
        if !ok {
            return Err(VpError::Condition(format!(
                "eta_a = {} must exceed ln 2 / (2T) = {threshold}",
                self.eta_a
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveGains {
    pub a: f64,
    pub b: f64,
}

impl Default for AdaptiveGains {
    fn default() -> Self {
        Self { a: -5.0, b: -5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDiagnostics {
    pub e: f64,
    pub e0: f64,
    /// Running supremum of `(T^2 + 1)(delta r_v)^2`.
    pub epsilon: f64,
    /// Conservative arena-length value of epsilon, for comparison.
    pub epsilon_conservative: f64,
    pub bound_pos: f64,
}

pub fn afc_control(state: HkbState, reference: &ReferenceSample, gains: AdaptiveGains, cfg: &AdaptiveConfig) -> Result<f64> {
    ensure_finite(
        "controller inputs",
        &[state.x, state.y, reference.r_p, reference.r_v_hat, gains.a, gains.b],
    )?;
    Ok(control_law(state.x - reference.r_p, state.y - reference.r_v_hat, gains, cfg))
}

#[inline]
fn control_law(ex: f64, ev: f64, gains: AdaptiveGains, cfg: &AdaptiveConfig) -> f64 {
    (gains.a + gains.b * ex * ex) * ev - cfg.c_p * (-cfg.delta * ev * ev).exp() * ex
}

/// `(da/dt, db/dt)` of the adaptive laws. Exponentials are evaluated on the
/// clamped gains so intermediate Runge-Kutta stages stay finite.
#[inline]
#[allow(clippy::too_many_arguments)]
fn gain_rates(x: f64, y: f64, r_p: f64, r_v: f64, u: f64, a: f64, b: f64, p: &HkbParams, eta: f64) -> (f64, f64) {
    let ex = x - r_p;
    let ev = y - r_v;
    let ac = a.clamp(-GAIN_LIMIT, GAIN_LIMIT);
    let bc = b.clamp(-GAIN_LIMIT, GAIN_LIMIT);
    let da = -(-2.0 * ac).exp() * (ex * ev + eta * ex * ex) - eta;
    let neg_drift = -DampingForm::VelocityWeighted.drift(x, y, p);
    let db = (-2.0 * bc).exp() * ev * (neg_drift - eta * ev - u) - eta;
    (da, db)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainUpdate {
    pub gains: AdaptiveGains,
    /// A gain hit the clamp during the update.
    pub saturated: bool,
    /// Integration blew up; the previous gains were held.
    pub diverged: bool,
}

fn clamp_gains(a: f64, b: f64) -> (AdaptiveGains, bool) {
    let ca = a.clamp(-GAIN_LIMIT, GAIN_LIMIT);
    let cb = b.clamp(-GAIN_LIMIT, GAIN_LIMIT);
    (AdaptiveGains { a: ca, b: cb }, ca != a || cb != b)
}

/// Integrates the adaptive laws over `dt` with the plant state, reference
/// and input frozen.
pub fn update_gains(
    gains: AdaptiveGains,
    state: HkbState,
    reference: &ReferenceSample,
    u: f64,
    p: &HkbParams,
    cfg: &AdaptiveConfig,
    dt: f64,
) -> Result<GainUpdate> {
    check_dt(dt)?;
    ensure_finite("gain update inputs", &[gains.a, gains.b, state.x, state.y, u, reference.r_p, reference.r_v_hat])?;
    let n = substeps(dt, 1, Some(cfg.period / GAIN_SUBSTEPS as f64));
    let h = dt / n as f64;
    let (x, y, rp, rv, eta) = (state.x, state.y, reference.r_p, reference.r_v_hat, cfg.eta_a);
    let f = |_t: f64, g: &[f64; 2]| {
        let (da, db) = gain_rates(x, y, rp, rv, u, g[0], g[1], p, eta);
        [da, db]
    };
    let mut g = [gains.a, gains.b];
    let mut saturated = false;
    for i in 0..n {
        let next = rk4_step(&f, i as f64 * h, &g, h);
        if next.iter().any(|v| !v.is_finite()) {
            let (held, _) = clamp_gains(g[0], g[1]);
            return Ok(GainUpdate { gains: held, saturated, diverged: true });
        }
        let (c, s) = clamp_gains(next[0], next[1]);
        saturated |= s;
        g = [c.a, c.b];
    }
    Ok(GainUpdate { gains: AdaptiveGains { a: g[0], b: g[1] }, saturated, diverged: false })
}

pub fn energy(state: HkbState, r_p: f64, r_v_hat: f64, gains: AdaptiveGains) -> f64 {
    let ex = state.x - r_p;
    let ev = state.y - r_v_hat;
    0.5 * (ex * ex + ev * ev + (2.0 * gains.a).exp() + (2.0 * gains.b).exp())
}

/// `ln 2 / (2T)`; the theorem requires `eta_a` strictly above it.
pub fn eta_threshold(period: f64) -> f64 {
    std::f64::consts::LN_2 / (2.0 * period)
}

pub fn check_eta_condition(eta_a: f64, period: f64) -> (bool, f64) {
    let threshold = eta_threshold(period);
    (eta_a > threshold, threshold)
}

/// Position-error bound `e^{eta T} sqrt(2 eps / (e^{2 eta T} - 2)) + 2 e^{-eta T} sqrt(E0)`.
pub fn tracking_bound(e0: f64, epsilon: f64, eta_a: f64, period: f64) -> Result<f64> {
    let (ok, threshold) = check_eta_condition(eta_a, period);
    if !ok {
        return Err(VpError::Condition(format!("eta_a = {eta_a} must exceed ln 2 / (2T) = {threshold}")));
    }
    if e0 < 0.0 || epsilon < 0.0 {
        return Err(VpError::InvalidInput("E0 and epsilon must be non-negative".into()));
    }
    let g = (eta_a * period).exp();
    Ok(g * (2.0 * epsilon / (g * g - 2.0)).sqrt() + 2.0 / g * e0.sqrt())
}

/// Arena-length bound on epsilon: `4 l^2 (1 + T^2) / T^2`.
pub fn epsilon_bound(length: f64, period: f64) -> Result<f64> {
    if length < 0.0 || !(period > 0.0) {
        return Err(VpError::InvalidInput("length must be >= 0 and T > 0".into()));
    }
    Ok(4.0 * length * length * (1.0 + period * period) / (period * period))
}

/// Observation of one adaptive-law substep, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineSample {
    /// Time since the start of the interval.
    pub tau: f64,
    pub h: f64,
    pub energy_start: f64,
    pub energy_end: f64,
    /// Either gain touched the clamp at the start or end of the substep.
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalOutcome {
    pub state: HkbState,
    pub gains: AdaptiveGains,
    pub saturated: bool,
    pub gains_diverged: bool,
}

/// Integrates plant and adaptive laws jointly over one sampling interval,
/// with `u` held and the reference moving along its linear prediction.
pub fn afc_interval(
    state: HkbState,
    gains: AdaptiveGains,
    reference: &ReferenceSample,
    u: f64,
    p: &HkbParams,
    cfg: &AdaptiveConfig,
    mut on_substep: impl FnMut(&FineSample),
) -> Result<IntervalOutcome> {
    let period = cfg.period;
    let n = substeps(period, GAIN_SUBSTEPS, None);
    let h = period / n as f64;
    let (rp0, rv, eta) = (reference.r_p, reference.r_v_hat, cfg.eta_a);
    let form = DampingForm::VelocityWeighted;
    let f = |tau: f64, s: &[f64; 4]| {
        let rp = rp0 + rv * tau;
        let (da, db) = gain_rates(s[0], s[1], rp, rv, u, s[2], s[3], p, eta);
        [s[1], form.drift(s[0], s[1], p) + u, da, db]
    };
    let mut s = [state.x, state.y, gains.a, gains.b];
    let mut saturated = false;
    let mut gains_diverged = false;
    let inside = |v: f64| v.abs() < GAIN_LIMIT;
    for i in 0..n {
        let tau = i as f64 * h;
        let mut next = rk4_step(&f, tau, &s, h);
        if !next[0].is_finite() || !next[1].is_finite() {
            return Err(VpError::Divergence { last: HkbState::new(s[0], s[1]), t: reference.t + tau });
        }
        if !next[2].is_finite() || !next[3].is_finite() {
            gains_diverged = true;
            next[2] = s[2];
            next[3] = s[3];
        }
        let free = inside(s[2]) && inside(s[3]) && inside(next[2]) && inside(next[3]);
        let (c, sat) = clamp_gains(next[2], next[3]);
        saturated |= sat;
        next[2] = c.a;
        next[3] = c.b;
        let e_start = energy(HkbState::new(s[0], s[1]), rp0 + rv * tau, rv, AdaptiveGains { a: s[2], b: s[3] });
        let e_end = energy(HkbState::new(next[0], next[1]), rp0 + rv * (tau + h), rv, c);
        on_substep(&FineSample { tau, h, energy_start: e_start, energy_end: e_end, saturated: !free });
        s = next;
    }
    Ok(IntervalOutcome {
        state: HkbState::new(s[0], s[1]),
        gains: AdaptiveGains { a: s[2], b: s[3] },
        saturated,
        gains_diverged,
    })
}

/// Per-tick result of [`AdaptiveController::tick`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfcTick {
    pub u: f64,
    /// Gains used to compute `u` (start of the interval).
    pub gains: AdaptiveGains,
    pub next_state: HkbState,
    pub next_gains: AdaptiveGains,
    pub saturated: bool,
    pub diagnostics: EnergyDiagnostics,
    /// Energy jump `E(kT) - E^-(kT)` at this sampling instant.
    pub energy_jump: f64,
}

/// Stateful AFC: gains, running epsilon and the energy bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveController {
    pub params: HkbParams,
    pub cfg: AdaptiveConfig,
    pub gains: AdaptiveGains,
    e0: Option<f64>,
    epsilon: f64,
    prev_r_v: Option<f64>,
    /// Energy at the end of the previous interval.
    e_minus: Option<f64>,
}

impl AdaptiveController {
    pub fn new(params: HkbParams, cfg: AdaptiveConfig, gains: AdaptiveGains) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        Ok(Self { params, cfg, gains, e0: None, epsilon: 0.0, prev_r_v: None, e_minus: None })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Control, adaptation and plant integration for one sampling interval.
    pub fn tick(&mut self, state: HkbState, reference: &ReferenceSample) -> Result<AfcTick> {
        let period = self.cfg.period;
        if let Some(prev) = self.prev_r_v {
            let dv = reference.r_v_hat - prev;
            self.epsilon = self.epsilon.max((period * period + 1.0) * dv * dv);
        }
        self.prev_r_v = Some(reference.r_v_hat);

        let e = energy(state, reference.r_p, reference.r_v_hat, self.gains);
        let e0 = *self.e0.get_or_insert(e);
        let energy_jump = self.e_minus.map_or(0.0, |em| e - em);

        let gains = self.gains;
        let u = afc_control(state, reference, gains, &self.cfg)?;
        let out = afc_interval(state, gains, reference, u, &self.params, &self.cfg, |_| {})?;
        self.gains = out.gains;
        self.e_minus = Some(energy(
            out.state,
            reference.position_at(period),
            reference.r_v_hat,
            out.gains,
        ));

        let diagnostics = EnergyDiagnostics {
            e,
            e0,
            epsilon: self.epsilon,
            epsilon_conservative: epsilon_bound(ARENA_LENGTH, period)?,
            bound_pos: tracking_bound(e0, self.epsilon, self.cfg.eta_a, period)?,
        };
        Ok(AfcTick {
            u,
            gains,
            next_state: out.state,
            next_gains: out.gains,
            saturated: out.saturated,
            diagnostics,
            energy_jump,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(r_p: f64, r_v_hat: f64) -> ReferenceSample {
        ReferenceSample { t: 0.0, r_p, r_v_hat, r_p_hat_next: r_p + 0.1 * r_v_hat }
    }

    #[test]
    fn control_vanishes_on_target() {
        let cfg = AdaptiveConfig::default();
        let u = afc_control(HkbState::new(0.2, -0.4), &reference(0.2, -0.4), AdaptiveGains::default(), &cfg).unwrap();
        assert_eq!(u, 0.0);
    }

    #[test]
    fn velocity_match_isolates_correction() {
        let cfg = AdaptiveConfig::default();
        let e = 0.07;
        let u = afc_control(HkbState::new(0.1 + e, 0.3), &reference(0.1, 0.3), AdaptiveGains { a: 3.0, b: -2.0 }, &cfg)
            .unwrap();
        assert!((u + cfg.c_p * e).abs() < 1e-12);
    }

    #[test]
    fn control_matches_hand_evaluation() {
        let cfg = AdaptiveConfig::default();
        let gains = AdaptiveGains { a: -5.0, b: -5.0 };
        let u = afc_control(HkbState::new(0.3, 0.1), &reference(0.1, -0.2), gains, &cfg).unwrap();
        // ex = 0.2, ev = 0.3: (-5 - 5*0.04)*0.3 - 40*exp(-0.25*0.09)*0.2
        let by_hand = -5.2 * 0.3 - 8.0 * (-0.0225f64).exp();
        let expanded = (-5.0 + -5.0 * 0.2 * 0.2) * (0.1 - (-0.2)) - 40.0 * (-0.25 * 0.3 * 0.3f64).exp() * (0.3 - 0.1);
        assert!((u - by_hand).abs() < 1e-12);
        assert!((u - expanded).abs() < 1e-12);
    }

    #[test]
    fn control_is_odd_in_errors() {
        let cfg = AdaptiveConfig::default();
        let g = AdaptiveGains { a: -1.3, b: 2.1 };
        for (ex, ev) in [(0.1, 0.2), (-0.3, 0.05), (0.02, -1.1)] {
            let u1 = control_law(ex, ev, g, &cfg);
            let u2 = control_law(-ex, -ev, g, &cfg);
            assert!((u1 + u2).abs() < 1e-14);
        }
    }

    #[test]
    fn gain_rates_at_equilibrium_are_pure_drift() {
        let p = HkbParams::adaptive_default();
        let (da, db) = gain_rates(0.0, 0.0, 0.0, 0.0, 0.0, -5.0, -5.0, &p, 30.0);
        assert_eq!((da, db), (-30.0, -30.0));
    }

    #[test]
    fn zero_rate_and_zero_errors_leave_gains_unchanged() {
        let p = HkbParams::adaptive_default();
        // eta_a = 0 violates the theorem condition, so bypass validation.
        let cfg = AdaptiveConfig { eta_a: 0.0, ..AdaptiveConfig::default() };
        let g = AdaptiveGains { a: -2.0, b: 1.5 };
        let out = update_gains(g, HkbState::new(0.1, 0.2), &reference(0.1, 0.2), 0.0, &p, &cfg, 0.1).unwrap();
        assert_eq!(out.gains, g);
        assert!(!out.saturated);
    }

    #[test]
    fn update_gains_step_halving() {
        let p = HkbParams::adaptive_default();
        let cfg = AdaptiveConfig::default();
        let g = AdaptiveGains { a: 0.5, b: 0.8 };
        let s = HkbState::new(0.12, 0.3);
        let r = reference(0.1, 0.25);
        let one = update_gains(g, s, &r, 0.4, &p, &cfg, 0.02).unwrap();
        let half = update_gains(g, s, &r, 0.4, &p, &cfg, 0.01).unwrap();
        let two = update_gains(half.gains, s, &r, 0.4, &p, &cfg, 0.01).unwrap();
        assert!((one.gains.a - two.gains.a).abs() < 1e-6);
        assert!((one.gains.b - two.gains.b).abs() < 1e-6);
    }

    #[test]
    fn update_gains_saturates_at_clamp() {
        let p = HkbParams::adaptive_default();
        let cfg = AdaptiveConfig::default();
        let out = update_gains(AdaptiveGains { a: -9.9, b: -9.99 }, HkbState::new(0.0, 0.0), &reference(0.0, 0.0), 0.0, &p, &cfg, 0.1)
            .unwrap();
        assert!(out.saturated);
        assert_eq!(out.gains, AdaptiveGains { a: -GAIN_LIMIT, b: -GAIN_LIMIT });
    }

    #[test]
    fn energy_examples() {
        let zero = energy(HkbState::new(0.1, 0.2), 0.1, 0.2, AdaptiveGains { a: 0.0, b: 0.0 });
        assert_eq!(zero, 1.0);
        let e = energy(HkbState::new(1.0, 0.0), 0.0, 0.0, AdaptiveGains { a: -10.0, b: -10.0 });
        assert!((e - 0.5 * (1.0 + 2.0 * (-20.0f64).exp())).abs() < 1e-15);
        let g = AdaptiveGains { a: -3.0, b: 0.2 };
        let e1 = energy(HkbState::new(0.3, 0.0), 0.0, 0.0, g);
        let e2 = energy(HkbState::new(0.0, 0.3), 0.0, 0.0, g);
        assert_eq!(e1, e2);
        let tiny = energy(HkbState::ORIGIN, 0.0, 0.0, AdaptiveGains { a: -200.0, b: -200.0 });
        assert!(tiny < 1e-100);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(tracking_bound(0.0, 0.0, 30.0, 0.1).unwrap(), 0.0);
        let b = tracking_bound(0.25, 0.0, 30.0, 0.1).unwrap();
        assert!((b - 2.0 * (-3.0f64).exp() * 0.5).abs() < 1e-15);
        // e^3 sqrt(0.02 / (e^6 - 2)) + 2 e^-3
        let direct = 3.0f64.exp() * (0.02 / (6.0f64.exp() - 2.0)).sqrt() + 2.0 / 3.0f64.exp();
        let v = tracking_bound(1.0, 0.01, 30.0, 0.1).unwrap();
        assert!((v - direct).abs() < 1e-14);
        assert!((v - 0.241_347_350_26).abs() < 1e-10);
        assert!(matches!(tracking_bound(1.0, 0.0, 1.0, 0.1), Err(VpError::Condition(_))));
    }

    #[test]
    fn epsilon_bound_examples() {
        assert!((epsilon_bound(1.0, 1.0).unwrap() - 8.0).abs() < 1e-15);
        assert_eq!(epsilon_bound(0.0, 0.1).unwrap(), 0.0);
        let a = epsilon_bound(0.7, 0.1).unwrap();
        let b = epsilon_bound(1.4, 0.1).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-9);
    }

    #[test]
    fn eta_condition_examples() {
        let (ok, th) = check_eta_condition(30.0, 0.1);
        assert!(ok);
        assert!((th - 3.465_735_902_8).abs() < 1e-9);
        let (ok, _) = check_eta_condition(th, 0.1);
        assert!(!ok);
        let (ok, th) = check_eta_condition(1e-3, 1e6);
        assert!(ok && th < 1e-6);
    }

    #[test]
    fn config_rejects_slow_adaptation() {
        let cfg = AdaptiveConfig { eta_a: 2.0, ..AdaptiveConfig::default() };
        assert!(matches!(cfg.validate(), Err(VpError::Condition(_))));
    }
}
