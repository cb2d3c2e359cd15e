//! End-effector models: the controlled HKB oscillator, the mutually coupled
//! HKB pair, the linear damped oscillator, and the ring-shaped trapping
//! region that contains the uncontrolled oscillator's limit cycle.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, VpError};
use crate::integrate::{integrate, Scheme};

/// Substeps per call of every plant stepper (substep is at most dt/10).
pub const PLANT_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HkbParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Angular frequency in rad/s.
    pub omega: f64,
}

impl HkbParams {
    pub const fn new(alpha: f64, beta: f64, gamma: f64, omega: f64) -> Self {
        Self { alpha, beta, gamma, omega }
    }

    /// Oscillator tuned for the adaptive controller experiments.
    pub const fn adaptive_default() -> Self {
        Self::new(10.0, 20.0, -1.0, 0.1)
    }

    /// Oscillator tuned for the optimal controller experiments.
    pub const fn optimal_default() -> Self {
        Self::new(1.0, 1.0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("HKB parameters", &[self.alpha, self.beta, self.gamma, self.omega])?;
        if self.omega <= 0.0 {
            return Err(VpError::InvalidInput(format!("omega must be > 0, got {}", self.omega)));
        }
        Ok(())
    }
}

/// Position (normalized, arena is [-0.5, 0.5]) and velocity (1/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HkbState {
    pub x: f64,
    pub y: f64,
}

impl HkbState {
    pub const ORIGIN: HkbState = HkbState { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    fn from_array(a: [f64; 2]) -> Self {
        Self { x: a[0], y: a[1] }
    }
}

/// Time derivative of an [`HkbState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub dx: f64,
    pub dy: f64,
}

/// Which state the `alpha` coefficient weights inside the nonlinear damping.
///
/// The controlled end effector uses `alpha*y^2 + beta*x^2 - gamma`; the
/// limit-cycle analysis (and the optimal controller's Hamiltonian) uses
/// `alpha*x^2 + beta*y^2 - gamma`. With `alpha == beta` the two coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingForm {
    #[default]
    VelocityWeighted,
    PositionWeighted,
}

impl DampingForm {
    #[inline]
    pub fn damping(self, x: f64, y: f64, p: &HkbParams) -> f64 {
        match self {
            DampingForm::VelocityWeighted => p.alpha * y * y + p.beta * x * x - p.gamma,
            DampingForm::PositionWeighted => p.alpha * x * x + p.beta * y * y - p.gamma,
        }
    }

    /// Uncontrolled acceleration `-(damping)*y - omega^2*x`.
    #[inline]
    pub fn drift(self, x: f64, y: f64, p: &HkbParams) -> f64 {
        -self.damping(x, y, p) * y - p.omega * p.omega * x
    }
}

#[inline]
fn accel(form: DampingForm, x: f64, y: f64, u: f64, p: &HkbParams) -> f64 {
    form.drift(x, y, p) + u
}

/// Right-hand side of the controlled end-effector model.
pub fn hkb_derivative(state: HkbState, u: f64, p: &HkbParams) -> Result<Rate> {
    hkb_derivative_form(state, u, p, DampingForm::VelocityWeighted)
}

pub fn hkb_derivative_form(state: HkbState, u: f64, p: &HkbParams, form: DampingForm) -> Result<Rate> {
    ensure_finite("state and control", &[state.x, state.y, u])?;
    p.validate()?;
    Ok(Rate { dx: state.y, dy: accel(form, state.x, state.y, u, p) })
}

/// Advances the controlled end effector by `dt` with `u` held constant.
pub fn hkb_step(state: HkbState, u: f64, p: &HkbParams, dt: f64) -> Result<HkbState> {
    hkb_step_with(state, u, p, dt, DampingForm::VelocityWeighted, Scheme::Rk4)
}

pub fn hkb_step_with(
    state: HkbState,
    u: f64,
    p: &HkbParams,
    dt: f64,
    form: DampingForm,
    scheme: Scheme,
) -> Result<HkbState> {
    check_dt(dt)?;
    ensure_finite("state and control", &[state.x, state.y, u])?;
    p.validate()?;
    let f = |_t: f64, s: &[f64; 2]| [s[1], accel(form, s[0], s[1], u, p)];
    integrate(scheme, &f, 0.0, &state.to_array(), dt, PLANT_SUBSTEPS)
        .map(HkbState::from_array)
        .map_err(|(last, t)| VpError::Divergence { last: HkbState::from_array(last), t })
}

pub(crate) fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(VpError::InvalidInput(format!("time step must be > 0, got {dt}")))
    }
}

/// Two mutually coupled HKB oscillators `(z, z_dot)` and `(w, w_dot)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoupledHkbState {
    pub z: f64,
    pub z_dot: f64,
    pub w: f64,
    pub w_dot: f64,
}

fn coupled_rhs(s: &[f64; 4], p: &HkbParams, a: f64, b: f64) -> [f64; 4] {
    let [z, zd, w, wd] = *s;
    let form = DampingForm::VelocityWeighted;
    let d = z - w;
    let cz = (a + b * d * d) * (zd - wd);
    let cw = (a + b * d * d) * (wd - zd);
    [zd, form.drift(z, zd, p) + cz, wd, form.drift(w, wd, p) + cw]
}

/// Advances both oscillators, each driven by `[a + b(z-w)^2](z_dot - w_dot)`
/// with the roles swapped for the second one.
pub fn coupled_hkb_step(
    state: CoupledHkbState,
    p: &HkbParams,
    a: f64,
    b: f64,
    dt: f64,
) -> Result<CoupledHkbState> {
    check_dt(dt)?;
    ensure_finite("coupled state", &[state.z, state.z_dot, state.w, state.w_dot, a, b])?;
    p.validate()?;
    let f = |_t: f64, s: &[f64; 4]| coupled_rhs(s, p, a, b);
    let y0 = [state.z, state.z_dot, state.w, state.w_dot];
    match integrate(Scheme::Rk4, &f, 0.0, &y0, dt, PLANT_SUBSTEPS) {
        Ok([z, z_dot, w, w_dot]) => Ok(CoupledHkbState { z, z_dot, w, w_dot }),
        Err((last, t)) => Err(VpError::Divergence { last: HkbState::new(last[0], last[1]), t }),
    }
}

/// Energy-like function `V = (omega^2 x^2 + y^2) / 2` of the limit-cycle analysis.
pub fn cycle_energy(x: f64, y: f64, omega: f64) -> f64 {
    0.5 * (omega * omega * x * x + y * y)
}

/// `dV/dt = -(alpha x^2 + beta y^2 - gamma) y^2` along the uncontrolled
/// position-weighted oscillator.
pub fn cycle_energy_rate(x: f64, y: f64, p: &HkbParams) -> f64 {
    -DampingForm::PositionWeighted.damping(x, y, p) * y * y
}

/// Ring `c1 <= V(x, y) <= c2` containing a limit cycle of the uncontrolled
/// position-weighted oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleRegion {
    pub r_min: f64,
    pub r_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub omega: f64,
    /// `r_min == r_max`: the ring collapses onto a single ellipse.
    pub degenerate: bool,
}

impl LimitCycleRegion {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let v = cycle_energy(x, y, self.omega);
        v >= self.c1 && v <= self.c2
    }
}

pub fn limit_cycle_region(p: &HkbParams) -> Result<LimitCycleRegion> {
    p.validate()?;
    let (qa, qb) = (p.gamma / p.alpha, p.gamma / p.beta);
    if !(qa > 0.0 && qb > 0.0 && qa.is_finite() && qb.is_finite()) {
        return Err(VpError::NoRegion(format!(
            "gamma/alpha = {qa} and gamma/beta = {qb} must both be positive"
        )));
    }
    let (ra, rb) = (qa.sqrt(), qb.sqrt());
    let r_min = ra.min(rb);
    let r_max = ra.max(rb);
    let w2 = p.omega * p.omega;
    // r_min = max(sqrt(2 c1 / w^2), sqrt(2 c1)), r_max = min(sqrt(2 c2 / w^2), sqrt(2 c2))
    let c1 = 0.5 * r_min * r_min * w2.min(1.0);
    let c2 = 0.5 * r_max * r_max * w2.max(1.0);
    Ok(LimitCycleRegion { r_min, r_max, c1, c2, omega: p.omega, degenerate: r_min == r_max })
}

/// Linear damped oscillator `x'' + a_lin x' + b_lin x = u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub a_lin: f64,
    pub b_lin: f64,
}

pub fn linear_step(state: HkbState, u: f64, p: &LinearParams, dt: f64) -> Result<HkbState> {
    check_dt(dt)?;
    ensure_finite("state, control and parameters", &[state.x, state.y, u, p.a_lin, p.b_lin])?;
    let f = |_t: f64, s: &[f64; 2]| [s[1], -p.a_lin * s[1] - p.b_lin * s[0] + u];
    integrate(Scheme::Rk4, &f, 0.0, &state.to_array(), dt, PLANT_SUBSTEPS)
        .map(HkbState::from_array)
        .map_err(|(last, t)| VpError::Divergence { last: HkbState::from_array(last), t })
}
