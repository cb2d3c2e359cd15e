use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveConfig, AdaptiveGains};
use crate::baselines::RpcParams;
use crate::dynamics::HkbParams;
use crate::error::{ensure_finite, Result, VpError};
use crate::optimal::{mode_preset, OpcMode, OptimalWeights, DEFAULT_ETA_M, DEFAULT_PERIOD};
use crate::perception::DEFAULT_SMOOTHING;
use crate::signature::SignatureTrack;
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Afc,
    OpcFollower,
    OpcLeader,
    /// Requires `theta_p` in the config.
    OpcCustom,
    Rpc,
    HkbFixed,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::Afc, Mode::OpcFollower, Mode::OpcLeader, Mode::OpcCustom, Mode::Rpc, Mode::HkbFixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Afc => "afc",
            Mode::OpcFollower => "opc-follower",
            Mode::OpcLeader => "opc-leader",
            Mode::OpcCustom => "opc-custom",
            Mode::Rpc => "rpc",
            Mode::HkbFixed => "hkb-fixed",
        }
    }

    pub fn is_opc(self) -> bool {
        matches!(self, Mode::OpcFollower | Mode::OpcLeader | Mode::OpcCustom)
    }

    /// Sampling period used when the config leaves it out.
    pub fn default_period(self) -> f64 {
        match self {
            Mode::Afc | Mode::HkbFixed | Mode::Rpc => AdaptiveConfig::default().period,
            _ => DEFAULT_PERIOD,
        }
    }

    pub fn default_plant(self) -> HkbParams {
        if self.is_opc() {
            HkbParams::optimal_default()
        } else {
            HkbParams::adaptive_default()
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = VpError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| VpError::InvalidInput(format!("unknown mode `{s}`")))
    }
}

/// Sum of sinusoids `sum_i A_i sin(2 pi f_i t + phi_i)` with `A_i = peak w_i / sum w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Hz.
    pub frequencies: Vec<f64>,
    /// Bound on |x(t)|.
    pub peak: f64,
    /// Relative amplitudes (all 1 when absent).
    pub weights: Option<Vec<f64>>,
    /// Radians; drawn uniformly from `[0, 2 pi)` with `seed` when absent.
    pub phases: Option<Vec<f64>>,
    /// Falls back to the session seed.
    pub seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { frequencies: vec![0.1, 0.25, 0.4], peak: 0.4, weights: None, phases: None, seed: None }
    }
}

impl SyntheticSpec {
    /// Single sinusoid `amplitude sin(2 pi freq t)`.
    pub fn sinusoid(freq: f64, amplitude: f64) -> Self {
        Self { frequencies: vec![freq], peak: amplitude, weights: None, phases: Some(vec![0.0]), seed: None }
    }

    /// Fixes the amplitudes and phases so the source is self-describing.
    pub fn resolve(&self, session_seed: u64) -> Result<SyntheticMotion> {
        let n = self.frequencies.len();
        if n == 0 {
            return Err(VpError::InvalidInput("synthetic source needs at least one frequency".into()));
        }
        ensure_finite("synthetic frequencies", &self.frequencies)?;
        ensure_finite("synthetic peak", &[self.peak])?;
        let weights = self.weights.clone().unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(VpError::InvalidInput("synthetic weights must be non-negative, one per frequency".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(VpError::InvalidInput("synthetic weights must not all be zero".into()));
        }
        let phases = match &self.phases {
            Some(p) if p.len() == n => {
                ensure_finite("synthetic phases", p)?;
                p.clone()
            }
            Some(_) => return Err(VpError::InvalidInput("one phase per frequency required".into())),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(session_seed));
                (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
            }
        };
        let amplitudes = weights.iter().map(|w| self.peak * w / total).collect();
        Ok(SyntheticMotion { frequencies: self.frequencies.clone(), amplitudes, phases })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMotion {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl SyntheticMotion {
    pub fn position(&self, t: f64) -> f64 {
        let mut x = 0.0;
        for i in 0..self.frequencies.len() {
            x += self.amplitudes[i] * (2.0 * PI * self.frequencies[i] * t + self.phases[i]).sin();
        }
        x
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let mut v = 0.0;
        for i in 0..self.frequencies.len() {
            let w = 2.0 * PI * self.frequencies[i];
            v += self.amplitudes[i] * w * (w * t + self.phases[i]).cos();
        }
        v
    }

    pub fn trace(&self, period: f64, samples: usize) -> Result<Trace> {
        let x = (0..samples).map(|k| self.position(k as f64 * period)).collect();
        Trace::from_positions(period, x, None)
    }
}

/// Where the partner's positions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PartnerSource {
    /// Trace file (`t,x[,v]`), interpolated at tick times and held past the end.
    Recorded { path: PathBuf },
    /// Inline samples on a uniform grid starting at t = 0.
    Samples { period: f64, x: Vec<f64> },
    Synthetic(SyntheticSpec),
    /// Another virtual player, coupled with a one-tick delay.
    Vp { config: Box<SessionConfig> },
    /// Positions streamed by the realtime service.
    Live,
}

impl Default for PartnerSource {
    fn default() -> Self {
        PartnerSource::Synthetic(SyntheticSpec::default())
    }
}

/// Desired-velocity reference for the optimal controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignatureSource {
    /// Trace file; recorded velocities are used when present, else differences.
    Trace { path: PathBuf },
    /// Inline desired velocities.
    Samples { period: f64, v: Vec<f64> },
    /// Velocity of a synthetic motion over `length` seconds.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default)]
        length: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedCoupling {
    pub a: f64,
    pub b: f64,
}

impl Default for FixedCoupling {
    fn default() -> Self {
        Self { a: -1.0, b: -1.0 }
    }
}

/// One session. Omitted fields take mode-dependent defaults; see [`SessionConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Sampling period (s).
    #[serde(rename = "T", alias = "period", default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Seconds.
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<HkbParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub afc: Option<AdaptiveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub afc_gains: Option<AdaptiveGains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpc: Option<RpcParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<FixedCoupling>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default = "default_alpha_f")]
    pub alpha_f: f64,
    #[serde(default)]
    pub partner: PartnerSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureSource>,
    #[serde(default)]
    pub seed: u64,
    /// Seconds of wall clock before the first tick; live sessions only.
    #[serde(default = "default_warmup")]
    pub live_warmup: f64,
}

fn default_alpha_f() -> f64 {
    DEFAULT_SMOOTHING
}

fn default_warmup() -> f64 {
    2.0
}

impl SessionConfig {
    pub fn new(mode: Mode, duration: f64, partner: PartnerSource) -> Self {
        Self {
            mode,
            period: None,
            duration,
            plant: None,
            afc: None,
            afc_gains: None,
            theta_p: None,
            eta_m: None,
            rpc: None,
            coupling: None,
            x0: 0.0,
            y0: 0.0,
            alpha_f: DEFAULT_SMOOTHING,
            partner,
            signature: None,
            seed: 0,
            live_warmup: default_warmup(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn effective_period(&self) -> f64 {
        self.period.unwrap_or_else(|| self.mode.default_period())
    }

    /// Number of ticks the session runs.
    pub fn tick_count(&self) -> usize {
        (self.duration / self.effective_period() + 1e-9).floor() as usize
    }

    /// OPC weights for the configured mode.
    pub fn weights(&self) -> Result<OptimalWeights> {
        let mut w = match self.mode {
            Mode::OpcFollower => mode_preset(OpcMode::Follower)?,
            Mode::OpcLeader => mode_preset(OpcMode::Leader)?,
            Mode::OpcCustom => {
                let tp = self
                    .theta_p
                    .ok_or_else(|| VpError::InvalidInput("mode opc-custom requires theta_p".into()))?;
                mode_preset(OpcMode::Custom(tp))?
            }
            m => return Err(VpError::InvalidInput(format!("mode {m} has no optimal weights"))),
        };
        if let Some(tp) = self.theta_p {
            if self.mode != Mode::OpcCustom {
                w = OptimalWeights::new(tp, 1.0 - tp, w.eta_m)?;
            }
        }
        w.eta_m = self.eta_m.unwrap_or(DEFAULT_ETA_M);
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("duration, x0, y0, alpha_f", &[self.duration, self.x0, self.y0, self.alpha_f])?;
        if !(self.duration > 0.0) {
            return Err(VpError::InvalidInput(format!("duration must be > 0, got {}", self.duration)));
        }
        let period = self.effective_period();
        if !(period > 0.0 && period.is_finite()) {
            return Err(VpError::InvalidInput(format!("T must be > 0, got {period}")));
        }
        if !(self.alpha_f > 0.0 && self.alpha_f <= 1.0) {
            return Err(VpError::InvalidInput(format!("alpha_f must be in (0, 1], got {}", self.alpha_f)));
        }
        if self.mode.is_opc() {
            self.weights()?;
        }
        if let Some(p) = &self.plant {
            p.validate()?;
        }
        Ok(())
    }

    /// All defaults filled in, so the config fully describes the run.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut c = self.clone();
        let period = self.effective_period();
        c.period = Some(period);
        match self.mode {
            Mode::Afc => {
                c.plant.get_or_insert(self.mode.default_plant());
                let afc = c.afc.get_or_insert_with(AdaptiveConfig::default);
                afc.period = period;
                afc.validate()?;
                c.afc_gains.get_or_insert_with(AdaptiveGains::default);
            }
            Mode::HkbFixed => {
                c.plant.get_or_insert(self.mode.default_plant());
                c.coupling.get_or_insert_with(FixedCoupling::default);
            }
            Mode::Rpc => {
                c.rpc.get_or_insert_with(RpcParams::default);
            }
            _ => {
                c.plant.get_or_insert(self.mode.default_plant());
                let w = self.weights()?;
                c.theta_p = Some(w.theta_p);
                c.eta_m = Some(w.eta_m);
                if c.signature.is_none() {
                    c.signature = Some(SignatureSource::Synthetic {
                        spec: SyntheticSpec { seed: Some(self.seed.wrapping_add(1)), ..SyntheticSpec::default() },
                        length: None,
                    });
                }
            }
        }
        if let PartnerSource::Synthetic(spec) = &mut c.partner {
            let m = spec.resolve(self.seed)?;
            spec.phases = Some(m.phases);
        }
        if let Some(SignatureSource::Synthetic { spec, length }) = &mut c.signature {
            let m = spec.resolve(self.seed)?;
            spec.phases = Some(m.phases);
            length.get_or_insert(self.duration.max(period));
        }
        if let PartnerSource::Vp { config } = &mut c.partner {
            **config = config.resolved()?;
        }
        Ok(c)
    }

    /// Desired-velocity track for OPC modes.
    pub fn signature_track(&self) -> Result<SignatureTrack> {
        let period = self.effective_period();
        match &self.signature {
            None => Err(VpError::InvalidInput("no signature configured".into())),
            Some(SignatureSource::Trace { path }) => {
                let tr = Trace::read(path)?;
                SignatureTrack::new(tr.velocities(), tr.period())
            }
            Some(SignatureSource::Samples { period, v }) => SignatureTrack::new(v.clone(), *period),
            Some(SignatureSource::Synthetic { spec, length }) => {
                let motion = spec.resolve(self.seed)?;
                let len = length.unwrap_or(self.duration).max(period);
                let n = ((len / period) + 1e-9).floor().max(1.0) as usize;
                SignatureTrack::new((0..n).map(|k| motion.velocity(k as f64 * period)).collect(), period)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("opc".parse::<Mode>().is_err());
    }

    #[test]
    fn synthetic_amplitudes_fit_peak() {
        let m = SyntheticSpec::default().resolve(9).unwrap();
        assert_eq!(m.amplitudes.len(), 3);
        assert!((m.amplitudes.iter().sum::<f64>() - 0.4).abs() < 1e-15);
        let tr = m.trace(0.01, 10_000).unwrap();
        assert!(tr.x().iter().all(|x| x.abs() <= 0.4 + 1e-12));
        // seeded phases are reproducible
        assert_eq!(SyntheticSpec::default().resolve(9).unwrap(), m);
        assert_ne!(SyntheticSpec::default().resolve(10).unwrap(), m);
    }

    #[test]
    fn sinusoid_spec() {
        let m = SyntheticSpec::sinusoid(0.25, 0.4).resolve(0).unwrap();
        assert!((m.position(1.0) - 0.4).abs() < 1e-12);
        assert!(m.velocity(1.0).abs() < 1e-12);
    }

    #[test]
    fn tick_counts() {
        let mut c = SessionConfig::new(Mode::Afc, 0.3, PartnerSource::default());
        c.period = Some(0.1);
        assert_eq!(c.tick_count(), 3);
        c.duration = 60.0;
        c.period = Some(0.03);
        assert_eq!(c.tick_count(), 2000);
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let text = r#"{"mode":"opc-custom","theta_p":0.43,"duration":5}"#;
        let c = SessionConfig::from_json(text).unwrap();
        assert_eq!(c.effective_period(), 0.03);
        let r = c.resolved().unwrap();
        assert_eq!(r.theta_p, Some(0.43));
        assert_eq!(r.eta_m, Some(1e-4));
        assert!(r.signature.is_some());
        let back = SessionConfig::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.resolved().unwrap(), r);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SessionConfig::from_json(r#"{"mode":"opc-custom","duration":5}"#).unwrap().resolved().is_err());
        assert!(SessionConfig::from_json(r#"{"mode":"afc","duration":0}"#).unwrap().validate().is_err());
        assert!(SessionConfig::from_json(r#"{"mode":"afc","duration":1,"T":-0.1}"#).unwrap().validate().is_err());
        assert!(SessionConfig::from_json(r#"{"mode":"afc","duration":1,"bogus":1}"#).is_err());
        // eta_a below ln2/(2T)
        let c = r#"{"mode":"afc","duration":1,"afc":{"c_p":40,"delta":0.25,"eta_a":1,"period":0.1}}"#;
        assert!(matches!(SessionConfig::from_json(c).unwrap().resolved(), Err(VpError::Condition(_))));
    }
}
