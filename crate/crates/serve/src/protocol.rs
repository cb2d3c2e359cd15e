//! Wire messages. Each WebSocket text frame carries one single-line JSON
//! document tagged by `type`.

use serde::{Deserialize, Serialize};

use mirrorvp::session::{Mode, SessionConfig, SignatureSource};
use mirrorvp::{AdaptiveGains, HkbParams};

/// Session parameters a client may set in its handshake. Unset fields fall
/// back to the server defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    /// Client timestamp, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<AdaptiveGains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<HkbParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    /// Seconds between the handshake and the first tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum ClientMessage {
    Config(ClientConfig),
    Hp { t: f64, x: f64 },
}

/// Effective parameters of a running session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub t: f64,
    pub mode: Mode,
    #[serde(rename = "T")]
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<AdaptiveGains>,
    pub warmup: f64,
}

impl ConfigEcho {
    pub fn from_config(cfg: &SessionConfig, t: f64) -> Self {
        let weights = cfg.mode.is_opc().then(|| cfg.weights().ok()).flatten();
        Self {
            t,
            mode: cfg.mode,
            period: cfg.effective_period(),
            theta_p: weights.map(|w| w.theta_p),
            eta_m: weights.map(|w| w.eta_m),
            gains: (cfg.mode == Mode::Afc).then(|| cfg.afc_gains.unwrap_or_default()),
            warmup: cfg.live_warmup,
        }
    }
}

/// Rolling indexes over the last window of ticks. `cv` and `tl` need enough
/// samples for phase estimation and stay empty until then.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub t: f64,
    pub window: f64,
    pub rms: f64,
    pub cv: Option<f64>,
    pub tl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Config(ConfigEcho),
    Vp {
        t: f64,
        x: f64,
        v: f64,
        /// Partner sample consumed this tick; absent on dropout.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hp_x: Option<f64>,
    },
    Metrics(MetricsSnapshot),
    Error { t: f64, message: String },
}

impl ServerMessage {
    pub fn to_frame(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }

    pub fn from_frame(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

impl ClientMessage {
    pub fn to_frame(&self) -> String {
        serde_json::to_string(self).expect("client message serializes")
    }

    pub fn from_frame(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
