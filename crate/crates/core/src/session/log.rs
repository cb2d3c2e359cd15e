use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveGains;
use crate::error::{Result, VpError};
use crate::optimal::OptimalWeights;
use crate::session::config::SessionConfig;
use crate::trace::Trace;

pub const ENGINE_VERSION: &str = concat!("mirrorvp ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TickFlags {
    /// No partner sample arrived this tick.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub dropout: bool,
    /// The partner sample was outside the arena.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
    /// An adaptive gain hit its clamp.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub saturated: bool,
    /// The collocation system was singular; `u = 0` was applied.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

/// State of one tick, taken before integrating to the next tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    /// Raw partner position (`None` on dropout).
    pub hp_x: Option<f64>,
    /// Filtered partner position used by the controller.
    pub hp_r_p: f64,
    pub hp_v_hat: f64,
    pub vp_x: f64,
    pub vp_v: f64,
    pub u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<AdaptiveGains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<OptimalWeights>,
    #[serde(default)]
    pub flags: TickFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub engine: String,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(Box<LogHeader>),
    Record(TickRecord),
    Abort { reason: String },
}

/// Header plus one record per tick; optionally the reason a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: LogHeader,
    pub records: Vec<TickRecord>,
    pub aborted: Option<String>,
}

impl SessionLog {
    pub fn new(config: SessionConfig) -> Self {
        Self { header: LogHeader { engine: ENGINE_VERSION.into(), config }, records: Vec::new(), aborted: None }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.header.config
    }

    /// One JSON document per line: header, records, then an abort line if any.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let line = |l: &Line| serde_json::to_string(l).expect("log line serializes");
        let _ = writeln!(out, "{}", line(&Line::Header(Box::new(self.header.clone()))));
        for r in &self.records {
            let _ = writeln!(out, "{}", line(&Line::Record(*r)));
        }
        if let Some(reason) = &self.aborted {
            let _ = writeln!(out, "{}", line(&Line::Abort { reason: reason.clone() }));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty()).enumerate();
        let header = match lines.next() {
            Some((_, l)) => match serde_json::from_str::<Line>(l)? {
                Line::Header(h) => *h,
                _ => return Err(VpError::Parse("session log must start with a header line".into())),
            },
            None => return Err(VpError::Parse("empty session log".into())),
        };
        let mut log = SessionLog { header, records: Vec::new(), aborted: None };
        for (i, l) in lines {
            if log.aborted.is_some() {
                return Err(VpError::Parse(format!("line {}: content after abort line", i + 1)));
            }
            match serde_json::from_str::<Line>(l)? {
                Line::Record(r) => {
                    if log.records.last().is_some_and(|p| p.t >= r.t) {
                        return Err(VpError::Parse(format!("line {}: times must increase", i + 1)));
                    }
                    log.records.push(r);
                }
                Line::Abort { reason } => log.aborted = Some(reason),
                Line::Header(_) => return Err(VpError::Parse(format!("line {}: second header", i + 1))),
            }
        }
        Ok(log)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Raw partner positions; dropouts hold the last received value.
    pub fn partner_trace(&self) -> Result<Trace> {
        let mut last = self.records.iter().find_map(|r| r.hp_x).unwrap_or(0.0);
        let x = self
            .records
            .iter()
            .map(|r| {
                if let Some(v) = r.hp_x {
                    last = v;
                }
                last
            })
            .collect();
        Trace::new(self.records.iter().map(|r| r.t).collect(), x, None)
    }

    /// Virtual-player positions with their exact velocities.
    pub fn vp_trace(&self) -> Result<Trace> {
        Trace::new(
            self.records.iter().map(|r| r.t).collect(),
            self.records.iter().map(|r| r.vp_x).collect(),
            Some(self.records.iter().map(|r| r.vp_v).collect()),
        )
    }
}
