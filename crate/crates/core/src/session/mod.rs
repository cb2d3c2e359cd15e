//! Tick loop, partner sources, two-VP duets and the model comparison harness.
//!
//! Every tick runs detect, estimate, control and integrate in that order.
//! The controller only ever sees partner samples up to the current tick.

pub mod config;
pub mod log;

use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveController;
use crate::baselines::{hkb_fixed_control, hkb_fixed_follower_step, rpc_step, RpcParams, RpcState};
use crate::dynamics::{HkbParams, HkbState};
use crate::error::{Result, VpError};
use crate::metrics::{self, MetricsReport, DEFAULT_MAX_LAG};
use crate::optimal::OptimalController;
use crate::perception::{Perception, ReferenceSample};
use crate::trace::Trace;

pub use config::{FixedCoupling, Mode, PartnerSource, SessionConfig, SignatureSource, SyntheticMotion, SyntheticSpec};
pub use log::{SessionLog, TickFlags, TickRecord, ENGINE_VERSION};

#[derive(Debug, Clone)]
enum Controller {
    Afc(Box<AdaptiveController>),
    Opc(Box<OptimalController>),
    Rpc { params: RpcParams, state: RpcState },
    HkbFixed { params: HkbParams, coupling: FixedCoupling },
}

/// One virtual player: perception, controller and plant state.
#[derive(Debug, Clone)]
pub struct Engine {
    config: SessionConfig,
    perception: Perception,
    controller: Controller,
    state: HkbState,
    period: f64,
    tick: u64,
}

impl Engine {
    pub fn new(config: &SessionConfig) -> Result<Self> {
        let config = config.resolved()?;
        let period = config.effective_period();
        let state = HkbState::new(config.x0, config.y0);
        let plant = config.plant.unwrap_or(config.mode.default_plant());
        let controller = match config.mode {
            Mode::Afc => Controller::Afc(Box::new(AdaptiveController::new(
                plant,
                config.afc.unwrap_or_default(),
                config.afc_gains.unwrap_or_default(),
            )?)),
            Mode::HkbFixed => Controller::HkbFixed { params: plant, coupling: config.coupling.unwrap_or_default() },
            Mode::Rpc => Controller::Rpc {
                params: config.rpc.unwrap_or_default(),
                state: RpcState { x: state.x, x_dot: state.y, ..RpcState::default() },
            },
            _ => Controller::Opc(Box::new(OptimalController::new(
                plant,
                config.weights()?,
                period,
                config.signature_track()?,
            )?)),
        };
        Ok(Self { perception: Perception::new(period, config.alpha_f)?, config, controller, state, period, tick: 0 })
    }

    /// The resolved configuration.
    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> HkbState {
        self.state
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// Time of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.period
    }

    pub fn dropouts(&self) -> u64 {
        self.perception.dropout_count
    }

    /// Runs one tick with the partner sample detected now (`None` if nothing
    /// arrived). On error the engine state is left unchanged.
    pub fn tick(&mut self, sample: Option<f64>) -> Result<TickRecord> {
        let t = self.time();
        let mut perception = self.perception.clone();
        let clamps = perception.clamp_count;
        let reference = perception.observe(t, sample)?;
        let mut flags = TickFlags {
            dropout: sample.is_none(),
            clamped: perception.clamp_count > clamps,
            ..TickFlags::default()
        };
        let state = self.state;
        let mut gains = None;
        let mut weights = None;
        let (u, next) = match &mut self.controller {
            Controller::Afc(c) => {
                let out = c.tick(state, &reference)?;
                gains = Some(out.gains);
                flags.saturated = out.saturated;
                (out.u, out.next_state)
            }
            Controller::Opc(c) => {
                let out = c.tick(state, &reference)?;
                weights = Some(c.weights);
                flags.fallback = out.fell_back();
                (out.u_mid, out.next)
            }
            Controller::Rpc { params, state: rs } => {
                let next = rpc_step(*rs, reference.r_v_hat, params, t, self.period)?;
                let u = rpc_acceleration(rs, params, t);
                *rs = next;
                (u, HkbState::new(next.x, next.x_dot))
            }
            Controller::HkbFixed { params, coupling } => {
                let next = hkb_fixed_follower_step(state, &reference, coupling.a, coupling.b, params, self.period)?;
                (hkb_fixed_control(state, &reference, coupling.a, coupling.b), next)
            }
        };
        self.perception = perception;
        self.state = next;
        self.tick += 1;
        Ok(record(t, sample, &reference, state, u, gains, weights, flags))
    }
}

/// Commanded acceleration of the RPC avatar at time `t`.
fn rpc_acceleration(s: &RpcState, p: &RpcParams, t: f64) -> f64 {
    let mut acc = s.f;
    for i in 0..s.a.len() {
        acc += s.a[i] * p.omega[i] * (p.omega[i] * t).cos();
    }
    acc
}

#[allow(clippy::too_many_arguments)]
fn record(
    t: f64,
    sample: Option<f64>,
    r: &ReferenceSample,
    s: HkbState,
    u: f64,
    gains: Option<crate::adaptive::AdaptiveGains>,
    weights: Option<crate::optimal::OptimalWeights>,
    flags: TickFlags,
) -> TickRecord {
    TickRecord { t, hp_x: sample, hp_r_p: r.r_p, hp_v_hat: r.r_v_hat, vp_x: s.x, vp_v: s.y, u, gains, weights, flags }
}

/// Batch partner: one position per tick.
#[derive(Debug, Clone)]
pub enum PartnerFeed {
    Trace(Trace),
    Motion(SyntheticMotion),
}

impl PartnerFeed {
    pub fn from_source(source: &PartnerSource, seed: u64) -> Result<Self> {
        match source {
            PartnerSource::Recorded { path } => Ok(PartnerFeed::Trace(Trace::read(path)?)),
            PartnerSource::Samples { period, x } => Ok(PartnerFeed::Trace(Trace::from_positions(*period, x.clone(), None)?)),
            PartnerSource::Synthetic(spec) => Ok(PartnerFeed::Motion(spec.resolve(seed)?)),
            PartnerSource::Vp { .. } => Err(VpError::InvalidInput("a VP partner is driven by run_vp_vs_vp".into())),
            PartnerSource::Live => Err(VpError::InvalidInput("a live partner needs the realtime service".into())),
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        match self {
            PartnerFeed::Trace(tr) => tr.position_at(t),
            PartnerFeed::Motion(m) => m.position(t),
        }
    }
}

/// Runs a batch session. Divergence stops the run and returns the partial log
/// with `aborted` set.
pub fn run_session(cfg: &SessionConfig) -> Result<SessionLog> {
    let cfg = cfg.resolved()?;
    if let PartnerSource::Vp { config } = &cfg.partner {
        return Ok(run_vp_vs_vp(config, &cfg)?.1);
    }
    let feed = PartnerFeed::from_source(&cfg.partner, cfg.seed)?;
    let mut engine = Engine::new(&cfg)?;
    let mut log = SessionLog::new(engine.config().clone());
    for _ in 0..cfg.tick_count() {
        let sample = feed.position(engine.time());
        match engine.tick(Some(sample)) {
            Ok(r) => log.records.push(r),
            Err(e) => {
                log.aborted = Some(e.to_string());
                break;
            }
        }
    }
    Ok(log)
}

/// Couples two engines tick-synchronously; each sees the other's position
/// from the previous tick. Partner fields of both configs are ignored.
pub fn run_vp_vs_vp(leader_cfg: &SessionConfig, follower_cfg: &SessionConfig) -> Result<(SessionLog, SessionLog)> {
    let mut lead = Engine::new(leader_cfg)?;
    let mut follow = Engine::new(follower_cfg)?;
    if (lead.period() - follow.period()).abs() > 1e-12 {
        return Err(VpError::InvalidInput(format!(
            "both players need the same T, got {} and {}",
            lead.period(),
            follow.period()
        )));
    }
    let n = lead.config().tick_count().min(follow.config().tick_count());
    let header = |own: &SessionConfig, other: &SessionConfig| {
        let mut c = own.clone();
        c.partner = PartnerSource::Vp { config: Box::new(other.clone()) };
        c
    };
    let mut lead_log = SessionLog::new(header(lead.config(), follow.config()));
    let mut follow_log = SessionLog::new(header(follow.config(), lead.config()));
    let (mut lead_prev, mut follow_prev) = (lead.state().x, follow.state().x);
    for _ in 0..n {
        let rl = lead.tick(Some(follow_prev));
        let rf = follow.tick(Some(lead_prev));
        match (rl, rf) {
            (Ok(a), Ok(b)) => {
                lead_prev = a.vp_x;
                follow_prev = b.vp_x;
                lead_log.records.push(a);
                follow_log.records.push(b);
            }
            (a, b) => {
                let reason = a.err().or(b.err()).map(|e| e.to_string()).unwrap_or_default();
                lead_log.aborted = Some(reason.clone());
                follow_log.aborted = Some(reason);
                break;
            }
        }
    }
    Ok((lead_log, follow_log))
}

/// Leader and follower metrics of one log.
pub fn log_metrics(log: &SessionLog) -> Result<MetricsReport> {
    metrics::report(&log.partner_trace()?, &log.vp_trace()?, DEFAULT_MAX_LAG)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelColumn {
    pub name: String,
    pub report: Option<MetricsReport>,
    /// Why the column is empty, or why the run stopped early.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub columns: Vec<ModelColumn>,
}

pub const JKE_NOTE: &str = "Jirsa-Kelso excitator: no model equations available, column left blank";

impl ComparisonReport {
    pub fn column(&self, name: &str) -> Option<&ModelColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn render_table(&self) -> String {
        let cols: Vec<(String, Option<&MetricsReport>)> =
            self.columns.iter().map(|c| (c.name.clone(), c.report.as_ref())).collect();
        let mut out = metrics::render_table(&cols);
        for c in &self.columns {
            if let Some(n) = &c.note {
                out.push_str(&format!("{}: {n}\n", c.name));
            }
        }
        out
    }

    pub fn to_document(&self) -> serde_json::Value {
        let cols: Vec<serde_json::Value> = self
            .columns
            .iter()
            .map(|c| match &c.report {
                Some(r) => {
                    let mut d = metrics::report_document(&c.name, r);
                    if let Some(n) = &c.note {
                        d["note"] = n.clone().into();
                    }
                    d
                }
                None => serde_json::json!({ "model": c.name, "note": c.note }),
            })
            .collect();
        serde_json::json!({ "models": cols })
    }
}

/// Config that runs `mode` as follower of `leader` for the trace's duration.
pub fn follower_config(leader: &Trace, mode: Mode, seed: u64) -> Result<SessionConfig> {
    if leader.is_empty() {
        return Err(VpError::InvalidInput("leader trace is empty".into()));
    }
    let partner = PartnerSource::Samples { period: leader.period(), x: leader.x().to_vec() };
    let mut cfg = SessionConfig::new(mode, leader.period() * leader.len() as f64, partner);
    cfg.seed = seed;
    if mode == Mode::OpcCustom {
        cfg.theta_p = Some(0.5);
    }
    Ok(cfg)
}

/// Runs every config as a follower (in parallel) and reports RPE, CV and TL
/// per model. A blank JKE column is appended.
pub fn compare_configs(configs: &[(String, SessionConfig)]) -> Result<ComparisonReport> {
    let results: Vec<Result<ModelColumn>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(name, cfg)| {
                scope.spawn(move || -> Result<ModelColumn> {
                    let log = run_session(cfg)?;
                    let note = log.aborted.clone().map(|r| format!("stopped early: {r}"));
                    Ok(ModelColumn { name: name.clone(), report: Some(log_metrics(&log)?), note })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("model run panicked")).collect()
    });
    let mut columns = results.into_iter().collect::<Result<Vec<_>>>()?;
    columns.push(ModelColumn { name: "JKE".into(), report: None, note: Some(JKE_NOTE.into()) });
    Ok(ComparisonReport { columns })
}

pub fn compare_models(leader: &Trace, modes: &[Mode], seed: u64) -> Result<ComparisonReport> {
    if leader.is_empty() {
        return Err(VpError::InvalidInput("leader trace is empty".into()));
    }
    let configs = modes
        .iter()
        .map(|&m| Ok((m.as_str().to_string(), follower_config(leader, m, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    compare_configs(&configs)
}
