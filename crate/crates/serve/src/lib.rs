//! Live-play endpoint for the virtual player.
//!
//! Every WebSocket connection gets its own engine. After the `config`
//! handshake the engine ticks on the server clock at period T, consuming the
//! newest `hp` sample received since the previous tick (none means a
//! dropout). Connecting to `/replay?log=NAME&rate=R` streams a stored session
//! log from the log directory instead.

pub mod protocol;

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use futures_util::stream::{SplitSink, SplitStream};
use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::time::{interval_at, sleep_until, Instant, MissedTickBehavior};
use tokio_tungstenite::tungstenite::handshake::server::{Request, Response};
use tokio_tungstenite::tungstenite::http::Uri;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

use mirrorvp::metrics;
use mirrorvp::session::{Engine, Mode, PartnerSource, SessionConfig, SessionLog, SignatureSource, TickRecord};
use mirrorvp::{Trace, VpError};

pub use protocol::{ClientConfig, ClientMessage, ConfigEcho, MetricsSnapshot, ServerMessage};

/// Nominal duration of a live session; the log header records the real one.
const LIVE_DURATION: f64 = 86_400.0;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error(transparent)]
    Engine(#[from] VpError),
}

pub type Result<T> = std::result::Result<T, ServeError>;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Mode used when the client does not name one.
    pub mode: Mode,
    /// Tick period used when the client does not set `T`.
    pub tick: Option<f64>,
    /// Session logs are written here on disconnect; replay reads from here.
    pub log_dir: Option<PathBuf>,
    pub silence_timeout: Duration,
    pub metrics_every: Duration,
    /// Seconds of history behind each metrics message.
    pub metrics_window: f64,
    /// Warm-up used when the client does not set one.
    pub warmup: Option<f64>,
    /// Signature track for OPC sessions that do not send one.
    pub signature: Option<SignatureSource>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Afc,
            tick: None,
            log_dir: None,
            silence_timeout: Duration::from_secs(5),
            metrics_every: Duration::from_secs(1),
            metrics_window: 10.0,
            warmup: None,
            signature: None,
        }
    }
}

/// Accepts connections until the listener fails.
pub async fn serve(listener: TcpListener, opts: ServeOptions) -> Result<()> {
    let opts = Arc::new(opts);
    let mut next_id = 0u64;
    loop {
        let (stream, peer) = listener.accept().await?;
        next_id += 1;
        let (id, opts) = (next_id, Arc::clone(&opts));
        tokio::spawn(async move {
            if let Err(e) = handle_connection(stream, id, &opts).await {
                tracing::warn!(%peer, id, "connection ended with error: {e}");
            }
        });
    }
}

type Sink = SplitSink<WebSocketStream<TcpStream>, Message>;
type Source = SplitStream<WebSocketStream<TcpStream>>;

async fn send(sink: &mut Sink, msg: &ServerMessage) -> Result<()> {
    sink.send(Message::text(msg.to_frame())).await?;
    Ok(())
}

async fn fail(sink: &mut Sink, t: f64, message: String) -> Result<()> {
    send(sink, &ServerMessage::Error { t, message }).await?;
    let _ = sink.close().await;
    Ok(())
}

#[allow(clippy::result_large_err)]
async fn handle_connection(stream: TcpStream, id: u64, opts: &ServeOptions) -> Result<()> {
    let mut uri: Option<Uri> = None;
    let ws = tokio_tungstenite::accept_hdr_async(stream, |req: &Request, resp: Response| {
        uri = Some(req.uri().clone());
        Ok(resp)
    })
    .await?;
    let uri = uri.unwrap_or_default();
    let (mut sink, source) = ws.split();
    if uri.path() == "/replay" {
        return replay(&mut sink, uri.query().unwrap_or(""), opts).await;
    }
    live(&mut sink, source, id, opts).await
}

#[allow(clippy::large_enum_variant)]
enum Ending {
    Closed,
    Silent,
    Failed,
    Restart(ClientConfig),
}

/// Session config for a live client, defaults filled from the server options.
pub fn live_config(client: &ClientConfig, opts: &ServeOptions) -> std::result::Result<SessionConfig, VpError> {
    let mode = client.mode.unwrap_or(opts.mode);
    let mut cfg = SessionConfig::new(mode, LIVE_DURATION, PartnerSource::Live);
    cfg.period = client.period.or(opts.tick);
    cfg.theta_p = client.theta_p;
    cfg.eta_m = client.eta_m;
    cfg.afc_gains = client.gains;
    cfg.plant = client.plant;
    cfg.signature = client.signature.clone().or_else(|| opts.signature.clone());
    if let Some(seed) = client.seed {
        cfg.seed = seed;
    }
    if let Some(x0) = client.x0 {
        cfg.x0 = x0;
    }
    if let Some(w) = client.warmup.or(opts.warmup) {
        cfg.live_warmup = w;
    }
    cfg.resolved()
}

async fn next_text(source: &mut Source) -> Option<std::result::Result<String, String>> {
    loop {
        match source.next().await? {
            Ok(Message::Text(t)) => return Some(Ok(t.to_string())),
            Ok(Message::Binary(_)) => return Some(Err("binary frames are not supported".into())),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

async fn live(sink: &mut Sink, mut source: Source, id: u64, opts: &ServeOptions) -> Result<()> {
    let first = tokio::time::timeout(opts.silence_timeout, next_text(&mut source)).await;
    let mut client = match first {
        Err(_) | Ok(None) => return Ok(()),
        Ok(Some(Err(e))) => return fail(sink, 0.0, e).await,
        Ok(Some(Ok(text))) => match ClientMessage::from_frame(&text) {
            Ok(ClientMessage::Config(c)) => c,
            Ok(_) => return fail(sink, 0.0, "first message must be type=config".into()).await,
            Err(e) => return fail(sink, 0.0, format!("malformed message: {e}")).await,
        },
    };
    for round in 0.. {
        let cfg = match live_config(&client, opts) {
            Ok(c) => c,
            Err(e) => return fail(sink, 0.0, format!("config rejected: {e}")).await,
        };
        let (log, ending) = run_live(sink, &mut source, &cfg, opts).await?;
        if let Some(dir) = &opts.log_dir {
            write_log(dir, id, round, log).await?;
        }
        match ending {
            Ending::Restart(c) => client = c,
            Ending::Silent => {
                let _ = sink.close().await;
                break;
            }
            Ending::Closed | Ending::Failed => break,
        }
    }
    Ok(())
}

async fn write_log(dir: &Path, id: u64, round: u32, mut log: SessionLog) -> Result<()> {
    let cfg = &mut log.header.config;
    cfg.duration = (log.records.len().max(1) as f64) * cfg.effective_period();
    let path = dir.join(format!("session-{id:04}-{round}.jsonl"));
    tokio::fs::write(&path, log.to_jsonl()).await?;
    tracing::info!(path = %path.display(), records = log.records.len(), "session log written");
    Ok(())
}

/// Held partner positions and VP states for the rolling metrics.
struct Window {
    cap: usize,
    t: VecDeque<f64>,
    hp: VecDeque<f64>,
    vp: VecDeque<f64>,
    v: VecDeque<f64>,
    last_hp: Option<f64>,
}

impl Window {
    fn new(cap: usize) -> Self {
        Self { cap, t: VecDeque::new(), hp: VecDeque::new(), vp: VecDeque::new(), v: VecDeque::new(), last_hp: None }
    }

    fn push(&mut self, r: &TickRecord) {
        if r.hp_x.is_some() {
            self.last_hp = r.hp_x;
        }
        let Some(hp) = self.last_hp else { return };
        if self.t.len() == self.cap {
            self.t.pop_front();
            self.hp.pop_front();
            self.vp.pop_front();
            self.v.pop_front();
        }
        self.t.push_back(r.t);
        self.hp.push_back(hp);
        self.vp.push_back(r.vp_x);
        self.v.push_back(r.vp_v);
    }

    fn snapshot(&self, t: f64, window: f64) -> Option<MetricsSnapshot> {
        let times: Vec<f64> = self.t.iter().copied().collect();
        let hp = Trace::new(times.clone(), self.hp.iter().copied().collect(), None).ok()?;
        let vp = Trace::new(times, self.vp.iter().copied().collect(), Some(self.v.iter().copied().collect())).ok()?;
        match metrics::report(&hp, &vp, metrics::DEFAULT_MAX_LAG) {
            Ok(r) => Some(MetricsSnapshot { t, window, rms: r.rms, cv: Some(r.cv), tl: Some(r.tl_seconds) }),
            Err(_) => Some(MetricsSnapshot { t, window, rms: metrics::rms(&hp, &vp).ok()?, cv: None, tl: None }),
        }
    }
}

async fn run_live(sink: &mut Sink, source: &mut Source, cfg: &SessionConfig, opts: &ServeOptions) -> Result<(SessionLog, Ending)> {
    let mut engine = Engine::new(cfg)?;
    let period = engine.period();
    send(sink, &ServerMessage::Config(ConfigEcho::from_config(engine.config(), 0.0))).await?;
    let mut log = SessionLog::new(engine.config().clone());

    let start = Instant::now() + Duration::from_secs_f64(cfg.live_warmup.max(0.0));
    let mut ticker = interval_at(start, Duration::from_secs_f64(period));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut reporter = interval_at(start + opts.metrics_every, opts.metrics_every);
    reporter.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut window = Window::new((opts.metrics_window / period).ceil().max(1.0) as usize);

    let mut mailbox: Option<f64> = None;
    let mut last_heard = Instant::now();
    let ending = loop {
        tokio::select! {
            biased;
            _ = ticker.tick() => {
                match engine.tick(mailbox.take()) {
                    Ok(r) => {
                        send(sink, &ServerMessage::Vp { t: r.t, x: r.vp_x, v: r.vp_v, hp_x: r.hp_x }).await?;
                        window.push(&r);
                        log.records.push(r);
                    }
                    Err(e) => {
                        log.aborted = Some(e.to_string());
                        fail(sink, engine.time(), format!("session aborted: {e}")).await?;
                        break Ending::Failed;
                    }
                }
            }
            _ = reporter.tick() => {
                if let Some(m) = window.snapshot(engine.time(), opts.metrics_window) {
                    send(sink, &ServerMessage::Metrics(m)).await?;
                }
            }
            _ = sleep_until(last_heard + opts.silence_timeout) => {
                tracing::info!("client silent for {:?}, ending session", opts.silence_timeout);
                break Ending::Silent;
            }
            frame = next_text(source) => {
                last_heard = Instant::now();
                match frame {
                    None => break Ending::Closed,
                    Some(Err(e)) => {
                        fail(sink, engine.time(), e).await?;
                        break Ending::Failed;
                    }
                    Some(Ok(text)) => match ClientMessage::from_frame(&text) {
                        Ok(ClientMessage::Hp { x, .. }) if x.is_finite() => mailbox = Some(x),
                        Ok(ClientMessage::Hp { x, .. }) => {
                            fail(sink, engine.time(), format!("hp position must be finite, got {x}")).await?;
                            break Ending::Failed;
                        }
                        Ok(ClientMessage::Config(c)) => break Ending::Restart(c),
                        Err(e) => {
                            fail(sink, engine.time(), format!("malformed message: {e}")).await?;
                            break Ending::Failed;
                        }
                    },
                }
            }
        }
    };
    Ok((log, ending))
}

/// Log named by `log` in the replay directory; names may not leave it.
fn replay_path(opts: &ServeOptions, name: &str) -> std::result::Result<PathBuf, String> {
    let dir = opts.log_dir.as_ref().ok_or("replay needs a log directory")?;
    let p = Path::new(name);
    let plain = p.components().count() == 1 && matches!(p.components().next(), Some(std::path::Component::Normal(_)));
    if name.is_empty() || !plain {
        return Err(format!("invalid log name {name:?}"));
    }
    Ok(dir.join(p))
}

async fn replay(sink: &mut Sink, query: &str, opts: &ServeOptions) -> Result<()> {
    let mut name = None;
    let mut rate = 1.0;
    for (k, v) in url::form_urlencoded::parse(query.as_bytes()) {
        match k.as_ref() {
            "log" => name = Some(v.into_owned()),
            "rate" => match v.parse::<f64>() {
                Ok(r) if r > 0.0 && r.is_finite() => rate = r,
                _ => return fail(sink, 0.0, format!("rate must be a positive number, got {v:?}")).await,
            },
            _ => {}
        }
    }
    let Some(name) = name else { return fail(sink, 0.0, "replay needs ?log=NAME".into()).await };
    let path = match replay_path(opts, &name) {
        Ok(p) => p,
        Err(e) => return fail(sink, 0.0, e).await,
    };
    let log = match tokio::fs::read_to_string(&path).await.map_err(VpError::from).and_then(|s| SessionLog::from_jsonl(&s)) {
        Ok(l) => l,
        Err(e) => return fail(sink, 0.0, format!("cannot replay {name}: {e}")).await,
    };
    let t0 = log.records.first().map_or(0.0, |r| r.t);
    send(sink, &ServerMessage::Config(ConfigEcho::from_config(log.config(), t0))).await?;
    let start = Instant::now();
    for r in &log.records {
        sleep_until(start + Duration::from_secs_f64((r.t - t0) / rate)).await;
        send(sink, &ServerMessage::Vp { t: r.t, x: r.vp_x, v: r.vp_v, hp_x: r.hp_x }).await?;
    }
    let _ = sink.close().await;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_names_stay_inside_the_directory() {
        let opts = ServeOptions { log_dir: Some("/logs".into()), ..ServeOptions::default() };
        assert_eq!(replay_path(&opts, "a.jsonl").unwrap(), PathBuf::from("/logs/a.jsonl"));
        for bad in ["", "../x", "/etc/passwd", "a/b", ".."] {
            assert!(replay_path(&opts, bad).is_err(), "{bad}");
        }
        assert!(replay_path(&ServeOptions::default(), "a.jsonl").is_err());
    }

    #[test]
    fn live_config_uses_server_defaults() {
        let opts = ServeOptions { mode: Mode::OpcFollower, tick: Some(0.05), ..ServeOptions::default() };
        let cfg = live_config(&ClientConfig::default(), &opts).unwrap();
        assert_eq!(cfg.mode, Mode::OpcFollower);
        assert_eq!(cfg.effective_period(), 0.05);
        let custom = ClientConfig { mode: Some(Mode::OpcCustom), ..ClientConfig::default() };
        assert!(live_config(&custom, &opts).is_err());
    }
}
