use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mirrorvp::metrics;
use mirrorvp::session::{compare_models, log_metrics, run_session, run_vp_vs_vp, Mode, SessionConfig, SessionLog};
use mirrorvp::signature::{default_velocity_pdf, emd};
use mirrorvp::Trace;
use mirrorvp_serve::{serve, ServeOptions};

#[derive(Parser)]
#[command(name = "mirrorvp", version, about = "Virtual player for the one-dimensional mirror game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one batch session and write its log.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Log destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Let two virtual players play each other.
    Duet {
        #[arg(long)]
        leader: PathBuf,
        #[arg(long)]
        follower: PathBuf,
        /// Directory for leader.jsonl and follower.jsonl.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run several models as followers of one leader trace.
    Compare {
        /// Leader trace (t,x[,v] CSV).
        #[arg(long)]
        leader: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [Mode::OpcFollower, Mode::Afc, Mode::Rpc, Mode::HkbFixed])]
        models: Vec<Mode>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print a JSON document instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Temporal-correspondence indexes of session logs.
    Metrics {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Velocity signatures of traces and their pairwise EMD.
    Signature {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Write each signature next to its trace as NAME.signature.json.
        #[arg(long)]
        write: bool,
    },
    /// Serve live play over WebSocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
        #[arg(long, default_value_t = Mode::Afc)]
        mode: Mode,
        /// Tick period in seconds (mode default when omitted).
        #[arg(long)]
        tick: Option<f64>,
        /// Where session logs are written and replayed from.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Seconds between handshake and first tick.
        #[arg(long)]
        warmup: Option<f64>,
        #[arg(long, default_value_t = 5.0)]
        silence_timeout: f64,
    },
}

fn name_of(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn print_reports(named: &[(String, metrics::MetricsReport)], json: bool) {
    if json {
        let docs: Vec<_> = named.iter().map(|(n, r)| metrics::report_document(n, r)).collect();
        println!("{}", serde_json::to_string_pretty(&docs).expect("reports serialize"));
    } else {
        let cols: Vec<_> = named.iter().map(|(n, r)| (n.clone(), Some(r))).collect();
        print!("{}", metrics::render_table(&cols));
    }
}

fn simulate(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = SessionConfig::read(config).with_context(|| format!("reading {}", config.display()))?;
    let log = run_session(&cfg)?;
    match out {
        Some(p) => log.write(p).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", log.to_jsonl()),
    }
    if let Some(reason) = &log.aborted {
        eprintln!("session stopped early after {} ticks: {reason}", log.records.len());
    }
    Ok(())
}

fn duet(leader: &Path, follower: &Path, out_dir: Option<&Path>) -> Result<()> {
    let (l, f) = run_vp_vs_vp(&SessionConfig::read(leader)?, &SessionConfig::read(follower)?)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        l.write(dir.join("leader.jsonl"))?;
        f.write(dir.join("follower.jsonl"))?;
    }
    let m = metrics::report(&l.vp_trace()?, &f.vp_trace()?, metrics::DEFAULT_MAX_LAG)?;
    print_reports(&[("duet".into(), m)], false);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, out.as_deref()),
        Command::Duet { leader, follower, out_dir } => duet(&leader, &follower, out_dir.as_deref()),
        Command::Compare { leader, models, seed, json } => {
            let report = compare_models(&Trace::read(&leader)?, &models, seed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report.to_document())?);
            } else {
                print!("{}", report.render_table());
            }
            Ok(())
        }
        Command::Metrics { logs, json } => {
            let mut named = Vec::new();
            for p in &logs {
                let log = SessionLog::read(p).with_context(|| format!("reading {}", p.display()))?;
                named.push((name_of(p), log_metrics(&log).with_context(|| format!("metrics of {}", p.display()))?));
            }
            print_reports(&named, json);
            Ok(())
        }
        Command::Signature { traces, write } => {
            let mut sigs = Vec::new();
            for p in &traces {
                let trace = Trace::read(p).with_context(|| format!("reading {}", p.display()))?;
                let sig = default_velocity_pdf(&trace.velocities())?;
                if write {
                    std::fs::write(p.with_extension("signature.json"), sig.to_text())?;
                }
                sigs.push((name_of(p), sig));
            }
            let width = sigs.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
            print!("{:width$}", "");
            for (n, _) in &sigs {
                print!(" {n:>width$}");
            }
            println!();
            for (n, a) in &sigs {
                print!("{n:width$}");
                for (_, b) in &sigs {
                    print!(" {:>width$.4}", emd(a, b)?);
                }
                println!();
            }
            Ok(())
        }
        Command::Serve { bind, mode, tick, log_dir, warmup, silence_timeout } => {
            if tick.is_some_and(|t| t.is_nan() || t <= 0.0) {
                bail!("--tick must be positive");
            }
            if let Some(dir) = &log_dir {
                std::fs::create_dir_all(dir)?;
            }
            let opts = ServeOptions {
                mode,
                tick,
                log_dir,
                warmup,
                silence_timeout: Duration::from_secs_f64(silence_timeout),
                ..ServeOptions::default()
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
                eprintln!("listening on ws://{}", listener.local_addr()?);
                serve(listener, opts).await?;
                Ok(())
            })
        }
    }
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
