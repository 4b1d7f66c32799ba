mod error;

use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use rpm_core::config::Config;
use rpm_core::eval::{
    log_to_string, parse_log, replay, score, Corpus, CorpusEntry, ReplayConfig, ReplayMode,
};
use rpm_core::sim::{parse_mix, run_cohort, NoiseSigmas};
use rpm_core::wire::encode_record;
use rpm_server::client::{bench, console_commands, emit, BenchConfig, Pacing};
use rpm_server::Server;
use serde_json::json;
use tracing::{info, warn};

use error::{exit, CliError};

const DEFAULT_INGEST_PORT: u16 = 7400;
const DEFAULT_CONSUMER_PORT: u16 = 7401;
const DEFAULT_CONSOLE_PORT: u16 = 7402;

#[derive(Parser)]
#[command(name = "rpm", version, about = "Real-time remote patient monitoring engine and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ingest, consumer and console listeners until interrupted.
    Serve(ServeArgs),
    /// Generate scenario streams and send them to a server or to files.
    Simulate(SimulateArgs),
    /// Replay a labeled corpus through the engine and score it.
    Replay(ReplayArgs),
    /// Measure notification latency and ingest throughput over loopback.
    Bench(BenchArgs),
    /// Score an alarm log against a labeled corpus.
    Score(ScoreArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("streams").required(true).args(["scenario", "mix"])))]
struct SimulateArgs {
    /// Library scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Cohort as `name:count,name:count`.
    #[arg(long)]
    mix: Option<String>,
    /// Instances of `--scenario`.
    #[arg(long, default_value_t = 1)]
    patients: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Truncate or extend every stream to this many seconds.
    #[arg(long)]
    duration: Option<u32>,
    /// Ingest address, `host` or `host:port`. Without it nothing is sent.
    #[arg(long)]
    target: Option<String>,
    /// Console address used to register profiles before sending. Defaults
    /// to the target host's console port when `--target` names no port.
    #[arg(long)]
    console: Option<String>,
    #[arg(long)]
    auth_token: Option<String>,
    /// Pace at one point per second instead of as fast as acknowledged.
    #[arg(long)]
    live: bool,
    #[arg(long, default_value_t = 8)]
    connections: usize,
    /// Write the streams as NDJSON ingest records.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the cohort as a labeled corpus file.
    #[arg(long)]
    corpus_out: Option<PathBuf>,
}

#[derive(Args)]
struct CorpusArgs {
    /// `library` or a corpus file.
    #[arg(long, default_value = "library")]
    corpus: String,
    /// Seed for the library corpus noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Library corpus with default noise sigmas instead of none.
    #[arg(long)]
    noisy: bool,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus, CliError> {
        if self.corpus == "library" {
            let noise = if self.noisy { NoiseSigmas::default() } else { NoiseSigmas::ZERO };
            Ok(Corpus::library(noise, self.seed))
        } else {
            Ok(Corpus::load(Path::new(&self.corpus))?)
        }
    }
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Disable integrity masking.
    #[arg(long)]
    no_mask: bool,
    /// Replay streams one after another on one thread.
    #[arg(long)]
    sequential: bool,
    /// Exit nonzero unless FP = FN = 0.
    #[arg(long)]
    assert_clean: bool,
    /// Directory for `alarms.ndjson`, `report.json` and `corpus.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    patients: usize,
    #[arg(long, default_value_t = 60)]
    duration: u32,
    /// Server host, ports from `--config`. Without it an embedded server
    /// is started on loopback.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One patient in this many carries a scripted desaturation.
    #[arg(long, default_value_t = 100)]
    alarm_every: usize,
    #[arg(long, default_value_t = 8)]
    connections: usize,
    #[arg(long, default_value = "oncall")]
    recipient: String,
    /// LatencyReport JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Alarm log: one topic event per line.
    #[arg(long)]
    log: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let result = runtime.block_on(async {
        match cli.command {
            Command::Serve(a) => serve(a).await,
            Command::Simulate(a) => simulate(a).await,
            Command::Replay(a) => run_replay(a),
            Command::Bench(a) => run_bench(a).await,
            Command::Score(a) => run_score(a),
        }
    });
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("rpm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, contents).map_err(CliError::io(path))
}

/// `host` gets `port` appended; `host:port` and `[v6]:port` pass through.
fn with_port(addr: &str, port: u16) -> (String, bool) {
    let has_port = match addr.rsplit_once(':') {
        Some((host, p)) => p.parse::<u16>().is_ok() && (!host.contains(':') || host.ends_with(']')),
        None => false,
    };
    if has_port {
        (addr.to_string(), true)
    } else {
        (format!("{addr}:{port}"), false)
    }
}

fn host_of(addr: &str) -> &str {
    addr.rsplit_once(':').map_or(addr, |(h, _)| h)
}

fn port_of(addr: &str, fallback: u16) -> u16 {
    addr.rsplit_once(':')
        .and_then(|(_, p)| p.parse().ok())
        .unwrap_or(fallback)
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

async fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = load_config(a.config.as_deref())?;
    let server = Server::bind(config).await?;
    let addrs = server.addrs();
    println!(
        "rpm ready ingest={} consumer={} console={}",
        addrs.ingest, addrs.consumer, addrs.console
    );
    std::io::stdout().flush().map_err(CliError::io("stdout"))?;
    server.run(shutdown_signal()).await;
    info!("shut down");
    Ok(())
}

async fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mix = match (&a.scenario, &a.mix) {
        (Some(name), _) => [(name.clone(), a.patients)].into_iter().collect(),
        (None, Some(spec)) => parse_mix(spec).map_err(CliError::Usage)?,
        (None, None) => unreachable!("clap requires one of --scenario and --mix"),
    };
    let cohort = run_cohort(&mix, a.duration, a.seed)?;
    let points: usize = cohort.iter().map(|m| m.points.len()).sum();

    if let Some(path) = &a.out {
        let mut ndjson = String::new();
        for m in &cohort {
            for d in &m.points {
                ndjson.push_str(&encode_record(d));
                ndjson.push('\n');
            }
        }
        write_file(path, &ndjson)?;
    }
    if let Some(path) = &a.corpus_out {
        let corpus = Corpus {
            entries: cohort
                .iter()
                .map(|m| CorpusEntry {
                    script: m.script.clone(),
                    seed: m.seed,
                    points: m.points.clone(),
                })
                .collect(),
        };
        write_file(path, &corpus.to_json())?;
    }

    let Some(target) = &a.target else {
        println!("generated {points} points for {} patients", cohort.len());
        return Ok(());
    };
    let (ingest, explicit_port) = with_port(target, DEFAULT_INGEST_PORT);
    let console = match &a.console {
        Some(c) => Some((with_port(c, DEFAULT_CONSOLE_PORT).0, true)),
        None if !explicit_port => Some((format!("{target}:{DEFAULT_CONSOLE_PORT}"), false)),
        None => None,
    };
    let token = a.auth_token.as_deref();
    if let Some((console, explicit)) = console {
        let commands: Vec<_> = cohort
            .iter()
            .map(|m| json!({"cmd": "register", "profile": m.script.profile}))
            .collect();
        match console_commands(&console, token, &commands).await {
            Ok(replies) => {
                for r in replies.iter().filter(|r| r["ok"] != true) {
                    warn!("profile registration failed: {r}");
                }
            }
            Err(e) if explicit => return Err(e.into()),
            Err(e) => warn!("profiles not registered: {e}"),
        }
    }
    let pacing = if a.live { Pacing::Live } else { Pacing::Accelerated };
    let streams = cohort.into_iter().map(|m| m.points).collect();
    let summary = emit(&ingest, token, streams, pacing, a.connections).await?;
    println!(
        "sent {} acked {} rejected {}",
        summary.sent, summary.acked, summary.rejected
    );
    for (code, n) in &summary.rejections {
        println!("  {code}: {n}");
    }
    Ok(())
}

fn run_replay(a: ReplayArgs) -> Result<(), CliError> {
    let config = load_config(a.config.as_deref())?;
    let corpus = a.corpus.load()?;
    let mut cfg = ReplayConfig::from(&config);
    if a.no_mask {
        cfg.masking = false;
    }
    let mode = if a.sequential { ReplayMode::Sequential } else { ReplayMode::Parallel };
    let (log, report) = replay(&corpus, &cfg, mode)?;
    print!("{}", report.to_table());
    if let Some(dir) = &a.out {
        write_file(&dir.join("alarms.ndjson"), &log_to_string(&log))?;
        write_file(&dir.join("report.json"), &report.to_json())?;
        write_file(&dir.join("corpus.json"), &corpus.to_json())?;
    }
    if a.assert_clean && !report.is_clean() {
        return Err(CliError::NotClean {
            false_positive: report.aggregate.false_positive,
            false_negative: report.aggregate.false_negative,
        });
    }
    Ok(())
}

fn run_score(a: ScoreArgs) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(&a.log).map_err(CliError::io(&a.log))?;
    let log = parse_log(&raw)?;
    let corpus = a.corpus.load()?;
    let report = score(&log, &corpus)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.out {
        write_file(path, &report.to_json())?;
    }
    Ok(())
}

async fn run_bench(a: BenchArgs) -> Result<(), CliError> {
    let mut config = load_config(a.config.as_deref())?;
    let token = config.auth_token.clone();
    let mut embedded = None;
    let (ingest, consumer, console) = match &a.target {
        Some(host) => {
            let host = host_of(with_port(host, 0).0.as_str()).to_string();
            (
                format!("{host}:{}", port_of(&config.listen_ingest, DEFAULT_INGEST_PORT)),
                format!("{host}:{}", port_of(&config.listen_consumer, DEFAULT_CONSUMER_PORT)),
                format!("{host}:{}", port_of(&config.listen_console, DEFAULT_CONSOLE_PORT)),
            )
        }
        None => {
            config.listen_ingest = "127.0.0.1:0".into();
            config.listen_consumer = "127.0.0.1:0".into();
            config.listen_console = "127.0.0.1:0".into();
            let server = Server::bind(config).await?;
            let addrs = server.addrs();
            let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
            let task = tokio::spawn(server.run(async {
                let _ = stopped.await;
            }));
            embedded = Some((stop, task));
            (addrs.ingest.to_string(), addrs.consumer.to_string(), addrs.console.to_string())
        }
    };
    let mut cfg = BenchConfig::new(ingest, consumer, console, a.patients, a.duration);
    cfg.auth_token = token;
    cfg.seed = a.seed;
    cfg.alarm_every = a.alarm_every;
    cfg.connections = a.connections;
    cfg.recipient = a.recipient;
    let result = bench(&cfg).await;
    if let Some((stop, task)) = embedded {
        let _ = stop.send(());
        let _ = task.await;
    }
    let report = result?;
    print!("{}", report.to_table());
    if let Some(path) = &a.out {
        write_file(path, &report.to_json())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ports_are_appended_only_when_missing() {
        assert_eq!(with_port("localhost", 7400), ("localhost:7400".into(), false));
        assert_eq!(with_port("10.0.0.1:9000", 7400), ("10.0.0.1:9000".into(), true));
        assert_eq!(with_port("[::1]:9000", 7400), ("[::1]:9000".into(), true));
        assert_eq!(host_of("[::1]:9000"), "[::1]");
        assert_eq!(port_of("127.0.0.1:7500", 1), 7500);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
