//! Clients for the wire protocols: a stream feeder and the load bench.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::time::Duration;

use rpm_core::eval::LatencyReport;
use rpm_core::sim::library::{recovery, scripted_desaturation};
use rpm_core::sim::{derive_seed, generate, instantiate, STREAM_EPOCH_MS};
use rpm_core::wire::{encode_record, AckLine};
use rpm_core::{DataPoint, PatientProfile};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::oneshot;
use tokio::time::Instant;

use crate::hub::now_ms;
use crate::protocol::Preamble;

/// Time the bench waits after the last point for notifications to settle.
const SETTLE: Duration = Duration::from_millis(1500);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("connection lost: {0}")]
    Io(#[from] io::Error),
    #[error("server refused the connection: {0}")]
    Refused(String),
    #[error("bench needs at least one patient")]
    NoPatients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// One second of stream per second of wall clock.
    Live,
    /// As fast as the server acknowledges.
    Accelerated,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EmitSummary {
    pub sent: u64,
    pub acked: u64,
    pub rejected: u64,
    /// Rejections by error code.
    pub rejections: BTreeMap<String, u64>,
}

impl EmitSummary {
    fn merge(&mut self, o: EmitSummary) {
        self.sent += o.sent;
        self.acked += o.acked;
        self.rejected += o.rejected;
        for (k, v) in o.rejections {
            *self.rejections.entry(k).or_default() += v;
        }
    }
}

/// Shifts simulator timestamps so stream second 0 lands on `start_ms`.
pub fn rebase(points: &[DataPoint], start_ms: i64) -> Vec<DataPoint> {
    points
        .iter()
        .map(|d| DataPoint {
            timestamp_ms: d.timestamp_ms - STREAM_EPOCH_MS + start_ms,
            ..d.clone()
        })
        .collect()
}

async fn connect(addr: &str) -> Result<(BufReader<OwnedReadHalf>, BufWriter<OwnedWriteHalf>), ClientError> {
    let s = TcpStream::connect(addr).await.map_err(|source| ClientError::Connect {
        addr: addr.to_string(),
        source,
    })?;
    s.set_nodelay(true)?;
    let (r, w) = s.into_split();
    Ok((BufReader::new(r), BufWriter::new(w)))
}

async fn send_line(w: &mut BufWriter<OwnedWriteHalf>, line: &str) -> io::Result<()> {
    w.write_all(line.as_bytes()).await?;
    w.write_all(b"\n").await
}

/// Sends `streams` to the ingest listener, stream timestamps rebased onto
/// the wall clock, spread over `connections` connections.
pub async fn emit(
    addr: &str,
    token: Option<&str>,
    streams: Vec<Vec<DataPoint>>,
    pacing: Pacing,
    connections: usize,
) -> Result<EmitSummary, ClientError> {
    let connections = connections.max(1).min(streams.len().max(1));
    let start_ms = now_ms();
    let start = Instant::now();
    let mut groups: Vec<Vec<DataPoint>> = vec![Vec::new(); connections];
    for (i, s) in streams.iter().enumerate() {
        groups[i % connections].extend(rebase(s, start_ms));
    }
    let mut tasks = Vec::new();
    for mut g in groups {
        g.sort_by_key(|d| d.timestamp_ms);
        let addr = addr.to_string();
        let token = token.map(str::to_string);
        tasks.push(tokio::spawn(async move {
            emit_one(&addr, token.as_deref(), g, pacing, start_ms, start).await
        }));
    }
    let mut total = EmitSummary::default();
    for t in tasks {
        total.merge(t.await.expect("emit task panicked")?);
    }
    Ok(total)
}

async fn emit_one(
    addr: &str,
    token: Option<&str>,
    points: Vec<DataPoint>,
    pacing: Pacing,
    start_ms: i64,
    start: Instant,
) -> Result<EmitSummary, ClientError> {
    let (mut reader, mut writer) = connect(addr).await?;
    let acks = tokio::spawn(async move {
        let mut s = EmitSummary::default();
        let mut line = String::new();
        while reader.read_line(&mut line).await.unwrap_or(0) > 0 {
            match serde_json::from_str::<AckLine>(line.trim_end()) {
                Ok(AckLine::Ok { .. }) => s.acked += 1,
                Ok(AckLine::Err { err, .. }) => {
                    s.rejected += 1;
                    *s.rejections.entry(err).or_default() += 1;
                }
                Err(_) => {}
            }
            line.clear();
        }
        s
    });
    let sent = async {
        if let Some(t) = token {
            let p = Preamble {
                auth: Some(t.to_string()),
                recipient: None,
            };
            send_line(&mut writer, &p.to_line()).await?;
        }
        let mut sent = 0u64;
        for d in &points {
            if pacing == Pacing::Live {
                let due = start + Duration::from_millis((d.timestamp_ms - start_ms).max(0) as u64);
                if due > Instant::now() {
                    writer.flush().await?;
                    tokio::time::sleep_until(due).await;
                }
            }
            send_line(&mut writer, &encode_record(d)).await?;
            sent += 1;
        }
        writer.flush().await?;
        writer.shutdown().await?;
        Ok::<u64, io::Error>(sent)
    }
    .await;
    let mut summary = acks.await.expect("ack reader panicked");
    if summary.rejections.contains_key("auth_failed") {
        return Err(ClientError::Refused("auth_failed".into()));
    }
    summary.sent = sent?;
    Ok(summary)
}

/// Load bench parameters. One patient in every `alarm_every` follows a
/// scripted desaturation; the rest stay at baseline.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub ingest: String,
    pub consumer: String,
    pub console: String,
    pub auth_token: Option<String>,
    pub recipient: String,
    pub patients: usize,
    pub duration_s: u32,
    pub seed: u64,
    pub alarm_every: usize,
    pub connections: usize,
}

impl BenchConfig {
    pub fn new(ingest: String, consumer: String, console: String, patients: usize, duration_s: u32) -> Self {
        Self {
            ingest,
            consumer,
            console,
            auth_token: None,
            recipient: "oncall".into(),
            patients,
            duration_s,
            seed: 0,
            alarm_every: 100,
            connections: 8,
        }
    }
}

/// Second at which bench desaturations begin.
const BENCH_ONSET_S: u32 = 10;

/// Profiles and streams for a bench run.
pub fn bench_cohort(cfg: &BenchConfig) -> Vec<(PatientProfile, Vec<DataPoint>)> {
    let d = cfg.duration_s.max(BENCH_ONSET_S + 1);
    let base = recovery();
    let planted = scripted_desaturation(BENCH_ONSET_S, d);
    (0..cfg.patients)
        .map(|i| {
            let template = if i % cfg.alarm_every.max(1) == 0 { &planted } else { &base };
            let mut s = instantiate(template, i as u64, Some(cfg.duration_s));
            s.profile = s.profile.with_patient_id(format!("bench-{i:05}"));
            let points = generate(&s, derive_seed(cfg.seed, i as u64)).expect("bench scripts are valid");
            (s.profile, points)
        })
        .collect()
}

/// Opens a console connection and runs `commands`, returning the replies.
pub async fn console_commands(addr: &str, token: Option<&str>, commands: &[Value]) -> Result<Vec<Value>, ClientError> {
    let (mut reader, mut writer) = connect(addr).await?;
    if let Some(t) = token {
        send_line(&mut writer, &json!({"auth": t}).to_string()).await?;
    }
    for c in commands {
        send_line(&mut writer, &c.to_string()).await?;
    }
    writer.flush().await?;
    let mut replies = Vec::with_capacity(commands.len());
    let mut line = String::new();
    while replies.len() < commands.len() {
        line.clear();
        if reader.read_line(&mut line).await? == 0 {
            return Err(ClientError::Io(io::ErrorKind::UnexpectedEof.into()));
        }
        let Ok(v) = serde_json::from_str::<Value>(line.trim_end()) else { continue };
        if v.get("err").and_then(Value::as_str) == Some("auth_failed") {
            return Err(ClientError::Refused("auth_failed".into()));
        }
        // topic events interleave with replies; replies carry "cmd"
        if v.get("cmd").is_some() {
            replies.push(v);
        }
    }
    Ok(replies)
}

/// A consumer that acknowledges every notification as soon as it arrives.
pub struct AckingConsumer {
    stop: oneshot::Sender<()>,
    task: tokio::task::JoinHandle<Result<Vec<Value>, ClientError>>,
}

impl AckingConsumer {
    pub async fn connect(addr: &str, token: Option<&str>, recipient: &str) -> Result<Self, ClientError> {
        let (mut reader, mut writer) = connect(addr).await?;
        let p = Preamble {
            auth: token.map(str::to_string),
            recipient: Some(recipient.to_string()),
        };
        send_line(&mut writer, &p.to_line()).await?;
        writer.flush().await?;
        let mut line = String::new();
        reader.read_line(&mut line).await?;
        let ready: Value = serde_json::from_str(line.trim_end()).unwrap_or(Value::Null);
        if ready.get("ok") != Some(&Value::Bool(true)) {
            let code = ready.get("err").and_then(Value::as_str).unwrap_or("no reply");
            return Err(ClientError::Refused(code.to_string()));
        }
        let (stop, mut stopped) = oneshot::channel();
        let task = tokio::spawn(async move {
            let mut received = Vec::new();
            let mut line = String::new();
            loop {
                line.clear();
                tokio::select! {
                    r = reader.read_line(&mut line) => {
                        if r? == 0 {
                            break;
                        }
                        let Ok(v) = serde_json::from_str::<Value>(line.trim_end()) else { continue };
                        if let Some(nid) = v.get("nid").and_then(Value::as_str) {
                            send_line(&mut writer, &json!({"nid": nid, "ack": true}).to_string()).await?;
                            if reader.buffer().is_empty() {
                                writer.flush().await?;
                            }
                            received.push(v);
                        }
                    }
                    _ = &mut stopped => break,
                }
            }
            writer.flush().await?;
            Ok(received)
        });
        Ok(Self { stop, task })
    }

    /// Stops and returns every consumer line received.
    pub async fn finish(self) -> Result<Vec<Value>, ClientError> {
        let _ = self.stop.send(());
        self.task.await.expect("consumer task panicked")
    }
}

/// Drives `cfg.patients` live 1 Hz streams through a running server with one
/// acking consumer, then reads the server's delivery records.
pub async fn bench(cfg: &BenchConfig) -> Result<LatencyReport, ClientError> {
    if cfg.patients == 0 {
        return Err(ClientError::NoPatients);
    }
    let token = cfg.auth_token.as_deref();
    let cohort = bench_cohort(cfg);
    let registrations: Vec<Value> = cohort
        .iter()
        .map(|(p, _)| json!({"cmd": "register", "profile": p}))
        .collect();
    for r in console_commands(&cfg.console, token, &registrations).await? {
        if r.get("ok") != Some(&Value::Bool(true)) {
            return Err(ClientError::Refused(r.to_string()));
        }
    }
    let consumer = AckingConsumer::connect(&cfg.consumer, token, &cfg.recipient).await?;

    let started = Instant::now();
    let streams = cohort.into_iter().map(|(_, s)| s).collect();
    let summary = emit(&cfg.ingest, token, streams, Pacing::Live, cfg.connections).await?;
    let elapsed = started.elapsed().as_secs_f64();

    tokio::time::sleep(SETTLE).await;
    let received = consumer.finish().await?;
    let nids: HashSet<&str> = received.iter().filter_map(|v| v.get("nid")?.as_str()).collect();
    let stats = console_commands(&cfg.console, token, &[json!({"cmd": "stats", "recipient": cfg.recipient})]).await?;
    let latency_ms = stats[0]["deliveries"]
        .as_array()
        .map(|ds| {
            ds.iter()
                .filter(|d| d["nid"].as_str().is_some_and(|n| nids.contains(n)))
                .filter_map(|d| d["latency_ms"].as_i64())
                .collect()
        })
        .unwrap_or_default();

    Ok(LatencyReport {
        patients: cfg.patients,
        duration_s: cfg.duration_s,
        latency_ms,
        submitted: summary.sent,
        acked: summary.acked,
        rejected: summary.rejected,
        stale_rejections: summary.rejections.get("stale_timestamp").copied().unwrap_or(0),
        throughput_pps: if elapsed > 0.0 { summary.acked as f64 / elapsed } else { 0.0 },
        ..LatencyReport::default()
    }
    .finish())
}
