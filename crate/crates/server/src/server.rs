//! Listeners and connection tasks.

use std::collections::HashMap;
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use rpm_core::config::{Config, ConfigError};
use rpm_core::notify::{ConsumerAck, Notification};
use rpm_core::registry::OverrideError;
use serde_json::json;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, watch};
use tokio::task::JoinSet;

use crate::hub::{now_ms, Hub, IngestConn};
use crate::protocol::{reply_err, reply_ok, trim_line, Command, Preamble};

/// How long a consumer preamble may take before the connection is dropped.
const PREAMBLE_TIMEOUT: Duration = Duration::from_secs(10);
/// How long a draining consumer waits for outstanding acks at shutdown.
const DRAIN_ACK_TIMEOUT: Duration = Duration::from_secs(2);
const TICK: Duration = Duration::from_secs(1);
const PRUNE_EVERY_TICKS: u64 = 60;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {role} listener on {addr}: {source}")]
    Bind {
        role: &'static str,
        addr: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerAddrs {
    pub ingest: SocketAddr,
    pub consumer: SocketAddr,
    pub console: SocketAddr,
}

pub struct Server {
    hub: Arc<Hub>,
    ingest: TcpListener,
    consumer: TcpListener,
    console: TcpListener,
}

async fn bind(role: &'static str, addr: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind {
        role,
        addr: addr.to_string(),
        source,
    })
}

impl Server {
    pub async fn bind(config: Config) -> Result<Self, ServerError> {
        let ingest = bind("ingest", &config.listen_ingest).await?;
        let consumer = bind("consumer", &config.listen_consumer).await?;
        let console = bind("console", &config.listen_console).await?;
        Ok(Self {
            hub: Arc::new(Hub::new(config)?),
            ingest,
            consumer,
            console,
        })
    }

    pub fn addrs(&self) -> ServerAddrs {
        let addr = |l: &TcpListener| l.local_addr().expect("bound listener has an address");
        ServerAddrs {
            ingest: addr(&self.ingest),
            consumer: addr(&self.consumer),
            console: addr(&self.console),
        }
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Serves until `shutdown` resolves. Ingest stops first so every point
    /// already read is evaluated, then consumers drain their queues.
    pub async fn run(self, shutdown: impl Future<Output = ()>) {
        let (stop_tx, stop_rx) = watch::channel(false);
        let (drain_tx, drain_rx) = watch::channel(false);
        let hub = self.hub;

        let h = hub.clone();
        let ingest = tokio::spawn(accept_loop(self.ingest, stop_rx.clone(), move |s, stop| {
            serve_ingest(h.clone(), s, stop)
        }));
        let h = hub.clone();
        let console = tokio::spawn(accept_loop(self.console, stop_rx.clone(), move |s, stop| {
            serve_console(h.clone(), s, stop)
        }));
        let h = hub.clone();
        let consumer = tokio::spawn(accept_loop(self.consumer, drain_rx, move |s, drain| {
            serve_consumer(h.clone(), s, drain)
        }));
        let ticker = tokio::spawn(tick_loop(hub.clone(), stop_rx));

        shutdown.await;
        let _ = stop_tx.send(true);
        let _ = ingest.await;
        let _ = ticker.await;
        let _ = console.await;
        let _ = drain_tx.send(true);
        let _ = consumer.await;
    }
}

async fn stopped(stop: &mut watch::Receiver<bool>) {
    // a dropped sender also means stop
    let _ = stop.wait_for(|s| *s).await;
}

async fn accept_loop<F, Fut>(listener: TcpListener, mut stop: watch::Receiver<bool>, serve: F)
where
    F: Fn(TcpStream, watch::Receiver<bool>) -> Fut,
    Fut: Future<Output = ()> + Send + 'static,
{
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            r = listener.accept() => match r {
                Ok((s, _)) => {
                    let _ = s.set_nodelay(true);
                    conns.spawn(serve(s, stop.clone()));
                }
                Err(e) => {
                    tracing::warn!(error = %e, "accept failed");
                    tokio::time::sleep(Duration::from_millis(10)).await;
                }
            },
            _ = stopped(&mut stop) => break,
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    drop(listener);
    while conns.join_next().await.is_some() {}
}

async fn tick_loop(hub: Arc<Hub>, mut stop: watch::Receiver<bool>) {
    let mut interval = tokio::time::interval(TICK);
    let mut n = 0u64;
    loop {
        tokio::select! {
            _ = interval.tick() => {
                let now = now_ms();
                hub.tick(now);
                n += 1;
                if n.is_multiple_of(PRUNE_EVERY_TICKS) {
                    hub.prune();
                }
            }
            _ = stopped(&mut stop) => break,
        }
    }
}

async fn write_line(w: &mut BufWriter<OwnedWriteHalf>, line: &str) -> io::Result<()> {
    w.write_all(line.as_bytes()).await?;
    w.write_all(b"\n").await
}

fn auth_failed() -> String {
    json!({"ok": false, "err": "auth_failed"}).to_string()
}

async fn serve_ingest(hub: Arc<Hub>, stream: TcpStream, mut stop: watch::Receiver<bool>) {
    let (r, w) = stream.into_split();
    let mut reader = BufReader::new(r);
    let mut writer = BufWriter::new(w);
    let mut conn = IngestConn::new(hub.clone());
    let mut buf = Vec::new();
    let mut first = true;
    loop {
        buf.clear();
        let n = tokio::select! {
            r = reader.read_until(b'\n', &mut buf) => match r {
                Ok(n) => n,
                Err(_) => break,
            },
            _ = stopped(&mut stop) => break,
        };
        if n == 0 {
            break;
        }
        if trim_line(&buf).is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            let preamble = Preamble::parse(&buf);
            if !hub.auth_ok(preamble.as_ref().and_then(|p| p.auth.as_deref())) {
                let _ = write_line(&mut writer, &auth_failed()).await;
                break;
            }
            if preamble.is_some() {
                continue;
            }
        }
        let ack = conn.submit(trim_line(&buf));
        if write_line(&mut writer, &ack.to_line()).await.is_err() {
            break;
        }
        if reader.buffer().is_empty() && writer.flush().await.is_err() {
            break;
        }
    }
    let _ = writer.flush().await;
}

/// Runs one console or consumer command and returns the reply line.
pub fn execute(hub: &Hub, cmd: Command, own_recipient: Option<&str>) -> String {
    let name = cmd.name();
    match cmd {
        Command::SetOverride { pid, field, value } => match hub.set_override(&pid, &field, value) {
            Ok(policy) => reply_ok(name, json!({"pid": pid, "policy": policy})),
            Err(e @ OverrideError::UnknownPatient(_)) => reply_err(name, "unknown_patient", e),
            Err(e @ OverrideError::Policy(_)) => reply_err(name, "invalid_override", e),
        },
        Command::Ack { alarm_id, recipient } => {
            let Some(recipient) = recipient.as_deref().or(own_recipient) else {
                return reply_err(name, "missing_recipient", "ack needs a recipient");
            };
            match hub.acknowledge(&alarm_id, recipient) {
                Ok(alarm) => reply_ok(name, json!({"alarm_id": alarm_id, "state": alarm.state, "by": recipient})),
                Err(e) => reply_err(name, e.code(), e),
            }
        }
        Command::Justify { alarm_id } => match hub.justify(&alarm_id) {
            Ok(bundle) => reply_ok(name, json!({"bundle": bundle})),
            Err(e) => reply_err(name, e.code(), e),
        },
        Command::Snapshot {} => reply_ok(name, json!({"patients": hub.snapshot()})),
        Command::Register { profile } => {
            let pid = profile.patient_id.clone();
            match hub.register(profile) {
                Ok(policy) => reply_ok(name, json!({"pid": pid, "policy": policy})),
                Err(e) => reply_err(name, "invalid_profile", e),
            }
        }
        Command::Stats { recipient } => reply_ok(
            name,
            json!({
                "ingest": hub.ingest_stats(),
                "deliveries": hub.router().deliveries(recipient.as_deref()),
            }),
        ),
    }
}

fn command_line(hub: &Hub, line: &[u8], own_recipient: Option<&str>) -> Option<String> {
    let line = trim_line(line);
    if line.is_empty() || Preamble::parse(line).is_some() {
        return None;
    }
    Some(match serde_json::from_slice::<Command>(line) {
        Ok(cmd) => execute(hub, cmd, own_recipient),
        Err(e) => reply_err("unknown", "bad_command", e),
    })
}

async fn serve_console(hub: Arc<Hub>, stream: TcpStream, mut stop: watch::Receiver<bool>) {
    let mut topic = hub.subscribe_topic();
    let (r, w) = stream.into_split();
    let mut reader = BufReader::new(r);
    let mut writer = BufWriter::new(w);
    let mut buf = Vec::new();
    if hub.config().auth_token.is_some() {
        let ok = matches!(
            tokio::time::timeout(PREAMBLE_TIMEOUT, reader.read_until(b'\n', &mut buf)).await,
            Ok(Ok(n)) if n > 0 && hub.auth_ok(Preamble::parse(&buf).and_then(|p| p.auth).as_deref())
        );
        if !ok {
            let _ = write_line(&mut writer, &auth_failed()).await;
            let _ = writer.flush().await;
            return;
        }
    }
    // cleared only after a full line: a cancelled read leaves its partial
    // line in `buf` to be completed
    buf.clear();
    loop {
        let out = tokio::select! {
            ev = topic.recv() => match ev {
                Ok(line) => line.to_string(),
                Err(broadcast::error::RecvError::Lagged(missed)) => json!({"warn": "lagged", "missed": missed}).to_string(),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            r = reader.read_until(b'\n', &mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(_) => match command_line(&hub, &std::mem::take(&mut buf), None) {
                    Some(reply) => reply,
                    None => continue,
                },
            },
            _ = stopped(&mut stop) => break,
        };
        if write_line(&mut writer, &out).await.is_err() {
            break;
        }
        if topic.is_empty() && writer.flush().await.is_err() {
            break;
        }
    }
    let _ = writer.flush().await;
}

async fn serve_consumer(hub: Arc<Hub>, stream: TcpStream, mut drain: watch::Receiver<bool>) {
    let (r, w) = stream.into_split();
    let mut reader = BufReader::new(r);
    let mut writer = BufWriter::new(w);
    let mut buf = Vec::new();
    let preamble = match tokio::time::timeout(PREAMBLE_TIMEOUT, reader.read_until(b'\n', &mut buf)).await {
        Ok(Ok(n)) if n > 0 => Preamble::parse(&buf),
        _ => None,
    };
    let refuse = |code: &str| json!({"ok": false, "err": code}).to_string();
    let claim = match preamble {
        Some(p) if !hub.auth_ok(p.auth.as_deref()) => Err(auth_failed()),
        Some(Preamble { recipient: Some(r), .. }) => hub
            .router()
            .claim(&r)
            .map(|rx| (r, rx))
            .map_err(|e| refuse(e.code())),
        _ => Err(refuse("missing_recipient")),
    };
    let (recipient, mut rx) = match claim {
        Ok(c) => c,
        Err(line) => {
            let _ = write_line(&mut writer, &line).await;
            let _ = writer.flush().await;
            return;
        }
    };
    let mut pending: HashMap<String, Notification> = HashMap::new();
    let ready = json!({"ok": true, "recipient": recipient}).to_string();
    let mut alive = write_line(&mut writer, &ready).await.is_ok() && writer.flush().await.is_ok();

    let on_line = |line: &[u8], pending: &mut HashMap<String, Notification>| -> Option<String> {
        if let Ok(ack) = serde_json::from_slice::<ConsumerAck>(trim_line(line)) {
            if let Some(mut n) = pending.remove(&ack.nid).filter(|_| ack.ack) {
                n.delivered_ms = Some(now_ms());
                hub.router().record_delivery(&n);
            }
            return None;
        }
        command_line(&hub, line, Some(&recipient))
    };

    buf.clear();
    while alive {
        tokio::select! {
            Some(mut n) = rx.recv() => {
                n.dispatched_ms = Some(now_ms());
                let line = n.consumer_line().to_line();
                pending.insert(n.notification_id.clone(), n);
                alive = write_line(&mut writer, &line).await.is_ok()
                    && (!rx.is_empty() || writer.flush().await.is_ok());
            }
            r = reader.read_until(b'\n', &mut buf) => match r {
                Ok(0) | Err(_) => alive = false,
                Ok(_) => {
                    if let Some(reply) = on_line(&std::mem::take(&mut buf), &mut pending) {
                        alive = write_line(&mut writer, &reply).await.is_ok() && writer.flush().await.is_ok();
                    }
                }
            },
            _ = stopped(&mut drain) => {
                while let Ok(mut n) = rx.try_recv() {
                    n.dispatched_ms = Some(now_ms());
                    if write_line(&mut writer, &n.consumer_line().to_line()).await.is_err() {
                        break;
                    }
                    pending.insert(n.notification_id.clone(), n);
                }
                let _ = writer.flush().await;
                let deadline = tokio::time::Instant::now() + DRAIN_ACK_TIMEOUT;
                while !pending.is_empty() {
                    match tokio::time::timeout_at(deadline, reader.read_until(b'\n', &mut buf)).await {
                        Ok(Ok(n)) if n > 0 => {
                            on_line(&std::mem::take(&mut buf), &mut pending);
                        }
                        _ => break,
                    }
                }
                alive = false;
            }
        }
    }
    if !pending.is_empty() {
        tracing::warn!(%recipient, unacked = pending.len(), "consumer left with unacknowledged notifications");
    }
    hub.router().release(&recipient, rx);
}
