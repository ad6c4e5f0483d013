//! Network transports for the human gateway. TCP carries newline-delimited
//! JSON; the WebSocket at `/ws` carries the same messages, one per text frame.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use clic_core::component::Millis;
use clic_core::eventlog::EventLog;
use clic_core::gateway::protocol::{decode, SlaSummary, WireMessage};
use clic_core::gateway::{Gateway, TaskOffer, TaskState};
use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

const DRAIN_EVERY: Duration = Duration::from_millis(100);

pub struct GatewayService {
    pub gateway: Gateway,
    pub log: EventLog,
    started: Instant,
    connected: BTreeSet<String>,
    /// Demo task cadence; 0 disables it.
    pub offer_every_ms: Millis,
    last_offer: Millis,
}

pub type SharedGateway = Arc<Mutex<GatewayService>>;

impl GatewayService {
    pub fn new(grain: f64, log: EventLog, offer_every_ms: Millis) -> Self {
        Self {
            gateway: Gateway::new(grain),
            log,
            started: Instant::now(),
            connected: BTreeSet::new(),
            offer_every_ms,
            last_offer: 0,
        }
    }

    pub fn now(&self) -> Millis {
        self.started.elapsed().as_millis() as Millis
    }

    /// Handles one inbound line for a connection; `session` becomes the
    /// worker id once a hello arrives. Returns the lines to send back.
    pub fn handle_line(&mut self, session: &mut Option<String>, line: &str) -> Vec<String> {
        let now = self.now();
        if line.trim().is_empty() {
            return Vec::new();
        }
        if session.is_none() {
            match decode(line) {
                Ok(WireMessage::Hello { worker_id, .. }) if !worker_id.is_empty() => *session = Some(worker_id),
                Ok(other) => return vec![WireMessage::error("hello-required", other.type_name()).to_line()],
                Err(reply) => return vec![reply.to_line()],
            }
        }
        let worker = session.clone().expect("set above");
        let mut out = Vec::new();
        if let Some(reply) = self.gateway.handle_line(&worker, line, now, &mut self.log) {
            out.push(reply.to_line());
        }
        if self.gateway.is_connected(&worker) {
            self.connected.insert(worker.clone());
        }
        out.extend(self.drain(&worker));
        let _ = self.log.finish();
        out
    }

    pub fn drain(&mut self, worker: &str) -> Vec<String> {
        self.gateway.take_outbox(worker).iter().map(WireMessage::to_line).collect()
    }

    pub fn close(&mut self, worker: &str) {
        let now = self.now();
        self.gateway.disconnect(worker, now, &mut self.log);
        self.connected.remove(worker);
        let _ = self.log.finish();
    }

    /// Deadline enforcement plus the demo task feed.
    pub fn tick(&mut self) {
        let now = self.now();
        self.gateway.tick(now, &mut self.log);
        self.gateway.take_effects();
        if self.offer_every_ms > 0 && now >= self.last_offer + self.offer_every_ms {
            self.last_offer = now;
            let idle: Vec<String> = self
                .connected
                .iter()
                .filter(|w| {
                    !self
                        .gateway
                        .tasks()
                        .any(|t| &t.worker_id == *w && matches!(t.state, TaskState::Offered | TaskState::Accepted))
                })
                .cloned()
                .collect();
            for w in idle {
                let offer = TaskOffer {
                    task_id: self.gateway.next_task_id(),
                    description: "Report the occupancy of segment r3c4>r4c4 (0 empty, 1 jammed)".into(),
                    input: json!({ "subject": "r3c4>r4c4" }),
                    offered_price: 2.0,
                    deadline: now + 30_000,
                    sla: SlaSummary { max_latency: 30_000, min_quality: 0.5 },
                    countdown_start: now,
                };
                let _ = self.gateway.offer_task(&w, offer, &mut self.log);
            }
        }
        let _ = self.log.finish();
    }
}

async fn tcp_session(stream: TcpStream, svc: SharedGateway) {
    let (r, mut w) = stream.into_split();
    let mut lines = BufReader::new(r).lines();
    let mut session: Option<String> = None;
    let mut every = tokio::time::interval(DRAIN_EVERY);
    loop {
        let out = tokio::select! {
            line = lines.next_line() => match line {
                Ok(Some(l)) => svc.lock().expect("gateway lock").handle_line(&mut session, &l),
                _ => break,
            },
            _ = every.tick() => match &session {
                Some(id) => svc.lock().expect("gateway lock").drain(id),
                None => Vec::new(),
            },
        };
        for line in out {
            if w.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    }
    if let Some(id) = session {
        svc.lock().expect("gateway lock").close(&id);
    }
}

async fn ws_session(mut socket: WebSocket, svc: SharedGateway) {
    let mut session: Option<String> = None;
    let mut every = tokio::time::interval(DRAIN_EVERY);
    loop {
        let out = tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(t))) => svc.lock().expect("gateway lock").handle_line(&mut session, t.as_str()),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => Vec::new(),
            },
            _ = every.tick() => match &session {
                Some(id) => svc.lock().expect("gateway lock").drain(id),
                None => Vec::new(),
            },
        };
        for line in out {
            if socket.send(Message::Text(line.trim_end().to_string().into())).await.is_err() {
                break;
            }
        }
    }
    if let Some(id) = session {
        svc.lock().expect("gateway lock").close(&id);
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(svc): State<SharedGateway>) -> Response {
    ws.on_upgrade(move |socket| ws_session(socket, svc))
}

pub fn ws_router(svc: SharedGateway) -> Router {
    Router::new().route("/ws", get(ws_upgrade)).with_state(svc)
}

/// Runs both transports and the gateway clock until one listener fails.
pub async fn serve(tcp: TcpListener, ws: TcpListener, svc: SharedGateway) -> std::io::Result<()> {
    let ticker = svc.clone();
    tokio::spawn(async move {
        let mut every = tokio::time::interval(Duration::from_millis(200));
        loop {
            every.tick().await;
            ticker.lock().expect("gateway lock").tick();
        }
    });
    let ws_svc = svc.clone();
    let ws_task = tokio::spawn(async move { axum::serve(ws, ws_router(ws_svc)).await });
    let tcp_task = tokio::spawn(async move {
        loop {
            let (stream, _) = tcp.accept().await?;
            tokio::spawn(tcp_session(stream, svc.clone()));
        }
        #[allow(unreachable_code)]
        Ok::<(), std::io::Error>(())
    });
    tokio::select! {
        r = ws_task => r.map_err(std::io::Error::other)?,
        r = tcp_task => r.map_err(std::io::Error::other)?,
    }
}
