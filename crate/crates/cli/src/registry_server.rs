//! HTTP front of the orchestrator: pool maintenance, system submission and
//! status. The logical clock is milliseconds since the service started.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clic_core::blueprint::parse_blueprint;
use clic_core::component::{ComponentDescriptor, Interval, Millis, SlotQuery};
use clic_core::config::Config;
use clic_core::eventlog::EventLog;
use clic_core::goals::Goal;
use clic_core::orchestrator::{Humans, Orchestrator, SubmitError};
use clic_core::procurement::{NoFaults, ProcureError};
use clic_core::registry::RegistryError;
use clic_core::runtime::Phase;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;

pub struct Service {
    pub orch: Orchestrator,
    started: Instant,
    /// Last heartbeat each component sent us.
    beats: BTreeMap<String, Millis>,
}

pub type Shared = Arc<Mutex<Service>>;

impl Service {
    pub fn new(config: Config, log: EventLog) -> Self {
        Self { orch: Orchestrator::new(config, log), started: Instant::now(), beats: BTreeMap::new() }
    }

    pub fn now(&self) -> Millis {
        self.started.elapsed().as_millis() as Millis
    }

    /// One monitoring period: liveness, reviews, swaps and due starts.
    pub fn tick(&mut self) {
        let now = self.now();
        let hb = self.orch.config.monitor.heartbeat_ms;
        let alive: Vec<String> = self
            .beats
            .iter()
            .filter(|(_, &t)| now.saturating_sub(t) <= hb + hb / 2)
            .map(|(id, _)| id.clone())
            .collect();
        self.orch.heartbeat_round(now, &|c| alive.iter().any(|a| a == c));
        let _ = self.orch.start_due(now);
        let flowing: Vec<String> = self
            .orch
            .runtime
            .pipelines()
            .filter(|p| matches!(p.phase, Phase::Flowing | Phase::Paused))
            .map(|p| p.system_id.clone())
            .collect();
        for system in flowing {
            self.orch.review(&system, now, Humans::Scripted);
        }
        self.orch.poll_swaps(now);
        let _ = self.orch.log.finish();
    }
}

fn error(status: StatusCode, body: Value) -> Response {
    (status, Json(body)).into_response()
}

fn registry_error(e: RegistryError) -> Response {
    let status = match &e {
        RegistryError::UnknownId(_) | RegistryError::UnknownGrant(_) => StatusCode::NOT_FOUND,
        RegistryError::DuplicateId(_) | RegistryError::DuplicateGrant(_) => StatusCode::CONFLICT,
        _ => StatusCode::BAD_REQUEST,
    };
    let body = match &e {
        RegistryError::InvalidDescriptor(r) => json!({ "error": e.to_string(), "violations": r }),
        _ => json!({ "error": e.to_string() }),
    };
    error(status, body)
}

async fn register(State(s): State<Shared>, body: String) -> Response {
    let d: ComponentDescriptor = match serde_json::from_str(&body) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })),
    };
    let mut s = s.lock().expect("service lock");
    let now = s.now();
    match s.orch.register(d, now) {
        Ok(entry) => (StatusCode::CREATED, Json(json!(entry))).into_response(),
        Err(e) => registry_error(e),
    }
}

async fn deregister(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    let mut s = s.lock().expect("service lock");
    let now = s.now();
    let o = &mut s.orch;
    match o.registry.deregister(&id, now, &mut o.log) {
        Ok(notices) => Json(json!({ "notices": notices })).into_response(),
        Err(e) => registry_error(e),
    }
}

async fn list(State(s): State<Shared>, Query(q): Query<HashMap<String, String>>) -> Response {
    let s = s.lock().expect("service lock");
    match q.get("query") {
        None => Json(json!(s.orch.registry.entries().collect::<Vec<_>>())).into_response(),
        Some(text) => match serde_json::from_str::<SlotQuery>(text) {
            Ok(query) => Json(json!(s.orch.registry.query(&query))).into_response(),
            Err(e) => error(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })),
        },
    }
}

#[derive(Deserialize)]
struct AvailabilityBody {
    #[serde(default)]
    window: Option<Interval>,
    capacity: f64,
}

async fn availability(State(s): State<Shared>, Path(id): Path<String>, body: String) -> Response {
    let b: AvailabilityBody = match serde_json::from_str(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })),
    };
    let mut s = s.lock().expect("service lock");
    let now = s.now();
    let o = &mut s.orch;
    match o.registry.update_availability(&id, b.window, b.capacity, now, &mut o.log) {
        Ok((entry, warnings)) => Json(json!({ "entry": entry, "warnings": warnings })).into_response(),
        Err(e) => registry_error(e),
    }
}

async fn heartbeat(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    let mut s = s.lock().expect("service lock");
    let now = s.now();
    if s.orch.registry.get(&id).is_none() {
        return error(StatusCode::NOT_FOUND, json!({ "error": format!("unknown component {id}") }));
    }
    s.beats.insert(id.clone(), now);
    let _ = s.orch.registry.heartbeat(&id, now);
    StatusCode::NO_CONTENT.into_response()
}

async fn submit(State(s): State<Shared>, body: String) -> Response {
    let b = match parse_blueprint(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })),
    };
    let mut s = s.lock().expect("service lock");
    let now = s.now();
    let r = s.orch.submit(b, Humans::Scripted, &mut NoFaults, now);
    let _ = s.orch.log.finish();
    match r {
        Ok(set) => (StatusCode::CREATED, Json(json!(set))).into_response(),
        Err(SubmitError::Procure(ProcureError::Insufficient(esc))) => {
            error(StatusCode::CONFLICT, json!({ "error": "insufficient pool", "escalation": esc }))
        }
        Err(SubmitError::Procure(ProcureError::InvalidBlueprint(r))) => {
            error(StatusCode::BAD_REQUEST, json!({ "error": "invalid blueprint", "violations": r }))
        }
        Err(e) => error(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })),
    }
}

async fn status(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    let s = s.lock().expect("service lock");
    match s.orch.status(&id) {
        Some(st) => Json(json!(st)).into_response(),
        None => error(StatusCode::NOT_FOUND, json!({ "error": format!("unknown system {id}") })),
    }
}

async fn stop(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    let mut s = s.lock().expect("service lock");
    let now = s.now();
    match s.orch.stop(&id, now) {
        Ok(flushed) => Json(json!({ "stopped": id, "flushed": flushed.len() })).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, json!({ "error": e.to_string() })),
    }
}

async fn add_goal(State(s): State<Shared>, body: String) -> Response {
    let g: Goal = match serde_json::from_str(&body) {
        Ok(g) => g,
        Err(e) => return error(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })),
    };
    let mut s = s.lock().expect("service lock");
    let now = s.now();
    match s.orch.add_goal(g, now) {
        Ok(()) => (StatusCode::CREATED, Json(json!(s.orch.goals.composite()))).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })),
    }
}

async fn remove_goal(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    let mut s = s.lock().expect("service lock");
    let now = s.now();
    match s.orch.remove_goal(&id, now) {
        Ok(()) => Json(json!(s.orch.goals.composite())).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, json!({ "error": e.to_string() })),
    }
}

async fn log(State(s): State<Shared>) -> Response {
    let s = s.lock().expect("service lock");
    ([("content-type", "application/x-ndjson")], s.orch.log.to_jsonl()).into_response()
}

async fn state_hash(State(s): State<Shared>) -> Response {
    let s = s.lock().expect("service lock");
    Json(json!({ "state_hash": s.orch.state_hash(), "records": s.orch.log.len() })).into_response()
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/components", post(register).get(list))
        .route("/components/{id}", axum::routing::delete(deregister))
        .route("/components/{id}/availability", axum::routing::patch(availability))
        .route("/components/{id}/heartbeat", post(heartbeat))
        .route("/systems", post(submit))
        .route("/systems/{id}", get(status).delete(stop))
        .route("/goals", post(add_goal))
        .route("/goals/{id}", axum::routing::delete(remove_goal))
        .route("/log", get(log))
        .route("/state", get(state_hash))
        .with_state(state)
}

/// Serves until the listener fails, ticking the monitor every heartbeat period.
pub async fn serve(listener: TcpListener, state: Shared) -> std::io::Result<()> {
    let period = state.lock().expect("service lock").orch.config.monitor.heartbeat_ms.max(1);
    let ticker = state.clone();
    tokio::spawn(async move {
        let mut every = tokio::time::interval(Duration::from_millis(period));
        loop {
            every.tick().await;
            ticker.lock().expect("service lock").tick();
        }
    });
    axum::serve(listener, router(state)).await
}
