use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clic_core::blueprint::{
    parse_blueprint, translate_teleological, validate_blueprint, PlanLibrary, TeleologicalSpec,
};
use clic_core::config::Config;
use clic_core::eventlog::{parse_log, replay, EventLog};
use clic_core::procurement::ProcureError;
use clic_core::scenario::{run_scenario, ScenarioConfig, ScenarioError};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::args::{Cli, Command, ComponentCmd, GatewayCmd, RegistryCmd, SimCmd};
use crate::error::{read, CliError};
use crate::gateway_server::{self, GatewayService};
use crate::registry_server::{self, Service};

pub fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let file = cli.config.as_deref().map(read).transpose()?;
    Config::layered(file.as_deref(), std::env::vars(), &cli.set).map_err(|e| CliError::Validation(e.to_string()))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(CliError::from)
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn log_to(path: Option<&Path>) -> Result<EventLog, CliError> {
    match path {
        None => Ok(EventLog::new()),
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Ok(EventLog::with_sink(Box::new(BufWriter::new(f)), true))
        }
    }
}

async fn bind(port: u16) -> Result<TcpListener, CliError> {
    TcpListener::bind(("127.0.0.1", port)).await.map_err(|e| CliError::Io(format!("port {port}: {e}")))
}

fn client() -> reqwest::Client {
    reqwest::Client::builder().timeout(Duration::from_secs(10)).build().expect("http client")
}

/// Maps a registry reply onto exit codes: 400 and 404 are validation
/// failures, 409 on a system submission is an insufficiency escalation.
async fn reply(r: Result<reqwest::Response, reqwest::Error>, conflict_is_insufficiency: bool) -> Result<Value, CliError> {
    let r = r.map_err(|e| CliError::Io(e.to_string()))?;
    let status = r.status();
    let body: Value = if status == reqwest::StatusCode::NO_CONTENT {
        Value::Null
    } else {
        r.json().await.map_err(|e| CliError::Io(e.to_string()))?
    };
    if status.is_success() {
        return Ok(body);
    }
    let text = body.to_string();
    Err(match status.as_u16() {
        409 if conflict_is_insufficiency => CliError::Insufficient(text),
        400 | 404 | 409 => CliError::Validation(text),
        _ => CliError::Failed(text),
    })
}

fn scenario_error(e: ScenarioError) -> CliError {
    match e {
        ScenarioError::Config(m) => CliError::Validation(m),
        ScenarioError::Procure(ProcureError::Insufficient(esc)) => {
            CliError::Insufficient(serde_json::to_string(&esc).expect("escalations serialize"))
        }
        ScenarioError::Procure(p) => CliError::Validation(p.to_string()),
        ScenarioError::Runtime(m) => CliError::Failed(m),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Registry { cmd: RegistryCmd::Serve { port, log } } => {
            let log = log_to(log.as_deref())?;
            let state = Arc::new(Mutex::new(Service::new(config, log)));
            runtime()?.block_on(async move {
                let listener = bind(port).await?;
                eprintln!("registry listening on {}", listener.local_addr()?);
                registry_server::serve(listener, state).await.map_err(CliError::from)
            })
        }
        Command::Component { cmd: ComponentCmd::Run { descriptor, registry, beats } } => {
            let text = read(&descriptor)?;
            let d: Value = serde_json::from_str(&text).map_err(|e| CliError::Validation(e.to_string()))?;
            let id = d["id"].as_str().unwrap_or_default().to_string();
            let period = Duration::from_millis(config.monitor.heartbeat_ms);
            runtime()?.block_on(async move {
                let http = client();
                let base = format!("http://{registry}");
                let entry = reply(http.post(format!("{base}/components")).body(text).send().await, false).await?;
                print(&entry);
                let mut sent = 0;
                while beats.is_none_or(|n| sent < n) {
                    reply(http.post(format!("{base}/components/{id}/heartbeat")).send().await, false).await?;
                    sent += 1;
                    tokio::time::sleep(period).await;
                }
                Ok(())
            })
        }
        Command::Submit { blueprint, teleological, plans, registry } => {
            let spec = match (blueprint, teleological) {
                (Some(path), _) => parse_blueprint(&read(&path)?).map_err(|e| CliError::Validation(e.to_string()))?,
                (None, Some(path)) => {
                    let t = TeleologicalSpec::parse(&read(&path)?).map_err(|e| CliError::Validation(e.to_string()))?;
                    let lib = match plans {
                        Some(p) => PlanLibrary::parse(&read(&p)?).map_err(|e| CliError::Validation(e.to_string()))?,
                        None => PlanLibrary::builtin(),
                    };
                    translate_teleological(&t, &lib).map_err(|e| CliError::Validation(e.to_string()))?
                }
                (None, None) => unreachable!("clap requires one of the two"),
            };
            let report = validate_blueprint(&spec);
            if !report.is_empty() {
                return Err(CliError::Validation(serde_json::to_string(&report).expect("reports serialize")));
            }
            let body = serde_json::to_string(&spec).expect("blueprints serialize");
            runtime()?.block_on(async move {
                let r = client().post(format!("http://{registry}/systems")).body(body).send().await;
                print(&reply(r, true).await?);
                Ok(())
            })
        }
        Command::Status { system, registry } => runtime()?.block_on(async move {
            let r = client().get(format!("http://{registry}/systems/{system}")).send().await;
            print(&reply(r, false).await?);
            Ok(())
        }),
        Command::Sim { cmd: SimCmd::Run { scenario, seed, out, baseline } } => {
            let mut cfg = ScenarioConfig::parse(&read(&scenario)?).map_err(scenario_error)?;
            cfg.clic = config;
            if baseline {
                cfg = cfg.baseline();
            }
            let seed = seed.unwrap_or(cfg.seed);
            let report = run_scenario(&cfg, seed).map_err(scenario_error)?;
            if let Some(path) = out {
                std::fs::write(&path, report.log_jsonl()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            }
            print(&json!({
                "scenario": cfg.name,
                "seed": seed,
                "controlled": report.controlled,
                "metrics": report.metrics,
                "records": report.log.len(),
                "state_hash": report.state_hash,
            }));
            Ok(())
        }
        Command::Replay { log, expect } => {
            let text = read(&log)?;
            let records = parse_log(&text).map_err(|e| CliError::Validation(e.to_string()))?;
            let state = replay(&records).map_err(|e| CliError::Validation(e.to_string()))?;
            let hash = state.hash();
            print(&json!({ "records": records.len(), "state_hash": hash }));
            match expect {
                Some(h) if h != hash => Err(CliError::Validation(format!("state hash {hash} differs from {h}"))),
                _ => Ok(()),
            }
        }
        Command::Gateway { cmd: GatewayCmd::Serve { port, ws_port, log, offer_every_ms } } => {
            let log = log_to(log.as_deref())?;
            let svc = Arc::new(Mutex::new(GatewayService::new(config.gateway.grain, log, offer_every_ms)));
            let ws_port = ws_port.unwrap_or(port.wrapping_add(1));
            runtime()?.block_on(async move {
                let tcp = bind(port).await?;
                let ws = bind(ws_port).await?;
                eprintln!("gateway listening on {} (ndjson) and ws://{}/ws", tcp.local_addr()?, ws.local_addr()?);
                gateway_server::serve(tcp, ws, svc).await.map_err(CliError::from)
            })
        }
    }
}
