use std::path::PathBuf;

use clap::{ArgGroup, Parser, Subcommand};

fn key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected section.key=value, got {s:?}"))
}

#[derive(Debug, Parser)]
#[command(name = "clic", version, about = "Run, inspect and replay CLIC systems")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CLIC_CONFIG_FILE")]
    pub config: Option<PathBuf>,
    /// Configuration override such as `monitor.heartbeat_ms=500`; beats the
    /// environment and the file.
    #[arg(long = "set", global = true, value_parser = key_value)]
    pub set: Vec<(String, String)>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// The component registry and orchestrator service.
    Registry {
        #[command(subcommand)]
        cmd: RegistryCmd,
    },
    /// Register a component and keep it heartbeating.
    Component {
        #[command(subcommand)]
        cmd: ComponentCmd,
    },
    /// Submit a blueprint, or a teleological spec with a plan library.
    #[command(group(ArgGroup::new("spec").required(true).args(["blueprint", "teleological"])))]
    Submit {
        #[arg(long)]
        blueprint: Option<PathBuf>,
        #[arg(long)]
        teleological: Option<PathBuf>,
        /// Plan library for teleological specs; the built-in one otherwise.
        #[arg(long, requires = "teleological")]
        plans: Option<PathBuf>,
        #[arg(long, env = "CLIC_REGISTRY_ADDR", default_value = "127.0.0.1:7400")]
        registry: String,
    },
    /// Show the bindings and contracts of a running system.
    Status {
        #[arg(long)]
        system: String,
        #[arg(long, env = "CLIC_REGISTRY_ADDR", default_value = "127.0.0.1:7400")]
        registry: String,
    },
    /// Scenario simulation.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Rebuild state from an event log and print its hash.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Fail with a validation error unless the hash matches.
        #[arg(long)]
        expect: Option<String>,
    },
    /// The human gateway: NDJSON over TCP and the same schema on WebSocket /ws.
    Gateway {
        #[command(subcommand)]
        cmd: GatewayCmd,
    },
}

#[derive(Debug, Subcommand)]
pub enum RegistryCmd {
    Serve {
        #[arg(long, env = "CLIC_SERVE_PORT", default_value_t = 7400)]
        port: u16,
        #[arg(long, env = "CLIC_LOG_FILE")]
        log: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ComponentCmd {
    Run {
        #[arg(long)]
        descriptor: PathBuf,
        #[arg(long, env = "CLIC_REGISTRY_ADDR", default_value = "127.0.0.1:7400")]
        registry: String,
        /// Stop after this many heartbeats.
        #[arg(long)]
        beats: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Defaults to the scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Event log destination (JSONL).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fixed signal timing, no actuation.
        #[arg(long)]
        baseline: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum GatewayCmd {
    Serve {
        #[arg(long, env = "CLIC_SERVE_PORT", default_value_t = 7500)]
        port: u16,
        /// WebSocket port; `port + 1` when omitted.
        #[arg(long, env = "CLIC_SERVE_WS_PORT")]
        ws_port: Option<u16>,
        #[arg(long, env = "CLIC_LOG_FILE")]
        log: Option<PathBuf>,
        /// Offer a demo task to idle workers this often; 0 disables.
        #[arg(long, default_value_t = 20_000)]
        offer_every_ms: u64,
    },
}
