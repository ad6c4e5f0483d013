//! Operator entry points: the registry service, the human gateway server,
//! scenario runs and event-log replay.

pub mod args;
pub mod commands;
pub mod error;
pub mod gateway_server;
pub mod registry_server;

pub use error::CliError;
