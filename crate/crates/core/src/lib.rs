//! Orchestration of on-demand human-machine cognitive systems.
//!
//! Systems are assembled from a pool of interchangeable sensing, processing
//! and actuation components. A blueprint (or a goal translated into one) is
//! procured slot by slot through reverse auctions and negotiation, bound into
//! a monitored pipeline, and kept alive by hot-swapping failing or
//! uneconomical components. Everything runs on a logical clock and records an
//! append-only event log that can be replayed.

pub mod blueprint;
pub mod component;
pub mod config;
pub mod eventlog;
pub mod gateway;
pub mod goals;
pub mod monitor;
pub mod orchestrator;
pub mod procurement;
pub mod registry;
pub mod runtime;
pub mod scenario;
