//! Desk-scale simulator for federated learning over mixed multimodal data.

pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod server;
pub mod wire;

pub use error::{Error, Result};
