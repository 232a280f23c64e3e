//! Simulation and control of reliable, resilient multi-commodity
//! service-chain delivery over a cloud network with per-packet lifetimes.

pub mod capacity;
pub mod config;
pub mod error;
pub mod experiment;
pub mod flow_matching;
pub mod lp;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod policy;
pub mod queueing;
pub mod scenario;
pub mod traffic;
pub mod virtual_ctl;

pub use error::{Error, Result};
