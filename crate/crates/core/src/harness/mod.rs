//! Experiment harness: protocol generators, the end-to-end runners, metrics,
//! the broker latency benchmark and the console bridge.

pub mod bench;
pub mod config;
pub mod console;
pub mod generate;
pub mod logical;
pub mod metrics;
pub mod realtime;
pub mod world;

pub use config::SimConfig;
pub use logical::run_logical;
pub use metrics::{compute_metrics, MetricsReport};
pub use world::{RunError, Ward};
