//! Cooperative merging of connected automated vehicles at a two-approach
//! roundabout, with a microscopic simulator for mixed traffic.

pub mod coordinator;
pub mod driver_model;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod output;
pub mod scenario;
pub mod sweep;
pub mod trajectory;
pub mod vehicle;
