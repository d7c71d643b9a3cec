//! Guarded web workflows: exploration, synthesis, guarded execution and judging.

pub mod digest;
pub mod env;
pub mod explorer;
pub mod gateway;
pub mod judge;
pub mod trace;
pub mod agent;
pub mod bench;
pub mod runtime;
pub mod session;
pub mod store;
pub mod synth;
pub mod workflow;
