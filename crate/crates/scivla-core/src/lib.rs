//! Desk-scale laboratory manipulation stack: a deterministic kinematic
//! simulator, a demonstration store with semantic retrieval, a replay policy
//! that fails out-of-distribution, and a transitional-action pipeline
//! (DSL + synthesis agent + orchestrator) that bridges the state gaps
//! between chained atomic tasks.

pub mod agent;
pub mod bench;
pub mod demo;
pub mod dsl;
pub mod geometry;
pub mod orchestrator;
pub mod policy;
pub mod sim;
