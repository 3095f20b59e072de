//! Workflow execution with tool-state keyed intermediate caching.

pub mod bench;
pub mod digest;
pub mod engine;
pub mod miner;
pub mod model;
pub mod recommend;
pub mod store;

pub use digest::Digest;
