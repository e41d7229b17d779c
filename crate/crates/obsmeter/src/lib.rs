//! Measurement collection runtime: the threaded reporter, the collection
//! server with its flat-file store, the instrumented benchmark tools and
//! the experiment harness. Pure computation (measurement model, filters,
//! wire protocol, statistics, channel simulator) lives in `obsmeter-core`.

pub mod config;
pub mod reporter;
pub mod server;

pub use obsmeter_core as core;
