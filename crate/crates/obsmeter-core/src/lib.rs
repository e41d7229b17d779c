//! Core building blocks of the obsmeter measurement framework.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: the measurement-point model, the in-stream filter engine,
//! the text wire protocol, the deterministic channel simulator and the
//! statistics kernels. IO, sockets, threads and file formats live in the
//! companion `obsmeter` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod client;
pub mod filter;
pub mod measure;
pub mod sim;
pub mod stats;
pub mod time;
pub mod wire;

pub use measure::{ClientIdentity, MetricType, MetricValue, MpSchema, Sample};
pub use time::Micros;
