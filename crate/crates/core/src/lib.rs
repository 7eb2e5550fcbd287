//! Model-based testing of a TCP socket API.
//!
//! Test cases are derived at random from extended finite-state machine
//! models ([`efsm`]) that launch child models and run them interleaved
//! ([`explorer`]). The bundled models ([`models`]) drive a server main
//! loop, per-connection workers and clients against the socket API
//! ([`sut`]), either over real loopback sockets or over a deterministic
//! simulated network ([`simnet`]), and check every read against a
//! per-connection byte ledger.

pub mod cli;
pub mod conformance;
pub mod efsm;
pub mod explorer;
pub mod models;
pub mod portman;
pub mod rng;
pub mod simnet;
pub mod sut;
