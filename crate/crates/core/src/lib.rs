//! Dual-layer nested fingerprinting toolkit for black-box LLM ownership
//! verification.
//!
//! * [`trigger`] synthesizes and detects nested style + semantic triggers.
//! * [`corpus`] generates deterministic carrier corpora for offline use.
//! * [`dataset`] builds the four-subset fingerprint dataset and eval sets.
//! * [`verify`] queries a suspect chat endpoint and computes FSR / FPR.
//! * [`stealth`] scores perplexity and runs Token Forcing probes.
//! * [`merge`] extracts task vectors and runs task-arithmetic / TIES merges.
//! * [`mocksuspect`] serves a deterministic suspect model for testing.

pub mod corpus;
pub mod dataset;
pub mod merge;
pub mod mocksuspect;
pub mod rng;
pub mod stealth;
pub mod trigger;
pub mod verify;
pub mod wire;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
