//! Identity-scoped JSON-RPC tool gateway, synthetic tool server, and
//! benchmark harness.
//!
//! The library is organized around three mechanisms:
//! - a broker pipeline that authenticates callers, enforces per-tool ACLs,
//!   injects verified identity context into forwarded calls, and strips
//!   cross-tenant data from responses;
//! - adaptive per-tool timeout budgeting that splits a turn budget across a
//!   sequential tool chain in proportion to trailing p99 latency, with
//!   surplus redistribution when tools finish early;
//! - a structured error schema plus a deterministic recovery engine that
//!   turns machine-readable tool failures into retry / alternate-resource /
//!   escalation decisions.
//!
//! `synth` hosts a configurable fake tool server (latency and failure
//! injection, async task lifecycle, idempotency replay, poll rate limits)
//! and `harness` drives the benchmark experiments over it.

pub mod atba;
pub mod broker;
pub mod clock;
pub mod config;
pub mod harness;
pub mod identity;
pub mod protocol;
pub mod seed;
pub mod serf;
pub mod stats;
pub mod synth;
