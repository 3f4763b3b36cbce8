//! Perceiver/reasoner dialogue orchestration.
//!
//! A text-only reasoner model answers multiple-choice questions about images
//! by talking to a vision-capable perceiver model. This crate holds the
//! dialogue protocol, the model clients, the data-synthesis pipeline used to
//! build perceiver training data, and the evaluation harness.

pub mod backend;
pub mod config;
pub mod eval;
pub mod orchestrator;
pub mod synthesis;
pub mod types;

pub use types::*;
