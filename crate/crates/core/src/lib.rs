//! Synthetic adversarial question-answer generation.
//!
//! The crate covers the full data path: passage ingestion and n-gram
//! decontamination ([`corpus`]), answer-candidate selection including the
//! self-attention labelling head ([`answers`]), question generation
//! ([`qgen`]), confidence / roundtrip / self-training filters ([`filters`]),
//! QA and adversarial metrics ([`metrics`]), pipeline orchestration and
//! training schedules ([`orchestrator`]), and the backend for live
//! adversarial human evaluation ([`eval_service`]).
//!
//! Model backends are traits; [`backends`] ships small deterministic
//! implementations used by the CLI and the tests.

pub mod answers;
pub mod backends;
pub mod corpus;
pub mod error;
pub mod eval_service;
pub mod filters;
pub mod io;
pub mod metrics;
pub mod orchestrator;
pub mod qgen;
pub mod text;

pub use error::{Error, Result};
