//! Structured scene understanding toolkit: 4-clues records (boxes, classes,
//! object captions, context caption), a two-stage re-thinking inference
//! protocol over pluggable vision-language backends, detection and caption
//! metrics, and verified loss kernels.
//!
//! Module map:
//! - [`clue`] / [`repair`] — the record type, validation, canonical
//!   serialization, strict and lenient parsing
//! - [`dataset`] — ground-truth and prediction files (JSON Lines)
//! - [`detect`] / [`caption`] — detection and caption metric suites
//! - [`losses`] — loss kernels with analytic gradients and the
//!   central-difference checker
//! - [`prompts`] — triplet composition, render plans, inference prompts
//! - [`backend`] — the model-endpoint trait, HTTP client, deterministic
//!   mock, and scripted test double
//! - [`engine`] — single-pass and two-stage inference with transcripts
//! - [`harness`] — variant-grid evaluation runs and report rendering

pub mod backend;
pub mod caption;
pub mod clue;
pub mod dataset;
pub mod detect;
pub mod engine;
pub mod harness;
pub mod losses;
pub mod prompts;
pub mod repair;

pub use clue::{
    class_eq, class_key, parse_clueset_strict, serialize_clueset, validate_clueset, BoundingBox,
    ClueSet, ParseDiagnostics, ParseError, RepairKind, SceneRecord, Violation,
};
pub use repair::parse_clueset_lenient;
