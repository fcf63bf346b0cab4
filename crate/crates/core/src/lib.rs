//! Dual-path quality assessment for AI-generated educational videos.
//!
//! The crate covers the full offline pipeline on precomputed features: a small
//! reverse-mode tensor library, structured 2D mixture-of-experts routing, the
//! network itself, PLCC multi-task training, subjective-score consolidation,
//! evaluation metrics and the on-disk formats.

pub mod datastore;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod moe;
pub mod numerics;
pub mod subjective;
pub mod training;

pub use error::{Error, Result};
