//! Intraoperative-MRI simulation and prompt-based tumor segmentation
//! evaluation.
//!
//! The crate covers the full desk-scale loop: load NIfTI volumes, extract
//! and preprocess axial slices, degrade them to a target SNR with seeded
//! Gaussian noise, run a detect → center-prompt → segment cascade over
//! pluggable backends, and score the predictions with DICE and per-stage
//! latency into JSON/CSV reports and PNG overlays.
//!
//! # Modules
//! - [`ingest`]: NIfTI-1 subset I/O, volumes, axial slices, label masks
//! - [`preprocess`]: normalization, RGB colorization, resizing, label sets
//! - [`augment`]: SNR-targeted Gaussian degradation and SNR estimation
//! - [`geometry`]: bounding boxes, prompt points, connected components
//! - [`pipeline`]: the cascade and its classical backends
//! - [`eval`]: DICE, phantoms, overlays, batch evaluation and reports

pub mod augment;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod preprocess;

pub use error::{Error, Result};
