//! Attention-based audio-visual embedding fusion for person verification.
//!
//! The crate covers the full desk-scale experiment loop:
//!
//! * [`embed`] / [`synth`] / [`corrupt`] / [`dataset_io`] — paired face/voice
//!   embedding datasets: synthetic generation, null-embedding corruption and
//!   exact-round-trip file I/O.
//! * [`fusion`] / [`checkpoint`] — Systems A (concat + FC stack),
//!   B (project + sum) and C (attention-weighted sum), with checkpoints.
//! * [`training`] — contrastive training with exact analytic gradients and a
//!   finite-difference oracle.
//! * [`trials`] / [`metrics`] / [`calib`] / [`harness`] — verification trials,
//!   cosine scoring, EER / minDCF, logistic score fusion and the
//!   corrupted/missing-modality condition matrix.
//! * [`attnstats`] — attention-weight statistics against facial attributes and
//!   head-orientation bins.

pub mod attnstats;
pub mod calib;
pub mod checkpoint;
pub mod corrupt;
pub mod dataset_io;
pub mod embed;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod report;
pub mod synth;
pub mod training;
pub mod trials;

pub use error::{Error, Result};
