//! Weakly-supervised sound event detection.
//!
//! A frame-level scoring network is trained from clip-level tags with
//! multiple-instance objectives (optionally penalising cosine similarity
//! between the score curves of co-occurring positive classes), then score
//! curves are turned into timed events and evaluated with collar-based
//! event F-scores.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod postprocess;
pub mod rng;
pub mod synthdata;
pub mod threshold_opt;
pub mod types;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use types::{Annotations, Event, EventList, FrameFeatures, ScoreMatrix, WeakLabels};
