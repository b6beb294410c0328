#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]
//! Spike-wave discharge detection in single-channel EEG.
//!
//! The pipeline: resample and min-max scale a recording, cut it into 20 s
//! epochs, train a residual 1D U-Net with Dice loss on augmented epochs, then
//! threshold per-sample probabilities into events and score them against
//! reference labels. Rule-based noise and sleep detectors and a synthetic
//! recording generator support evaluation without animal data.

pub mod augment;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod events;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod render;
pub mod signal_io;
pub mod states;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
