//! Recomposition of CSI amplitude from 802.11ac beamforming feedback.
//!
//! The crate covers the full path: tapped-delay-line channel simulation,
//! per-subcarrier SVD and feedback-matrix extraction, dataset encoding and
//! persistence, the encoder-decoder estimators, training with early stopping,
//! and the evaluation reports.

pub mod nn;
pub mod rng;
pub mod channel;
pub mod cmatrix;
pub mod bfm;
pub mod container;
pub mod dataset;
pub mod checkpoint;
pub mod train;
pub mod eval;
pub mod cli;
