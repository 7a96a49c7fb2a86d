//! Noise-robust intent classification lab.
//!
//! The crate covers the whole experimental pipeline:
//!
//! - [`nn`]: a small reverse-mode tape with the layers, losses and Adam
//!   optimizer both networks need
//! - [`signal`]: WAV I/O, framing, FFT, log-mel features and resampling
//! - [`degrade`]: seeded, provenance-logged noise contamination at target SNRs
//! - [`metrics`]: STOI, fwSNRseg, segSNR, LLR, WSS and composite MOS predictors
//! - [`enhance`]: the Wave-U-Net time-domain enhancer
//! - [`intent`]: the dilated temporal-convolution intent classifier
//! - [`harness`]: manifests, the synthetic toy corpus and the
//!   training-condition × evaluation-condition experiment matrix

pub mod degrade;
pub mod enhance;
pub mod error;
pub mod harness;
pub mod intent;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod signal;

pub use error::{Error, Result};
