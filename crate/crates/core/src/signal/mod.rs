//! Shared DSP substrate: audio clips, WAV I/O, framing, spectra, log-mel
//! features and rational resampling.

mod clip;
pub mod features;
pub mod frames;
pub mod resample;
pub mod spectrum;
pub mod wav;

pub use clip::{power, AudioClip};
pub(crate) use clip::power_of;
pub use features::{log_mel_features, MelFilterbank, LOG_FLOOR, N_MELS};
pub use frames::{hann_periodic, FrameGrid};
pub use resample::resample;
pub use spectrum::{dft_magnitude, SpectrumAnalyzer};
pub use wav::{read_wav, write_wav};

/// Canonical pipeline sample rate.
pub const SAMPLE_RATE: u32 = 16_000;
