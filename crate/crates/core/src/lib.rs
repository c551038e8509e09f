//! Foreground/background ambient sound scene separation toolkit.
//!
//! Ambient scenes are modeled as a single short foreground event mixed with a
//! quasi-stationary background at a controlled SNR. This crate provides the
//! full chain needed to study that separation task on a workstation:
//!
//! - [`audio`]: mono WAV I/O and clip conditioning
//! - [`dsp`]: STFT analysis/synthesis, Mel projection, log/PCEN frontends,
//!   and Mel-to-STFT mask projection
//! - [`scene`]: procedural scene synthesis, SNR-controlled mixing, and
//!   dataset generation with seen/unseen class splits (C1-C4)
//! - [`separation`]: oracle (ideal ratio mask) and model-driven separation
//! - [`net`]: bidirectional LSTM mask estimation with an optional
//!   background-summarizing auxiliary network, trained by exact
//!   backpropagation through time
//! - [`bss`]: SDR/SIR/SAR metrics by least-squares decomposition
//!
//! All randomness is explicit: every operation that draws random numbers
//! takes a seed, and repeated runs with the same seed are bit-identical.

pub mod audio;
pub mod bss;
pub mod dsp;
pub mod net;
pub mod scene;
pub mod seed;
pub mod separation;

pub use audio::AudioClip;
pub use dsp::{ComplexSpectrogram, FrontendConfig, MelFilterbank, MelSpectrogram, PcenParams};
pub use separation::{MaskDomain, SeparationResult, TFMask};
