//! Time-frequency analysis frontend.
//!
//! Analysis runs at a fixed window/hop (defaults 2048/512, 75% overlap) with
//! a periodic Hann window and reflect padding, so the inverse transform
//! reconstructs the input exactly up to float rounding. Magnitudes are
//! projected onto a Mel filterbank and compressed either logarithmically or
//! with per-channel energy normalization (PCEN); Mel-domain masks are
//! projected back to the STFT grid by the normalized filterbank transpose.

mod mel;
mod pcen;
mod stft;

pub use mel::{mel_filterbank, mel_mask_to_stft, to_mel, MelFilterbank};
pub use pcen::{pcen, PcenParams};
pub use stft::{istft, stft};

use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

use crate::audio::AudioClip;

/// Elementwise floor added before the log in [`log_compress`].
pub const DEFAULT_LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid frontend config: {0}")]
    InvalidConfig(String),
    #[error("clip too short for analysis: {len} samples < window {win_len}")]
    ClipTooShort { len: usize, win_len: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mel filter {row} is empty: adjacent centers collide on the same bin (n_mels too large for this resolution)")]
    EmptyMelFilter { row: usize },
    #[error("mask entry out of [0,1] at ({row},{col}): {value}")]
    MaskOutOfRange { row: usize, col: usize, value: f64 },
    #[error("{path}: {detail}")]
    BadDump { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// STFT and Mel analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontendConfig {
    /// Analysis window length in samples; must be a power of two.
    pub win_len: usize,
    /// Hop between frame starts, at most `win_len`.
    pub hop: usize,
    /// Number of Mel bands.
    pub n_mels: usize,
    /// Lower edge of the Mel range in Hz.
    pub fmin: f64,
    /// Upper edge of the Mel range in Hz; at most Nyquist.
    pub fmax: f64,
    pub sample_rate_hz: u32,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self::for_sample_rate(44_100)
    }
}

impl FrontendConfig {
    /// Default analysis setup (2048/512, 128 Mel bands, 0..Nyquist) at the
    /// given rate.
    pub fn for_sample_rate(sample_rate_hz: u32) -> Self {
        Self {
            win_len: 2048,
            hop: 512,
            n_mels: 128,
            fmin: 0.0,
            fmax: f64::from(sample_rate_hz) / 2.0,
            sample_rate_hz,
        }
    }

    pub fn nyquist(&self) -> f64 {
        f64::from(self.sample_rate_hz) / 2.0
    }

    /// Number of STFT bins, `win_len/2 + 1`.
    pub fn n_bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    /// Number of frames produced for a clip of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.win_len == 0 || !self.win_len.is_power_of_two() {
            return Err(DspError::InvalidConfig(format!(
                "win_len {} must be a nonzero power of two",
                self.win_len
            )));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return Err(DspError::InvalidConfig(format!(
                "hop {} must be in 1..=win_len {}",
                self.hop, self.win_len
            )));
        }
        if self.n_mels == 0 {
            return Err(DspError::InvalidConfig("n_mels must be positive".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.nyquist() + 1e-9) {
            return Err(DspError::InvalidConfig(format!(
                "need 0 <= fmin < fmax <= nyquist, got fmin={} fmax={} nyquist={}",
                self.fmin,
                self.fmax,
                self.nyquist()
            )));
        }
        Ok(())
    }
}

/// Complex STFT coefficients, frames as rows (`N_x x F`).
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub config: FrontendConfig,
}

impl ComplexSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }

    /// Elementwise magnitudes `|X|`.
    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|z| z.norm())
    }
}

/// Nonnegative Mel-domain energies, frames as rows (`N_x x F'`).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.values.ncols()
    }
}

/// Elementwise natural log of `value + floor`.
pub fn log_compress(mel: &MelSpectrogram, floor: f64) -> Array2<f64> {
    debug_assert!(floor > 0.0);
    mel.values.mapv(|v| (v + floor).ln())
}

/// Feature transform fed to the mask-estimation networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    LogMel,
    Pcen,
}

/// Bundled analysis state: config, prebuilt filterbank, and feature
/// parameters. Saves rebuilding the filterbank for every clip.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub config: FrontendConfig,
    pub filterbank: MelFilterbank,
    pub pcen_params: PcenParams,
    pub log_floor: f64,
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Result<Self, DspError> {
        config.validate()?;
        Ok(Self {
            config,
            filterbank: mel_filterbank(&config)?,
            pcen_params: PcenParams::default(),
            log_floor: DEFAULT_LOG_FLOOR,
        })
    }

    /// STFT plus Mel magnitude spectrogram of a clip.
    pub fn analyze(&self, clip: &AudioClip) -> Result<(ComplexSpectrogram, MelSpectrogram), DspError> {
        let spec = stft(clip, &self.config)?;
        let mel = to_mel(&spec.magnitude(), &self.filterbank)?;
        Ok((spec, mel))
    }

    /// Mel magnitude spectrogram only.
    pub fn mel_of(&self, clip: &AudioClip) -> Result<MelSpectrogram, DspError> {
        Ok(self.analyze(clip)?.1)
    }

    /// Network input features for a Mel spectrogram under the given mode.
    pub fn features(&self, mel: &MelSpectrogram, mode: FeatureMode) -> Array2<f64> {
        match mode {
            FeatureMode::LogMel => log_compress(mel, self.log_floor),
            FeatureMode::Pcen => pcen(mel, &self.pcen_params),
        }
    }
}

/// Write a real matrix as `rows: u32 LE, cols: u32 LE, row-major f32 LE`.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<(), DspError> {
    let io_err = |source| DspError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::with_capacity(8 + m.len() * 4);
    bytes.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for &v in m.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(io_err)
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Array2<f64>, DspError> {
    let bad = |detail: &str| DspError::BadDump {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let bytes = std::fs::read(path).map_err(|source| DspError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 8 {
        return Err(bad("truncated header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "size mismatch: {} bytes for {rows}x{cols}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|_| bad("shape error"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_formula() {
        let cfg = FrontendConfig::default();
        assert_eq!(cfg.n_frames(88_200), 173);
        assert_eq!(cfg.n_bins(), 1025);
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let cfg = FrontendConfig { win_len: 1000, ..FrontendConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = FrontendConfig { hop: 4096, ..FrontendConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = FrontendConfig { fmax: 90_000.0, ..FrontendConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn log_compress_floor_and_inverse() {
        let mel = MelSpectrogram {
            values: ndarray::array![[0.0, std::f64::consts::E - 1e-5]],
        };
        let out = log_compress(&mel, 1e-5);
        assert!((out[[0, 0]] - (1e-5f64).ln()).abs() < 1e-12);
        assert!((out[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_dump_round_trip() {
        let dir = std::env::temp_dir().join("ambisep-dsp-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dump.bin");
        let m = Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64 / 7.0);
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.dim(), (3, 5));
        for (a, b) in m.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-7); // f32 storage
        }
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let dir = std::env::temp_dir().join("ambisep-dsp-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("short.bin");
        std::fs::write(&path, [0u8; 6]).unwrap();
        assert!(matches!(read_matrix(&path), Err(DspError::BadDump { .. })));
    }
}
