//! Mono audio clips and WAV file I/O.
//!
//! Clips hold dimensionless sample amplitudes (nominally in `[-1, 1]`) at a
//! fixed sample rate. Supported files are RIFF/WAVE, single channel, 16-bit
//! integer PCM or 32-bit IEEE float. There is no resampling anywhere in this
//! crate: operations that combine clips require matching sample rates.

use std::path::{Path, PathBuf};

use thiserror::Error;

/// Scale between 16-bit PCM codes and real amplitudes: `x = code / 32768`.
pub const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: malformed WAV: {detail}")]
    MalformedWav { path: PathBuf, detail: String },
    #[error("{path}: unsupported encoding: {detail} (want mono pcm16 or float32)")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{path}: expected mono audio, got {channels} channels")]
    Multichannel { path: PathBuf, channels: u16 },
    #[error("{path}: empty clip")]
    EmptyClip { path: PathBuf },
    #[error("clip invariant violated: {0}")]
    InvalidClip(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Sample encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// A mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    /// Build a clip, checking the invariants: non-empty, all samples finite,
    /// positive sample rate.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(AudioError::InvalidClip("length must be >= 1".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |p, s| p.max(s.abs()))
    }
}

/// Read a mono WAV file (pcm16 or float32) into a clip.
///
/// Integer PCM codes are mapped to reals by dividing by 32768; float data is
/// taken as-is. Sample rate is preserved.
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::Multichannel {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| map_hound(path, e))?
            .into_iter()
            .map(|s| f64::from(s) / PCM16_SCALE)
            .collect(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| map_hound(path, e))?
            .into_iter()
            .map(f64::from)
            .collect(),
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{fmt:?}/{bits}-bit"),
            })
        }
    };
    if samples.is_empty() {
        return Err(AudioError::EmptyClip {
            path: path.to_path_buf(),
        });
    }
    AudioClip::new(samples, spec.sample_rate)
}

/// Write a clip to a WAV file.
///
/// Under pcm16, samples outside `[-1, 1]` are clamped; the number of clamped
/// samples is returned (0 under float32, which is lossless).
pub fn write_wav(
    path: &Path,
    clip: &AudioClip,
    encoding: WavEncoding,
) -> Result<usize, AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    let mut clamped = 0usize;
    match encoding {
        WavEncoding::Pcm16 => {
            for &s in &clip.samples {
                let clamped_s = s.clamp(-1.0, 1.0);
                if clamped_s != s {
                    clamped += 1;
                }
                let code = (clamped_s * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(code).map_err(|e| map_hound(path, e))?;
            }
        }
        WavEncoding::Float32 => {
            for &s in &clip.samples {
                writer
                    .write_sample(s as f32)
                    .map_err(|e| map_hound(path, e))?;
            }
        }
    }
    writer.finalize().map_err(|e| map_hound(path, e))?;
    Ok(clamped)
}

/// Tile or truncate a clip to `round(seconds * rate)` samples.
///
/// Shorter clips are repeated end to end and cut; longer clips keep their
/// head. Deterministic by construction: random offsets, when wanted, belong
/// to the scene generator's seed, not here.
pub fn fit_to_duration(clip: &AudioClip, seconds: f64) -> Result<AudioClip, AudioError> {
    if !seconds.is_finite() || seconds <= 0.0 {
        return Err(AudioError::InvalidClip("target duration must be > 0".into()));
    }
    let target = (seconds * f64::from(clip.sample_rate_hz)).round() as usize;
    if target == 0 {
        return Err(AudioError::InvalidClip("target duration rounds to 0 samples".into()));
    }
    let mut samples = Vec::with_capacity(target);
    while samples.len() < target {
        let need = target - samples.len();
        let take = need.min(clip.samples.len());
        samples.extend_from_slice(&clip.samples[..take]);
    }
    AudioClip::new(samples, clip.sample_rate_hz)
}

/// Root-mean-square amplitude.
pub fn rms(clip: &AudioClip) -> f64 {
    let sum_sq: f64 = clip.samples.iter().map(|s| s * s).sum();
    (sum_sq / clip.samples.len() as f64).sqrt()
}

fn map_hound(path: &Path, e: hound::Error) -> AudioError {
    let path = path.to_path_buf();
    match e {
        hound::Error::IoError(source) => AudioError::Io { path, source },
        hound::Error::FormatError(detail) => AudioError::MalformedWav {
            path,
            detail: detail.to_string(),
        },
        hound::Error::Unsupported => AudioError::UnsupportedEncoding {
            path,
            detail: "unsupported WAV variant".into(),
        },
        other => AudioError::MalformedWav {
            path,
            detail: other.to_string(),
        },
    }
}
