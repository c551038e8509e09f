//! Forward and inverse STFT with weighted overlap-add reconstruction.

use ndarray::Array2;
use num_complex::Complex64;
use realfft::RealFftPlanner;

use super::{ComplexSpectrogram, DspError, FrontendConfig};
use crate::audio::AudioClip;

/// Periodic Hann window of length `n`.
fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect-pad `x` by `pad` samples on both ends (edge sample not repeated).
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(n > pad, "reflect padding needs len > pad");
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 1..=pad {
        out.push(x[n - 1 - i]);
    }
    out
}

/// Forward STFT: periodic Hann window, frames at hop multiples, `win_len/2`
/// reflect padding at both ends, `ceil(len/hop)` frames.
pub fn stft(clip: &AudioClip, cfg: &FrontendConfig) -> Result<ComplexSpectrogram, DspError> {
    cfg.validate()?;
    let n = clip.len();
    if n < cfg.win_len {
        return Err(DspError::ClipTooShort {
            len: n,
            win_len: cfg.win_len,
        });
    }
    let win = cfg.win_len;
    let pad = win / 2;
    let padded = reflect_pad(clip.samples(), pad);
    let window = hann_periodic(win);
    let n_frames = cfg.n_frames(n);
    let n_bins = cfg.n_bins();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(win);
    let mut frame = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut values = Array2::<Complex64>::zeros((n_frames, n_bins));
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for i in 0..win {
            frame[i] = padded[start + i] * window[i];
        }
        fft.process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
            .expect("real FFT on preallocated buffers");
        for (f, &z) in spectrum.iter().enumerate() {
            values[[t, f]] = z;
        }
    }
    Ok(ComplexSpectrogram {
        values,
        config: *cfg,
    })
}

/// Inverse STFT by weighted overlap-add with squared-window normalization,
/// trimmed to `out_len` samples.
pub fn istft(
    spec: &ComplexSpectrogram,
    cfg: &FrontendConfig,
    out_len: usize,
) -> Result<AudioClip, DspError> {
    cfg.validate()?;
    let (n_frames, n_bins) = spec.values.dim();
    if n_bins != cfg.n_bins() {
        return Err(DspError::DimensionMismatch(format!(
            "spectrogram has {n_bins} bins, config wants {}",
            cfg.n_bins()
        )));
    }
    if n_frames == 0 || out_len == 0 {
        return Err(DspError::DimensionMismatch("empty spectrogram or output".into()));
    }
    let win = cfg.win_len;
    let pad = win / 2;
    let window = hann_periodic(win);
    let buf_len = (n_frames - 1) * cfg.hop + win;

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(win);
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();

    let mut num = vec![0.0f64; buf_len];
    let mut den = vec![0.0f64; buf_len];
    let scale = 1.0 / win as f64;
    for t in 0..n_frames {
        for (f, slot) in spectrum.iter_mut().enumerate() {
            *slot = spec.values[[t, f]];
        }
        ifft.process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
            .expect("real inverse FFT on preallocated buffers");
        let start = t * cfg.hop;
        for i in 0..win {
            num[start + i] += frame[i] * scale * window[i];
            den[start + i] += window[i] * window[i];
        }
    }

    let mut samples = vec![0.0f64; out_len];
    for (j, s) in samples.iter_mut().enumerate() {
        let i = pad + j;
        if i < buf_len && den[i] > 1e-12 {
            *s = num[i] / den[i];
        }
    }
    AudioClip::new(samples, cfg.sample_rate_hz)
        .map_err(|e| DspError::DimensionMismatch(e.to_string()))
}
