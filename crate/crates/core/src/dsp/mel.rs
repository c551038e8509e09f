//! Triangular Mel filterbank and Mel <-> STFT projections.

use ndarray::Array2;

use super::{DspError, FrontendConfig, MelSpectrogram};

/// Mel scale, HTK convention.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the STFT bins, peak 1, centers uniform on the
/// Mel scale (`F' x F` weights).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    /// Peak frequency of each filter in Hz.
    centers_hz: Vec<f64>,
    /// Per-STFT-bin sum of filter weights.
    col_sums: Vec<f64>,
    /// For bins no filter covers: index of the nearest covered bin.
    nearest_covered: Vec<usize>,
}

impl MelFilterbank {
    pub fn n_filters(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn column_sums(&self) -> &[f64] {
        &self.col_sums
    }
}

/// Build the filterbank for a config.
pub fn mel_filterbank(cfg: &FrontendConfig) -> Result<MelFilterbank, DspError> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let n_mels = cfg.n_mels;

    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let bin_hz = f64::from(cfg.sample_rate_hz) / cfg.win_len as f64;
    let mut weights = Array2::<f64>::zeros((n_mels, n_bins));
    for j in 0..n_mels {
        let (lo, mid, hi) = (edges_hz[j], edges_hz[j + 1], edges_hz[j + 2]);
        if !(lo < mid && mid < hi) {
            return Err(DspError::EmptyMelFilter { row: j });
        }
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            let w = rise.min(fall).max(0.0);
            weights[[j, k]] = w;
        }
        if weights.row(j).sum() <= 0.0 {
            return Err(DspError::EmptyMelFilter { row: j });
        }
    }

    let col_sums: Vec<f64> = (0..n_bins).map(|k| weights.column(k).sum()).collect();
    let covered: Vec<usize> = (0..n_bins).filter(|&k| col_sums[k] > 0.0).collect();
    debug_assert!(!covered.is_empty());
    let nearest_covered = (0..n_bins)
        .map(|k| {
            if col_sums[k] > 0.0 {
                k
            } else {
                // nearest covered bin; lower index wins ties
                *covered
                    .iter()
                    .min_by_key(|&&c| (c.abs_diff(k), c))
                    .expect("covered bins exist")
            }
        })
        .collect();

    Ok(MelFilterbank {
        weights,
        centers_hz: edges_hz[1..=n_mels].to_vec(),
        col_sums,
        nearest_covered,
    })
}

/// Project STFT magnitudes onto the Mel bands: `mel = mag . weights^T`.
pub fn to_mel(mag: &Array2<f64>, fb: &MelFilterbank) -> Result<MelSpectrogram, DspError> {
    if mag.ncols() != fb.n_bins() {
        return Err(DspError::DimensionMismatch(format!(
            "magnitude has {} bins, filterbank wants {}",
            mag.ncols(),
            fb.n_bins()
        )));
    }
    Ok(MelSpectrogram {
        values: mag.dot(&fb.weights.t()),
    })
}

/// Project a Mel-domain mask back to the STFT grid.
///
/// Covered bins take the filterbank-weighted average of the Mel mask (an
/// affine combination, so values stay in `[0,1]`); bins outside the
/// filterbank's support copy the nearest covered bin. Output is clamped to
/// `[0,1]` against rounding.
pub fn mel_mask_to_stft(mask_mel: &Array2<f64>, fb: &MelFilterbank) -> Result<Array2<f64>, DspError> {
    if mask_mel.ncols() != fb.n_filters() {
        return Err(DspError::DimensionMismatch(format!(
            "mask has {} bands, filterbank has {}",
            mask_mel.ncols(),
            fb.n_filters()
        )));
    }
    if let Some(((row, col), &value)) = mask_mel
        .indexed_iter()
        .find(|(_, &v)| !(0.0..=1.0).contains(&v))
    {
        return Err(DspError::MaskOutOfRange { row, col, value });
    }
    let mut out = mask_mel.dot(&fb.weights);
    for (k, &sum) in fb.col_sums.iter().enumerate() {
        if sum > 0.0 {
            let inv = 1.0 / sum;
            out.column_mut(k).mapv_inplace(|v| (v * inv).clamp(0.0, 1.0));
        }
    }
    for (k, &src) in fb.nearest_covered.iter().enumerate() {
        if src != k {
            for n in 0..out.nrows() {
                out[[n, k]] = out[[n, src]];
            }
        }
    }
    Ok(out)
}
