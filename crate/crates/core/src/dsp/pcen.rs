//! Per-channel energy normalization.
//!
//! A feed-forward automatic gain control: each Mel band is divided by an
//! IIR-smoothed version of itself raised to `alpha`, then root-compressed.
//! Stationary energy is flattened while transients pass through, which makes
//! it a strong frontend for foreground/background discrimination.

use ndarray::Array2;

use super::MelSpectrogram;

/// PCEN constants. Defaults are the indoor setting
/// `s=0.025, eps=1e-6, alpha=0.98, delta=2, r=0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcenParams {
    /// IIR smoothing constant, `0 < s <= 1`.
    pub s: f64,
    /// Gain-floor epsilon, `> 0`.
    pub eps: f64,
    /// AGC strength, `0 < alpha <= 1`.
    pub alpha: f64,
    /// Compression bias, `>= 0`.
    pub delta: f64,
    /// Compression exponent, `0 < r <= 1`.
    pub r: f64,
}

impl Default for PcenParams {
    fn default() -> Self {
        Self {
            s: 0.025,
            eps: 1e-6,
            alpha: 0.98,
            delta: 2.0,
            r: 0.5,
        }
    }
}

impl PcenParams {
    pub fn validate(&self) -> bool {
        self.s > 0.0
            && self.s <= 1.0
            && self.eps > 0.0
            && self.alpha > 0.0
            && self.alpha <= 1.0
            && self.delta >= 0.0
            && self.r > 0.0
            && self.r <= 1.0
    }
}

/// Apply PCEN per band.
///
/// The smoother is initialized at the first frame value rather than zero,
/// which removes the onset transient on short clips. Output is
/// `(M / (eps + smoothed)^alpha + delta)^r - delta^r`.
pub fn pcen(mel: &MelSpectrogram, p: &PcenParams) -> Array2<f64> {
    debug_assert!(p.validate());
    let (n_frames, n_bands) = mel.values.dim();
    let mut out = Array2::<f64>::zeros((n_frames, n_bands));
    if n_frames == 0 {
        return out;
    }
    let delta_r = p.delta.powf(p.r);
    let mut smoothed: Vec<f64> = mel.values.row(0).to_vec();
    for t in 0..n_frames {
        for b in 0..n_bands {
            let m = mel.values[[t, b]];
            if t > 0 {
                smoothed[b] = (1.0 - p.s) * smoothed[b] + p.s * m;
            }
            out[[t, b]] = (m / (p.eps + smoothed[b]).powf(p.alpha) + p.delta).powf(p.r) - delta_r;
        }
    }
    out
}
