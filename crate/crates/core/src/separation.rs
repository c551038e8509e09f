//! Oracle and model-driven separation of a mixture into foreground and
//! background estimates.
//!
//! Both paths produce a Mel-domain mask, project it to the STFT grid,
//! scale the complex mixture spectrogram (which keeps the mixture phase),
//! and invert both branches. The oracle path computes the ideal ratio mask
//! from aligned reference sources and is the performance upper bound.

use ndarray::Array2;
use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp::{self, ComplexSpectrogram, DspError, Frontend, MelSpectrogram};
use crate::net::{self, NetError, ModelParams};

#[derive(Debug, Error)]
pub enum SepError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask domain is {found:?}, expected {expected:?}")]
    WrongDomain { expected: MaskDomain, found: MaskDomain },
    #[error("mask entry out of [0,1] at ({row},{col}): {value}")]
    MaskOutOfRange { row: usize, col: usize, value: f64 },
    #[error("reference clip not aligned with mixture: {0}")]
    UnalignedReference(String),
    #[error("variant {0} requires an adaptation clip")]
    MissingAdaptation(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Which grid a mask lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskDomain {
    Mel,
    Stft,
}

/// A time-frequency mask with entries in `[0,1]`.
#[derive(Debug, Clone)]
pub struct TFMask {
    values: Array2<f64>,
    domain: MaskDomain,
}

impl TFMask {
    pub fn new(values: Array2<f64>, domain: MaskDomain) -> Result<Self, SepError> {
        if let Some(((row, col), &value)) = values
            .indexed_iter()
            .find(|(_, &v)| !(0.0..=1.0).contains(&v))
        {
            return Err(SepError::MaskOutOfRange { row, col, value });
        }
        Ok(Self { values, domain })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn domain(&self) -> MaskDomain {
        self.domain
    }
}

/// Result of separating one mixture.
#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub fg_estimate: AudioClip,
    pub bg_estimate: AudioClip,
    pub mask_mel: TFMask,
    pub mask_stft: TFMask,
}

/// Ideal ratio mask `F / (F + B + eps)` on Mel magnitudes.
///
/// The epsilon defines silent bins (0/0) as mask 0, assigning them to the
/// background.
pub fn irm(fg_mel: &MelSpectrogram, bg_mel: &MelSpectrogram, eps: f64) -> Result<TFMask, SepError> {
    if fg_mel.values.dim() != bg_mel.values.dim() {
        return Err(SepError::ShapeMismatch(format!(
            "foreground {:?} vs background {:?}",
            fg_mel.values.dim(),
            bg_mel.values.dim()
        )));
    }
    let values = ndarray::Zip::from(&fg_mel.values)
        .and(&bg_mel.values)
        .map_collect(|&f, &b| (f / (f + b + eps)).clamp(0.0, 1.0));
    TFMask::new(values, MaskDomain::Mel)
}

/// Scale the mixture spectrogram by the mask and its complement. Complex
/// scaling by a real mask preserves the mixture phase.
pub fn apply_mask(
    mask: &TFMask,
    mix: &ComplexSpectrogram,
) -> Result<(ComplexSpectrogram, ComplexSpectrogram), SepError> {
    if mask.domain != MaskDomain::Stft {
        return Err(SepError::WrongDomain {
            expected: MaskDomain::Stft,
            found: mask.domain,
        });
    }
    if mask.values.dim() != mix.values.dim() {
        return Err(SepError::ShapeMismatch(format!(
            "mask {:?} vs spectrogram {:?}",
            mask.values.dim(),
            mix.values.dim()
        )));
    }
    let fg = ndarray::Zip::from(&mask.values)
        .and(&mix.values)
        .map_collect(|&m, &x| x * m);
    let bg = ndarray::Zip::from(&mask.values)
        .and(&mix.values)
        .map_collect(|&m, &x| x * (1.0 - m));
    Ok((
        ComplexSpectrogram { values: fg, config: mix.config },
        ComplexSpectrogram { values: bg, config: mix.config },
    ))
}

/// How the Mel mask for a mixture is produced.
pub enum Masker<'a> {
    /// Ideal ratio mask from aligned ground-truth sources.
    Oracle {
        foreground: &'a AudioClip,
        background: &'a AudioClip,
    },
    /// Trained mask-estimation model; `adaptation` is required for the
    /// aux-conditioned variants.
    Model {
        model: &'a ModelParams,
        adaptation: Option<&'a AudioClip>,
    },
}

/// Separate a mixture into foreground and background estimates.
pub fn separate(
    mix: &AudioClip,
    masker: &Masker<'_>,
    frontend: &Frontend,
) -> Result<SeparationResult, SepError> {
    let (mix_spec, mix_mel) = frontend.analyze(mix)?;

    let mask_mel = match masker {
        Masker::Oracle { foreground, background } => {
            for (clip, what) in [(foreground, "foreground"), (background, "background")] {
                if clip.len() != mix.len() || clip.sample_rate_hz() != mix.sample_rate_hz() {
                    return Err(SepError::UnalignedReference(format!(
                        "{what}: {} samples at {} Hz vs mixture {} samples at {} Hz",
                        clip.len(),
                        clip.sample_rate_hz(),
                        mix.len(),
                        mix.sample_rate_hz()
                    )));
                }
            }
            let fg_mel = frontend.mel_of(foreground)?;
            let bg_mel = frontend.mel_of(background)?;
            irm(&fg_mel, &bg_mel, 1e-12)?
        }
        Masker::Model { model, adaptation } => {
            let mode = model.variant.feature_mode();
            let feats = frontend.features(&mix_mel, mode);
            let lambda = if model.variant.uses_aux() {
                let adapt = adaptation
                    .ok_or_else(|| SepError::MissingAdaptation(model.variant.to_string()))?;
                let adapt_feats = frontend.features(&frontend.mel_of(adapt)?, mode);
                let aux = model
                    .aux
                    .as_ref()
                    .ok_or_else(|| NetError::MissingAux(model.variant.to_string()))?;
                Some(net::aux_forward(aux, &adapt_feats)?.0)
            } else {
                None
            };
            let (mask, _) = net::forward(
                &model.main,
                &feats,
                lambda.as_ref(),
                net::Mode::Eval,
                0.0,
                0,
            )?;
            TFMask::new(mask, MaskDomain::Mel)?
        }
    };

    let mask_stft_values = dsp::mel_mask_to_stft(mask_mel.values(), &frontend.filterbank)?;
    let mask_stft = TFMask::new(mask_stft_values, MaskDomain::Stft)?;
    let (fg_spec, bg_spec) = apply_mask(&mask_stft, &mix_spec)?;
    let fg_estimate = dsp::istft(&fg_spec, &frontend.config, mix.len())?;
    let bg_estimate = dsp::istft(&bg_spec, &frontend.config, mix.len())?;

    Ok(SeparationResult {
        fg_estimate,
        bg_estimate,
        mask_mel,
        mask_stft,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FrontendConfig;
    use crate::scene;
    use ndarray::Array2;
    use num_complex::Complex64;

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let norm: f64 = b.iter().map(|y| y * y).sum();
        (diff / norm.max(1e-300)).sqrt()
    }

    fn mel(values: Array2<f64>) -> MelSpectrogram {
        MelSpectrogram { values }
    }

    #[test]
    fn irm_trivial_values() {
        let f = mel(ndarray::array![[2.0, 1.0, 1.0]]);
        let b = mel(ndarray::array![[2.0, 0.0, 3.0]]);
        let m = irm(&f, &b, 1e-12).unwrap();
        assert!((m.values()[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((m.values()[[0, 1]] - 1.0).abs() < 1e-9);
        assert!((m.values()[[0, 2]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn irm_assigns_silent_bins_to_background() {
        let f = mel(Array2::zeros((1, 2)));
        let b = mel(Array2::zeros((1, 2)));
        let m = irm(&f, &b, 1e-12).unwrap();
        assert_eq!(m.values()[[0, 0]], 0.0);
    }

    #[test]
    fn irm_rejects_shape_mismatch() {
        let f = mel(Array2::zeros((1, 2)));
        let b = mel(Array2::zeros((2, 2)));
        assert!(matches!(irm(&f, &b, 1e-12), Err(SepError::ShapeMismatch(_))));
    }

    fn toy_spec(cfg: FrontendConfig, n: usize) -> ComplexSpectrogram {
        let values = Array2::from_shape_fn((n, cfg.n_bins()), |(t, f)| {
            Complex64::new((t + 1) as f64 * 0.1, f as f64 * 0.01 - 0.3)
        });
        ComplexSpectrogram { values, config: cfg }
    }

    #[test]
    fn full_mask_passes_everything_to_foreground() {
        let cfg = FrontendConfig::for_sample_rate(8000);
        let mix = toy_spec(cfg, 3);
        let ones = TFMask::new(Array2::ones(mix.values.dim()), MaskDomain::Stft).unwrap();
        let (fg, bg) = apply_mask(&ones, &mix).unwrap();
        assert_eq!(fg.values, mix.values);
        assert!(bg.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn half_mask_splits_evenly_and_magnitudes_add_up() {
        let cfg = FrontendConfig::for_sample_rate(8000);
        let mix = toy_spec(cfg, 3);
        let half = TFMask::new(Array2::from_elem(mix.values.dim(), 0.5), MaskDomain::Stft).unwrap();
        let (fg, bg) = apply_mask(&half, &mix).unwrap();
        for ((a, b), x) in fg.values.iter().zip(bg.values.iter()).zip(mix.values.iter()) {
            assert!((a - x * 0.5).norm() < 1e-15);
            assert!((b - x * 0.5).norm() < 1e-15);
            assert!((a.norm() + b.norm() - x.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn mel_domain_mask_cannot_be_applied() {
        let cfg = FrontendConfig::for_sample_rate(8000);
        let mix = toy_spec(cfg, 2);
        let m = TFMask::new(Array2::zeros((2, 16)), MaskDomain::Mel).unwrap();
        assert!(matches!(apply_mask(&m, &mix), Err(SepError::WrongDomain { .. })));
    }

    #[test]
    fn mask_constructor_rejects_out_of_range() {
        let mut v = Array2::zeros((1, 3));
        v[[0, 1]] = -0.1;
        assert!(matches!(
            TFMask::new(v, MaskDomain::Mel),
            Err(SepError::MaskOutOfRange { .. })
        ));
    }

    #[test]
    fn oracle_recovers_foreground_when_background_is_silent_in_mix() {
        // Background reference is (near) zero: the IRM is ~1 everywhere the
        // foreground has energy, so the estimate matches the foreground.
        let roster = scene::default_roster();
        let fg_class = roster.find("two_tone_alarm").unwrap();
        let fg = scene::synth_event(fg_class, 4, 1.0, 16_000).unwrap();
        let bg = AudioClip::new(vec![1e-12; fg.len()], 16_000).unwrap();
        let mut cfg = FrontendConfig::for_sample_rate(16_000);
        cfg.win_len = 1024;
        cfg.hop = 256;
        let frontend = Frontend::new(cfg).unwrap();
        let masker = Masker::Oracle { foreground: &fg, background: &bg };
        let result = separate(&fg, &masker, &frontend).unwrap();
        assert!(rel_l2(result.fg_estimate.samples(), fg.samples()) < 1e-3);
    }

    #[test]
    fn estimates_sum_back_to_the_mixture() {
        let roster = scene::default_roster();
        let fg = scene::synth_event(roster.find("rising_chirp").unwrap(), 1, 1.0, 16_000).unwrap();
        let bg = scene::synth_background(roster.find("pink_noise").unwrap(), 2, 1.0, 16_000).unwrap();
        let mixed = scene::mix_at_snr(&fg, &bg, 0.0).unwrap();
        let mut cfg = FrontendConfig::for_sample_rate(16_000);
        cfg.win_len = 1024;
        cfg.hop = 256;
        let frontend = Frontend::new(cfg).unwrap();
        let masker = Masker::Oracle {
            foreground: &mixed.foreground,
            background: &mixed.background,
        };
        let result = separate(&mixed.mixture, &masker, &frontend).unwrap();
        let sum: Vec<f64> = result
            .fg_estimate
            .samples()
            .iter()
            .zip(result.bg_estimate.samples())
            .map(|(a, b)| a + b)
            .collect();
        assert!(rel_l2(&sum, mixed.mixture.samples()) < 1e-6);
    }
}
