//! Procedural sound families.
//!
//! Foreground families are transient: bursts, chirps, clicks, alarms, with
//! silence allowed outside the event. Background families are
//! quasi-stationary: noise colors, band-passed noise, hum stacks, and slow
//! amplitude modulation. Every draw is fully determined by `(class, seed)`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;

/// Procedural generator family with class-level parameters. Frequencies are
/// nominal; each draw jitters them slightly from its seed.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcFamily {
    /// Linear frequency sweep from `f0` to `f1` under a Hann envelope.
    LinearChirp { f0: f64, f1: f64 },
    /// Exponential sweep from `f0` to `f1`.
    ExpChirp { f0: f64, f1: f64 },
    /// Gated tone bursts with `harmonics` partials and sharp attacks.
    ToneBurst { f0: f64, harmonics: usize },
    /// Periodic clusters of short clicks at `rate_hz`; silent in between.
    ClickTrain { rate_hz: f64 },
    /// A few short noise bursts with hard on/off envelopes.
    NoiseBurst { bursts: usize },
    /// Alternating two-tone alarm at `rate_hz` alternations per second.
    TwoToneAlarm { fa: f64, fb: f64, rate_hz: f64 },
    /// Gaussian white noise.
    WhiteNoise,
    /// Pink (1/f) noise.
    PinkNoise,
    /// White noise band-passed to `[low_hz, high_hz]`.
    BandNoise { low_hz: f64, high_hz: f64 },
    /// Harmonic stack on `f0` with geometrically decaying partials.
    HumStack { f0: f64, harmonics: usize },
    /// Noise with slow, shallow amplitude modulation; pink base if `pink`.
    AmNoise { depth: f64, rate_hz: f64, pink: bool },
}

impl ProcFamily {
    pub fn is_foreground(&self) -> bool {
        matches!(
            self,
            ProcFamily::LinearChirp { .. }
                | ProcFamily::ExpChirp { .. }
                | ProcFamily::ToneBurst { .. }
                | ProcFamily::ClickTrain { .. }
                | ProcFamily::NoiseBurst { .. }
                | ProcFamily::TwoToneAlarm { .. }
        )
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 pulled away from zero.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn jitter(rng: &mut ChaCha8Rng, nominal: f64, frac: f64) -> f64 {
    nominal * (1.0 + rng.random_range(-frac..frac))
}

/// Peak-normalize to `target` (no-op for silent buffers).
fn normalize_peak(samples: &mut [f64], target: f64) {
    let peak = samples.iter().fold(0.0f64, |p, s| p.max(s.abs()));
    if peak > 0.0 {
        let g = target / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}

/// RMS-normalize to `target`, then rescale if the peak exceeds 0.97.
fn normalize_rms(samples: &mut [f64], target: f64) {
    let n = samples.len() as f64;
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / n).sqrt();
    if rms > 0.0 {
        let g = target / rms;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
    let peak = samples.iter().fold(0.0f64, |p, s| p.max(s.abs()));
    if peak > 0.97 {
        let g = 0.97 / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}

/// Render one draw of a family. `seed` fully determines the output.
pub fn render(family: &ProcFamily, seed: u64, duration_s: f64, sample_rate_hz: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(sample_rate_hz);
    let n = (duration_s * fs).round().max(1.0) as usize;
    let mut x = vec![0.0f64; n];

    match *family {
        ProcFamily::LinearChirp { f0, f1 } => {
            let f0 = jitter(&mut rng, f0, 0.1).min(0.45 * fs);
            let f1 = jitter(&mut rng, f1, 0.1).min(0.45 * fs);
            let ev_len = (((duration_s * rng.random_range(0.25..0.5)) * fs) as usize).clamp(1, n);
            let start = rng.random_range(0..=(n - ev_len));
            let t_total = ev_len as f64 / fs;
            for i in 0..ev_len {
                let t = i as f64 / fs;
                let phase = 2.0 * std::f64::consts::PI * (f0 * t + (f1 - f0) * t * t / (2.0 * t_total));
                let env = hann_point(i, ev_len);
                x[start + i] = env * phase.sin();
            }
            normalize_peak(&mut x, rng.random_range(0.45..0.75));
        }
        ProcFamily::ExpChirp { f0, f1 } => {
            let f0 = jitter(&mut rng, f0, 0.1).min(0.45 * fs);
            let f1 = jitter(&mut rng, f1, 0.1).min(0.45 * fs);
            let ev_len = (((duration_s * rng.random_range(0.25..0.5)) * fs) as usize).clamp(1, n);
            let start = rng.random_range(0..=(n - ev_len));
            let t_total = ev_len as f64 / fs;
            let ratio = (f1 / f0).max(1e-6);
            for i in 0..ev_len {
                let t = i as f64 / fs;
                let phase = 2.0 * std::f64::consts::PI * f0 * t_total / ratio.ln()
                    * (ratio.powf(t / t_total) - 1.0);
                let env = hann_point(i, ev_len);
                x[start + i] = env * phase.sin();
            }
            normalize_peak(&mut x, rng.random_range(0.45..0.75));
        }
        ProcFamily::ToneBurst { f0, harmonics } => {
            let f0 = jitter(&mut rng, f0, 0.1);
            let n_bursts = rng.random_range(2..=4usize);
            let burst_len = ((0.08 + rng.random::<f64>() * 0.07) * fs) as usize;
            for _ in 0..n_bursts {
                let start = rng.random_range(0..n.saturating_sub(burst_len).max(1));
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                for i in 0..burst_len.min(n - start) {
                    let t = i as f64 / fs;
                    // sharp attack, exponential decay
                    let env = (-(i as f64) / (0.35 * burst_len as f64)).exp();
                    let mut v = 0.0;
                    for h in 1..=harmonics.max(1) {
                        let fh = f0 * h as f64;
                        if fh < 0.45 * fs {
                            v += (2.0 * std::f64::consts::PI * fh * t + phi * h as f64).sin()
                                / h as f64;
                        }
                    }
                    x[start + i] += env * v;
                }
            }
            normalize_peak(&mut x, rng.random_range(0.45..0.75));
        }
        ProcFamily::ClickTrain { rate_hz } => {
            let rate = jitter(&mut rng, rate_hz, 0.15);
            let period = (fs / rate).max(8.0) as usize;
            let click_len = ((0.002 + rng.random::<f64>() * 0.002) * fs).max(4.0) as usize;
            let offset = rng.random_range(0..period);
            let polarity: f64 = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let mut start = offset;
            while start + click_len < n {
                for i in 0..click_len {
                    let decay = (-(i as f64) / (0.3 * click_len as f64)).exp();
                    x[start + i] = polarity * decay * gaussian(&mut rng) * 0.8;
                }
                start += period;
            }
            normalize_peak(&mut x, rng.random_range(0.5..0.8));
        }
        ProcFamily::NoiseBurst { bursts } => {
            let burst_len = ((0.05 + rng.random::<f64>() * 0.1) * fs) as usize;
            for _ in 0..bursts.max(1) {
                let start = rng.random_range(0..n.saturating_sub(burst_len).max(1));
                for i in 0..burst_len.min(n - start) {
                    let env = hann_point(i, burst_len);
                    x[start + i] += env * gaussian(&mut rng);
                }
            }
            normalize_peak(&mut x, rng.random_range(0.45..0.75));
        }
        ProcFamily::TwoToneAlarm { fa, fb, rate_hz } => {
            let fa = jitter(&mut rng, fa, 0.08);
            let fb = jitter(&mut rng, fb, 0.08);
            let rate = jitter(&mut rng, rate_hz, 0.15);
            let ev_len = (((duration_s * rng.random_range(0.4..0.7)) * fs) as usize).clamp(1, n);
            let start = rng.random_range(0..=(n - ev_len));
            let seg = (fs / rate).max(16.0) as usize;
            let gap = seg / 2; // half of each alternation is silent, like a beeping alarm
            for i in 0..ev_len {
                let k = i / seg;
                if i % seg >= seg - gap {
                    continue;
                }
                let f = if k.is_multiple_of(2) { fa } else { fb };
                let t = i as f64 / fs;
                let edge = ((i % seg).min(seg - gap - (i % seg)) as f64 / (0.01 * fs)).min(1.0);
                x[start + i] = edge * (2.0 * std::f64::consts::PI * f * t).sin();
            }
            normalize_peak(&mut x, rng.random_range(0.45..0.75));
        }
        ProcFamily::WhiteNoise => {
            for s in x.iter_mut() {
                *s = gaussian(&mut rng);
            }
            normalize_rms(&mut x, rng.random_range(0.06..0.18));
        }
        ProcFamily::PinkNoise => {
            let mut pink = PinkFilter::default();
            for s in x.iter_mut() {
                *s = pink.step(gaussian(&mut rng));
            }
            normalize_rms(&mut x, rng.random_range(0.06..0.18));
        }
        ProcFamily::BandNoise { low_hz, high_hz } => {
            let low = jitter(&mut rng, low_hz, 0.08).max(10.0);
            let high = jitter(&mut rng, high_hz, 0.08).min(0.45 * fs).max(low * 1.5);
            let mut bp = BandPass::new(low, high, fs);
            // discard a lead-in so filter state is warmed up
            for _ in 0..2048 {
                bp.step(gaussian(&mut rng));
            }
            for s in x.iter_mut() {
                *s = bp.step(gaussian(&mut rng));
            }
            normalize_rms(&mut x, rng.random_range(0.06..0.18));
        }
        ProcFamily::HumStack { f0, harmonics } => {
            let f0 = jitter(&mut rng, f0, 0.05);
            let phases: Vec<f64> = (0..harmonics.max(1))
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let amps: Vec<f64> = (0..harmonics.max(1))
                .map(|h| 0.8f64.powi(h as i32) * rng.random_range(0.7..1.0))
                .collect();
            for (i, s) in x.iter_mut().enumerate() {
                let t = i as f64 / fs;
                let mut v = 0.0;
                for h in 0..harmonics.max(1) {
                    let fh = f0 * (h + 1) as f64;
                    if fh < 0.45 * fs {
                        v += amps[h] * (2.0 * std::f64::consts::PI * fh * t + phases[h]).sin();
                    }
                }
                *s = v;
            }
            normalize_rms(&mut x, rng.random_range(0.06..0.18));
        }
        ProcFamily::AmNoise { depth, rate_hz, pink } => {
            let rate = jitter(&mut rng, rate_hz, 0.2);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut pink_filter = PinkFilter::default();
            for (i, s) in x.iter_mut().enumerate() {
                let t = i as f64 / fs;
                let base = if pink {
                    pink_filter.step(gaussian(&mut rng))
                } else {
                    gaussian(&mut rng)
                };
                *s = base * (1.0 + depth * (2.0 * std::f64::consts::PI * rate * t + phi).sin());
            }
            normalize_rms(&mut x, rng.random_range(0.06..0.18));
        }
    }

    AudioClip::new(x, sample_rate_hz).expect("generated clips are finite and non-empty")
}

fn hann_point(i: usize, n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
}

/// Paul Kellet's pink noise filter.
#[derive(Default)]
struct PinkFilter {
    b: [f64; 7],
}

impl PinkFilter {
    fn step(&mut self, white: f64) -> f64 {
        let b = &mut self.b;
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let out = b.iter().take(6).sum::<f64>() + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out * 0.11
    }
}

/// Two cascaded RBJ band-pass biquads.
struct BandPass {
    stages: [Biquad; 2],
}

impl BandPass {
    fn new(low_hz: f64, high_hz: f64, fs: f64) -> Self {
        let f0 = (low_hz * high_hz).sqrt();
        let q = (f0 / (high_hz - low_hz)).max(0.05);
        Self {
            stages: [Biquad::bandpass(f0, q, fs), Biquad::bandpass(f0, q, fs)],
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.stages[0].step(x);
        self.stages[1].step(y)
    }
}

struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    /// RBJ cookbook band-pass, 0 dB peak gain.
    fn bandpass(f0: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * f0 / fs;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b1: 0.0,
            b2: -alpha / a0,
            a1: -2.0 * w.cos() / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        // transposed direct form II
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }
}
