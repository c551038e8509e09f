//! Separation quality metrics by least-squares decomposition.
//!
//! An estimate is split into `s_target + e_interf + e_artif`: the projection
//! onto the span of the target reference and its `L-1` delays, the extra
//! contribution of the other reference's delay span, and the residual.
//! Signals are treated as zero outside their support, so delayed references
//! live on `n + L - 1` samples and the decomposition is exact there.
//!
//! SDR/SIR/SAR follow from energy ratios; "improvement" scores subtract the
//! metrics of the unprocessed mixture evaluated as an estimate. `L = 1`
//! gives the plain projection variant; `L = 512` is the customary filtered
//! variant.

use ndarray::{Array1, Array2};
use realfft::RealFftPlanner;
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error)]
pub enum BssError {
    #[error("length mismatch: estimate {estimate} vs reference {reference} samples")]
    LengthMismatch { estimate: usize, reference: usize },
    #[error("sample rate mismatch: {a} vs {b} Hz")]
    RateMismatch { a: u32, b: u32 },
    #[error("filter length {filter_len} must be in 1..={max}")]
    BadFilterLength { filter_len: usize, max: usize },
    #[error("target reference has zero energy: metrics undefined")]
    UndefinedTarget,
    #[error("Gram system is degenerate even after regularization")]
    DegenerateSystem,
}

/// Decomposition settings: distortion filter length and the dB cap applied
/// to otherwise infinite ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionConfig {
    pub filter_len: usize,
    pub cap_db: f64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self { filter_len: 512, cap_db: 100.0 }
    }
}

impl DecompositionConfig {
    pub fn with_filter_len(filter_len: usize) -> Self {
        Self { filter_len, ..Self::default() }
    }
}

/// The three-part split of an estimate, on `n + L - 1` samples.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
    /// Set when the Gram system needed Tikhonov regularization.
    pub regularized: bool,
}

/// SDR/SIR/SAR in dB, plus improvement scores when computed against a
/// mixture baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
    pub sdr_i_db: Option<f64>,
    pub sir_i_db: Option<f64>,
}

/// Full cross-correlation `c(tau) = sum_t a(t) b(t - tau)` for
/// `tau in -(l-1)..=(l-1)`, returned as `c[tau + l - 1]`, computed by FFT.
fn cross_correlation(a: &[f64], b: &[f64], l: usize) -> Vec<f64> {
    let n = a.len().max(b.len());
    let m = (n + l).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    let ifft = planner.plan_fft_inverse(m);

    let mut pa = vec![0.0; m];
    pa[..a.len()].copy_from_slice(a);
    let mut pb = vec![0.0; m];
    pb[..b.len()].copy_from_slice(b);
    let mut sa = fft.make_output_vec();
    let mut sb = fft.make_output_vec();
    fft.process(&mut pa, &mut sa).expect("fft");
    fft.process(&mut pb, &mut sb).expect("fft");
    for (x, y) in sa.iter_mut().zip(&sb) {
        *x *= y.conj();
    }
    let mut out = ifft.make_output_vec();
    ifft.process(&mut sa, &mut out).expect("ifft");
    let scale = 1.0 / m as f64;
    // positive lags at indices 0..l, negative lag -k wraps to m - k
    let mut c = vec![0.0; 2 * l - 1];
    for tau in 0..l {
        c[l - 1 + tau] = out[tau] * scale;
    }
    for tau in 1..l {
        c[l - 1 - tau] = out[m - tau] * scale;
    }
    c
}

/// Cholesky solve of the symmetric positive definite `g x = rhs`.
fn cholesky_solve(g: &Array2<f64>, rhs: &Array1<f64>) -> Option<Array1<f64>> {
    let n = g.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Some(x)
}

/// Add `coef * ref` delayed by `d` into `acc` (zero-padded domain).
fn add_delayed(acc: &mut [f64], reference: &[f64], d: usize, coef: f64) {
    for (t, &v) in reference.iter().enumerate() {
        acc[t + d] += coef * v;
    }
}

fn validate(
    estimate: &AudioClip,
    references: &[&AudioClip; 2],
    cfg: &DecompositionConfig,
) -> Result<(), BssError> {
    for r in references {
        if r.len() != estimate.len() {
            return Err(BssError::LengthMismatch {
                estimate: estimate.len(),
                reference: r.len(),
            });
        }
        if r.sample_rate_hz() != estimate.sample_rate_hz() {
            return Err(BssError::RateMismatch {
                a: estimate.sample_rate_hz(),
                b: r.sample_rate_hz(),
            });
        }
    }
    if cfg.filter_len == 0 || cfg.filter_len >= estimate.len() {
        return Err(BssError::BadFilterLength {
            filter_len: cfg.filter_len,
            max: estimate.len() - 1,
        });
    }
    Ok(())
}

/// Least-squares decomposition of `estimate` against two references; the
/// first reference is the target.
pub fn decompose(
    estimate: &AudioClip,
    references: &[&AudioClip; 2],
    cfg: &DecompositionConfig,
) -> Result<Decomposition, BssError> {
    validate(estimate, references, cfg)?;
    let l = cfg.filter_len;
    let n = estimate.len();
    let m = n + l - 1;
    let est = estimate.samples();
    let refs = [references[0].samples(), references[1].samples()];

    // Gram matrix of all delayed references: block (a,b), entry (i,j) is
    // the correlation of ref_a delayed i with ref_b delayed j, which only
    // depends on j - i in the zero-padded domain.
    let mut gram = Array2::<f64>::zeros((2 * l, 2 * l));
    for a in 0..2 {
        for b in 0..2 {
            let c = cross_correlation(refs[a], refs[b], l);
            for i in 0..l {
                for j in 0..l {
                    // sum_t ref_a(t - i) ref_b(t - j) = c_ab(j - i)
                    gram[[a * l + i, b * l + j]] = c[(l as isize - 1 + (j as isize - i as isize)) as usize];
                }
            }
        }
    }
    // rhs: correlations of the estimate with each delayed reference
    let mut rhs_all = Array1::<f64>::zeros(2 * l);
    for a in 0..2 {
        let c = cross_correlation(est, refs[a], l);
        for i in 0..l {
            // sum_t est(t) ref_a(t - i) = c(i)
            rhs_all[a * l + i] = c[l - 1 + i];
        }
    }

    let (coef_all, regularized) = match cholesky_solve(&gram, &rhs_all) {
        Some(c) => (c, false),
        None => {
            let mut reg = gram.clone();
            for i in 0..2 * l {
                reg[[i, i]] += 1e-10;
            }
            (
                cholesky_solve(&reg, &rhs_all).ok_or(BssError::DegenerateSystem)?,
                true,
            )
        }
    };

    // target-only projection uses the target block of the Gram system
    let gram_t = gram.slice(ndarray::s![..l, ..l]).to_owned();
    let rhs_t = rhs_all.slice(ndarray::s![..l]).to_owned();
    let coef_t = match cholesky_solve(&gram_t, &rhs_t) {
        Some(c) => c,
        None => {
            let mut reg = gram_t.clone();
            for i in 0..l {
                reg[[i, i]] += 1e-10;
            }
            cholesky_solve(&reg, &rhs_t).ok_or(BssError::DegenerateSystem)?
        }
    };

    let mut s_target = vec![0.0; m];
    for d in 0..l {
        add_delayed(&mut s_target, refs[0], d, coef_t[d]);
    }
    let mut p_all = vec![0.0; m];
    for a in 0..2 {
        for d in 0..l {
            add_delayed(&mut p_all, refs[a], d, coef_all[a * l + d]);
        }
    }
    let mut e_interf = vec![0.0; m];
    let mut e_artif = vec![0.0; m];
    for t in 0..m {
        e_interf[t] = p_all[t] - s_target[t];
        e_artif[t] = if t < n { est[t] } else { 0.0 } - p_all[t];
    }
    Ok(Decomposition { s_target, e_interf, e_artif, regularized })
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ratio_db(num: f64, den: f64, cap_db: f64) -> f64 {
    if num == 0.0 && den == 0.0 {
        return 0.0;
    }
    let db = 10.0 * (num / den).log10();
    db.clamp(-cap_db, cap_db)
}

/// SDR/SIR/SAR of a decomposition.
pub fn metrics(d: &Decomposition, cfg: &DecompositionConfig) -> Result<EvalMetrics, BssError> {
    let target = energy(&d.s_target);
    if target == 0.0 {
        return Err(BssError::UndefinedTarget);
    }
    let interf = energy(&d.e_interf);
    let artif = energy(&d.e_artif);
    let distortion = energy(
        &d.e_interf
            .iter()
            .zip(&d.e_artif)
            .map(|(a, b)| a + b)
            .collect::<Vec<_>>(),
    );
    let target_plus_interf = energy(
        &d.s_target
            .iter()
            .zip(&d.e_interf)
            .map(|(a, b)| a + b)
            .collect::<Vec<_>>(),
    );
    Ok(EvalMetrics {
        sdr_db: ratio_db(target, distortion, cfg.cap_db),
        sir_db: ratio_db(target, interf, cfg.cap_db),
        sar_db: ratio_db(target_plus_interf, artif, cfg.cap_db),
        sdr_i_db: None,
        sir_i_db: None,
    })
}

/// Metrics of the estimate plus SDR/SIR improvements over the unprocessed
/// mixture (scored as an estimate against the same references). SAR is
/// reported without an improvement counterpart.
pub fn improvements(
    estimate: &AudioClip,
    mixture: &AudioClip,
    references: &[&AudioClip; 2],
    cfg: &DecompositionConfig,
) -> Result<EvalMetrics, BssError> {
    let est = metrics(&decompose(estimate, references, cfg)?, cfg)?;
    let mix = metrics(&decompose(mixture, references, cfg)?, cfg)?;
    Ok(EvalMetrics {
        sdr_i_db: Some(est.sdr_db - mix.sdr_db),
        sir_i_db: Some(est.sir_db - mix.sir_db),
        ..est
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 8000).unwrap()
    }

    fn noise(n: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        clip((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let norm: f64 = b.iter().map(|y| y * y).sum();
        (diff / norm.max(1e-300)).sqrt()
    }

    /// Brute-force oracle: build the delayed-reference matrix explicitly,
    /// form the normal equations by direct dot products, and solve by
    /// Gaussian elimination with partial pivoting.
    mod oracle {
        pub fn delayed_matrix(refs: &[&[f64]; 2], l: usize, m: usize) -> Vec<Vec<f64>> {
            let mut cols = Vec::new();
            for r in refs {
                for d in 0..l {
                    let mut col = vec![0.0; m];
                    for (t, &v) in r.iter().enumerate() {
                        col[t + d] = v;
                    }
                    cols.push(col);
                }
            }
            cols
        }

        pub fn solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Vec<f64> {
            let n = b.len();
            for col in 0..n {
                let pivot = (col..n)
                    .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                    .unwrap();
                a.swap(col, pivot);
                b.swap(col, pivot);
                for row in col + 1..n {
                    let f = a[row][col] / a[col][col];
                    for k in col..n {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
            let mut x = vec![0.0; n];
            for row in (0..n).rev() {
                let mut sum = b[row];
                for k in row + 1..n {
                    sum -= a[row][k] * x[k];
                }
                x[row] = sum / a[row][row];
            }
            x
        }

        /// Projection of `est` (zero-padded) onto the span of `cols`.
        pub fn project(cols: &[Vec<f64>], est: &[f64], m: usize) -> Vec<f64> {
            let k = cols.len();
            let mut gram: Vec<Vec<f64>> = vec![vec![0.0; k]; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    gram[i][j] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                }
                rhs[i] = cols[i][..est.len().min(m)]
                    .iter()
                    .zip(est)
                    .map(|(a, b)| a * b)
                    .sum();
            }
            let coef = solve(&mut gram, &mut rhs);
            let mut out = vec![0.0; m];
            for (c, col) in coef.iter().zip(cols) {
                for t in 0..m {
                    out[t] += c * col[t];
                }
            }
            out
        }
    }

    #[test]
    fn estimate_equal_to_target_decomposes_cleanly() {
        let r1 = noise(600, 1);
        let r2 = noise(600, 2);
        let cfg = DecompositionConfig::with_filter_len(8);
        let d = decompose(&r1, &[&r1, &r2], &cfg).unwrap();
        assert!(!d.regularized);
        assert!(energy(&d.e_interf) < 1e-16 * energy(&d.s_target));
        assert!(energy(&d.e_artif) < 1e-16 * energy(&d.s_target));
        let padded: Vec<f64> = r1.samples().iter().cloned().chain([0.0; 7]).collect();
        assert!(rel_l2(&d.s_target, &padded) < 1e-8);
    }

    #[test]
    fn orthogonal_split_at_l1() {
        // orthogonal equal-power references; estimate = r1 + r2
        let n = 400;
        let r1: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let r2: Vec<f64> = (0..n).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let est: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a + b).collect();
        let cfg = DecompositionConfig::with_filter_len(1);
        let d = decompose(&clip(est), &[&clip(r1.clone()), &clip(r2.clone())], &cfg).unwrap();
        assert!(rel_l2(&d.s_target, &r1) < 1e-12);
        assert!(rel_l2(&d.e_interf, &r2) < 1e-12);
        assert!(energy(&d.e_artif) < 1e-20);
        let m = metrics(&d, &cfg).unwrap();
        assert!(m.sir_db.abs() < 1e-9);
        assert_eq!(m.sar_db, cfg.cap_db);
    }

    #[test]
    fn decomposition_matches_brute_force_oracle_on_random_instances() {
        let cfg = DecompositionConfig::with_filter_len(16);
        for seed in 0..8 {
            let r1 = noise(1000, 10 + seed);
            let r2 = noise(1000, 20 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(30 + seed);
            let est_samples: Vec<f64> = (0..1000)
                .map(|t| {
                    0.8 * r1.samples()[t] + 0.5 * r2.samples()[t] + 0.1 * rng.random_range(-1.0..1.0)
                })
                .collect();
            let est = clip(est_samples);
            let d = decompose(&est, &[&r1, &r2], &cfg).unwrap();

            let m = 1000 + 15;
            let refs = [r1.samples(), r2.samples()];
            let cols = oracle::delayed_matrix(&refs, 16, m);
            let p_all = oracle::project(&cols, est.samples(), m);
            let p_t = oracle::project(&cols[..16], est.samples(), m);
            let oracle_interf: Vec<f64> = p_all.iter().zip(&p_t).map(|(a, b)| a - b).collect();
            let oracle_artif: Vec<f64> = (0..m)
                .map(|t| if t < 1000 { est.samples()[t] } else { 0.0 } - p_all[t])
                .collect();
            assert!(rel_l2(&d.s_target, &p_t) < 1e-9, "seed {seed}");
            assert!(rel_l2(&d.e_interf, &oracle_interf) < 1e-9, "seed {seed}");
            assert!(rel_l2(&d.e_artif, &oracle_artif) < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn parts_sum_back_to_the_estimate() {
        let cfg = DecompositionConfig::with_filter_len(32);
        let r1 = noise(2000, 5);
        let r2 = noise(2000, 6);
        let est = noise(2000, 7);
        let d = decompose(&est, &[&r1, &r2], &cfg).unwrap();
        let m = 2000 + 31;
        let sum: Vec<f64> = (0..m)
            .map(|t| d.s_target[t] + d.e_interf[t] + d.e_artif[t])
            .collect();
        let padded: Vec<f64> = est.samples().iter().cloned().chain(vec![0.0; 31]).collect();
        assert!(rel_l2(&sum, &padded) < 1e-9);
    }

    #[test]
    fn perfect_estimate_hits_the_cap() {
        let r1 = noise(500, 11);
        let r2 = noise(500, 12);
        let cfg = DecompositionConfig::with_filter_len(4);
        let m = metrics(&decompose(&r1, &[&r1, &r2], &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(m.sdr_db, 100.0);
        assert_eq!(m.sir_db, 100.0);
        assert_eq!(m.sar_db, 100.0);
    }

    #[test]
    fn sar_matches_constructed_orthogonal_noise() {
        // Build w supported on 0..n and orthogonal to every delayed
        // reference. Since w is zero on the padded tail, it is enough to
        // orthogonalize against the columns truncated to the first n
        // samples.
        let n = 600;
        let l = 4;
        let m = n + l - 1;
        let r1 = noise(n, 15);
        let r2 = noise(n, 16);
        let w_raw = noise(n, 17);
        let refs = [r1.samples(), r2.samples()];
        let cols = oracle::delayed_matrix(&refs, l, m);
        let cols_trunc: Vec<Vec<f64>> = cols.iter().map(|c| c[..n].to_vec()).collect();
        let proj = oracle::project(&cols_trunc, w_raw.samples(), n);
        let w: Vec<f64> = (0..n).map(|t| w_raw.samples()[t] - proj[t]).collect();
        for col in &cols {
            let dot: f64 = w.iter().zip(&col[..n]).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-8, "w not orthogonal to a delayed reference");
        }
        let est: Vec<f64> = (0..n).map(|t| r1.samples()[t] + w[t]).collect();
        let cfg = DecompositionConfig::with_filter_len(l);
        let d = decompose(&clip(est), &[&r1, &r2], &cfg).unwrap();
        let got = metrics(&d, &cfg).unwrap();
        let expected_sar = 10.0 * (energy(r1.samples()) / energy(&w)).log10();
        assert!(
            (got.sar_db - expected_sar).abs() < 1e-6,
            "sar {} vs expected {expected_sar}",
            got.sar_db
        );
    }

    #[test]
    fn improvements_are_zero_for_the_mixture_itself() {
        let r1 = noise(800, 21);
        let r2 = noise(800, 22);
        let mix = clip(
            r1.samples()
                .iter()
                .zip(r2.samples())
                .map(|(a, b)| a + 0.7 * b)
                .collect(),
        );
        let cfg = DecompositionConfig::with_filter_len(8);
        let m = improvements(&mix, &mix, &[&r1, &r2], &cfg).unwrap();
        assert!(m.sdr_i_db.unwrap().abs() < 1e-12);
        assert!(m.sir_i_db.unwrap().abs() < 1e-12);
    }

    #[test]
    fn perfect_estimate_improvement_is_cap_minus_mixture_sdr() {
        let r1 = noise(800, 23);
        let r2 = noise(800, 24);
        let mix = clip(
            r1.samples()
                .iter()
                .zip(r2.samples())
                .map(|(a, b)| a + 0.7 * b)
                .collect(),
        );
        let cfg = DecompositionConfig::with_filter_len(8);
        let m = improvements(&r1, &mix, &[&r1, &r2], &cfg).unwrap();
        let mix_only = metrics(&decompose(&mix, &[&r1, &r2], &cfg).unwrap(), &cfg).unwrap();
        assert!((m.sdr_i_db.unwrap() - (cfg.cap_db - mix_only.sdr_db)).abs() < 1e-9);
        assert!(m.sdr_i_db.unwrap() > 0.0);
    }

    #[test]
    fn zero_target_energy_is_undefined_not_capped() {
        let r1 = clip(vec![0.0; 300]);
        let r2 = noise(300, 31);
        let est = noise(300, 32);
        let cfg = DecompositionConfig::with_filter_len(2);
        let d = decompose(&est, &[&r1, &r2], &cfg);
        // zero reference makes the Gram singular; regularization kicks in
        let d = d.unwrap();
        assert!(d.regularized);
        assert!(matches!(metrics(&d, &cfg), Err(BssError::UndefinedTarget)));
    }

    #[test]
    fn scaling_the_estimate_leaves_metrics_unchanged() {
        let r1 = noise(700, 41);
        let r2 = noise(700, 42);
        let est = clip(
            r1.samples()
                .iter()
                .zip(r2.samples())
                .map(|(a, b)| 0.9 * a + 0.3 * b + 0.05 * (a - b))
                .collect(),
        );
        let cfg = DecompositionConfig::with_filter_len(8);
        let base = metrics(&decompose(&est, &[&r1, &r2], &cfg).unwrap(), &cfg).unwrap();
        for c in [0.1, 3.0, 17.5] {
            let scaled = clip(est.samples().iter().map(|v| c * v).collect());
            let got = metrics(&decompose(&scaled, &[&r1, &r2], &cfg).unwrap(), &cfg).unwrap();
            assert!((got.sdr_db - base.sdr_db).abs() < 1e-9);
            assert!((got.sir_db - base.sir_db).abs() < 1e-9);
            assert!((got.sar_db - base.sar_db).abs() < 1e-9);
        }
    }

    #[test]
    fn added_noise_monotonically_degrades_sdr() {
        let r1 = noise(900, 51);
        let r2 = noise(900, 52);
        let w = noise(900, 53);
        let cfg = DecompositionConfig::with_filter_len(8);
        let mut last = f64::INFINITY;
        for power in [0.01, 0.05, 0.2, 0.8] {
            let est = clip(
                r1.samples()
                    .iter()
                    .zip(w.samples())
                    .map(|(a, b)| a + power * b)
                    .collect(),
            );
            let m = metrics(&decompose(&est, &[&r1, &r2], &cfg).unwrap(), &cfg).unwrap();
            assert!(m.sdr_db < last, "sdr not decreasing at power {power}");
            last = m.sdr_db;
        }
    }
}
