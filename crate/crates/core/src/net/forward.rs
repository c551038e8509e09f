//! Forward passes for the main and auxiliary networks, plus the masking
//! loss. Forward passes record the activations that backpropagation needs.

use ndarray::{s, Array1, Array2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AuxNetParams, LstmDirParams, MaskNetParams, NetError};
use crate::dsp::MelSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one LSTM direction, rows in scan order.
#[derive(Debug, Clone)]
pub(crate) struct DirCache {
    /// Post-activation gates `[i|f|g|o]`, `N x 4H`.
    pub gates: Array2<f64>,
    /// Cell states, `N x H`.
    pub c: Array2<f64>,
    /// `tanh(c)`, `N x H`.
    pub tanh_c: Array2<f64>,
    /// Hidden states, `N x H`.
    pub h: Array2<f64>,
}

/// Run one LSTM direction over `x` (rows already in scan order).
pub(crate) fn lstm_scan(p: &LstmDirParams, x: &Array2<f64>) -> DirCache {
    let n = x.nrows();
    let h_dim = p.w_hh.ncols();
    let xw = x.dot(&p.w_ih.t()); // N x 4H
    let mut gates = Array2::zeros((n, 4 * h_dim));
    let mut c = Array2::zeros((n, h_dim));
    let mut tanh_c = Array2::zeros((n, h_dim));
    let mut h = Array2::zeros((n, h_dim));
    let mut h_prev = Array1::<f64>::zeros(h_dim);
    let mut c_prev = Array1::<f64>::zeros(h_dim);
    for t in 0..n {
        let mut pre = p.w_hh.dot(&h_prev) + &p.bias;
        pre += &xw.row(t);
        for k in 0..h_dim {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[h_dim + k]);
            let g = pre[2 * h_dim + k].tanh();
            let o = sigmoid(pre[3 * h_dim + k]);
            let ck = f * c_prev[k] + i * g;
            let tck = ck.tanh();
            gates[[t, k]] = i;
            gates[[t, h_dim + k]] = f;
            gates[[t, 2 * h_dim + k]] = g;
            gates[[t, 3 * h_dim + k]] = o;
            c[[t, k]] = ck;
            tanh_c[[t, k]] = tck;
            h[[t, k]] = o * tck;
        }
        h_prev.assign(&h.row(t));
        c_prev.assign(&c.row(t));
    }
    DirCache { gates, c, tanh_c, h }
}

/// Per-layer activations kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub fwd: DirCache,
    /// Backward direction, rows in its own scan order (reversed frames).
    pub bwd: DirCache,
    /// Concatenated hidden states in frame order (`N x 2H`), before any
    /// lambda scaling or dropout.
    pub concat: Array2<f64>,
    /// Inverted dropout mask applied to the dense input; `None` in eval
    /// mode or at rate 0.
    pub drop_mask: Option<Array2<f64>>,
    /// Input handed to the dense projection (post-lambda, post-dropout).
    pub dense_in: Array2<f64>,
    /// tanh output of the dense projection (`N x P`), the next layer input.
    pub dense_out: Array2<f64>,
}

/// Everything backpropagation needs from one main-network forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) layers: Vec<LayerCache>,
}

/// Main network forward pass.
///
/// `lambda`, when present, scales the first BLSTM layer's concatenated
/// outputs elementwise. Dropout is applied to the recurrent outputs only in
/// train mode, with inverted scaling, and its masks are derived from
/// `dropout_seed` alone so a fixed seed gives a deterministic function of
/// the parameters.
pub fn forward(
    params: &MaskNetParams,
    feats: &Array2<f64>,
    lambda: Option<&Array1<f64>>,
    mode: Mode,
    dropout: f64,
    dropout_seed: u64,
) -> Result<(Array2<f64>, ForwardCache), NetError> {
    let dims = params.dims;
    if feats.ncols() != dims.n_mels {
        return Err(NetError::ShapeMismatch(format!(
            "features have {} bands, network expects {}",
            feats.ncols(),
            dims.n_mels
        )));
    }
    if feats.nrows() == 0 {
        return Err(NetError::ShapeMismatch("features have no frames".into()));
    }
    if let Some(l) = lambda {
        if l.len() != 2 * dims.hidden {
            return Err(NetError::LambdaWidth {
                expected: 2 * dims.hidden,
                got: l.len(),
            });
        }
    }
    let n = feats.nrows();
    let apply_dropout = mode == Mode::Train && dropout > 0.0;

    let mut layers = Vec::with_capacity(dims.layers);
    let mut input = feats.clone();
    for (l, (blstm, dense)) in params.layers.iter().enumerate() {
        let reversed = reverse_rows(&input);
        let fwd = lstm_scan(&blstm.fwd, &input);
        let bwd = lstm_scan(&blstm.bwd, &reversed);

        let mut concat = Array2::zeros((n, 2 * dims.hidden));
        concat.slice_mut(s![.., ..dims.hidden]).assign(&fwd.h);
        concat
            .slice_mut(s![.., dims.hidden..])
            .assign(&reverse_rows(&bwd.h));

        let mut dense_in = concat.clone();
        if l == 0 {
            if let Some(lam) = lambda {
                for mut row in dense_in.rows_mut() {
                    row.zip_mut_with(lam, |v, &s| *v *= s);
                }
            }
        }
        let drop_mask = if apply_dropout {
            let mut rng =
                ChaCha8Rng::seed_from_u64(crate::seed::derive(dropout_seed, "dropout-layer", l as u64));
            let keep = 1.0 - dropout;
            let mask = Array2::from_shape_fn((n, 2 * dims.hidden), |_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            dense_in *= &mask;
            Some(mask)
        } else {
            None
        };

        let mut dense_out = dense_in.dot(&dense.w.t());
        for mut row in dense_out.rows_mut() {
            row += &dense.b;
        }
        dense_out.mapv_inplace(f64::tanh);

        let next_input = dense_out.clone();
        layers.push(LayerCache {
            fwd,
            bwd,
            concat,
            drop_mask,
            dense_in,
            dense_out,
        });
        input = next_input;
    }

    let mut mask = input.dot(&params.out.w.t());
    for mut row in mask.rows_mut() {
        row += &params.out.b;
    }
    mask.mapv_inplace(sigmoid);

    if mask.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFinite("mask activation".into()));
    }
    Ok((mask, ForwardCache { layers }))
}

pub(crate) fn reverse_rows(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut out = Array2::zeros(m.raw_dim());
    for t in 0..n {
        out.row_mut(t).assign(&m.row(n - 1 - t));
    }
    out
}

/// Auxiliary-network activations for backpropagation.
#[derive(Debug, Clone)]
pub struct AuxCache {
    pub(crate) r1: Array2<f64>,
    pub(crate) r2: Array2<f64>,
}

/// Summarize an adaptation feature matrix (`N_a x F'`) into the scaling
/// vector: per-frame transform through two ReLU layers and a linear output,
/// then the arithmetic mean over frames.
pub fn aux_forward(aux: &AuxNetParams, adapt_feats: &Array2<f64>) -> Result<(Array1<f64>, AuxCache), NetError> {
    if adapt_feats.nrows() == 0 {
        return Err(NetError::EmptyAdaptation);
    }
    if adapt_feats.ncols() != aux.d1.w.ncols() {
        return Err(NetError::ShapeMismatch(format!(
            "adaptation features have {} bands, aux expects {}",
            adapt_feats.ncols(),
            aux.d1.w.ncols()
        )));
    }
    let mut r1 = adapt_feats.dot(&aux.d1.w.t());
    for mut row in r1.rows_mut() {
        row += &aux.d1.b;
    }
    r1.mapv_inplace(|v| v.max(0.0));
    let mut r2 = r1.dot(&aux.d2.w.t());
    for mut row in r2.rows_mut() {
        row += &aux.d2.b;
    }
    r2.mapv_inplace(|v| v.max(0.0));
    let mut out = r2.dot(&aux.out.w.t());
    for mut row in out.rows_mut() {
        row += &aux.out.b;
    }
    let lambda = out.mean_axis(ndarray::Axis(0)).expect("N_a >= 1");
    Ok((lambda, AuxCache { r1, r2 }))
}

/// Squared Frobenius norm of `mask (.) mix_mel - fg_mel`, summed over the
/// segment.
pub fn loss(mask: &Array2<f64>, mix_mel: &MelSpectrogram, fg_mel: &MelSpectrogram) -> Result<f64, NetError> {
    if mask.dim() != mix_mel.values.dim() || mask.dim() != fg_mel.values.dim() {
        return Err(NetError::ShapeMismatch(format!(
            "mask {:?}, mixture {:?}, target {:?}",
            mask.dim(),
            mix_mel.values.dim(),
            fg_mel.values.dim()
        )));
    }
    let mut acc = 0.0;
    ndarray::Zip::from(mask)
        .and(&mix_mel.values)
        .and(&fg_mel.values)
        .for_each(|&m, &x, &f| {
            let d = m * x - f;
            acc += d * d;
        });
    Ok(acc)
}
