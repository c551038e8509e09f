//! Exact backpropagation through time for the main network, the lambda
//! scaling path, and the auxiliary network.

use ndarray::{s, Array1, Array2, Axis};

use super::forward::{reverse_rows, AuxCache, DirCache, ForwardCache, Mode};
use super::{AuxNetParams, LstmDirParams, ModelParams, NetError};
use crate::dsp::MelSpectrogram;

/// One complete forward pass through aux (optional) and main networks, with
/// everything backward needs.
pub struct ModelPass {
    pub mask: Array2<f64>,
    pub lambda: Option<Array1<f64>>,
    aux_cache: Option<AuxCache>,
    cache: ForwardCache,
}

/// Forward through the full model. `adapt_feats` drives the auxiliary path;
/// it must be present exactly when the variant uses the aux network.
pub fn model_forward(
    model: &ModelParams,
    feats: &Array2<f64>,
    adapt_feats: Option<&Array2<f64>>,
    mode: Mode,
    dropout: f64,
    dropout_seed: u64,
) -> Result<ModelPass, NetError> {
    let (lambda, aux_cache) = match adapt_feats {
        Some(adapt) => {
            let aux = model
                .aux
                .as_ref()
                .ok_or_else(|| NetError::MissingAux(model.variant.to_string()))?;
            let (lambda, cache) = super::aux_forward(aux, adapt)?;
            (Some(lambda), Some(cache))
        }
        None => (None, None),
    };
    let (mask, cache) = super::forward(
        &model.main,
        feats,
        lambda.as_ref(),
        mode,
        dropout,
        dropout_seed,
    )?;
    Ok(ModelPass {
        mask,
        lambda,
        aux_cache,
        cache,
    })
}

/// Backpropagate `dmask` through a recorded pass. Returns gradients in a
/// parameter-shaped container. Auxiliary gradients are exactly zero when the
/// pass ran without the lambda path.
pub fn backward(
    model: &ModelParams,
    feats: &Array2<f64>,
    adapt_feats: Option<&Array2<f64>>,
    pass: &ModelPass,
    dmask: &Array2<f64>,
) -> Result<ModelParams, NetError> {
    if dmask.dim() != pass.mask.dim() {
        return Err(NetError::ShapeMismatch(format!(
            "dmask {:?} vs mask {:?}",
            dmask.dim(),
            pass.mask.dim()
        )));
    }
    let dims = model.main.dims;
    let mut grads = model.zeros_like();

    // output layer: mask = sigmoid(a_last . W^T + b)
    let dz_out = ndarray::Zip::from(dmask)
        .and(&pass.mask)
        .map_collect(|&d, &m| d * m * (1.0 - m));
    let last = pass
        .cache
        .layers
        .last()
        .expect("network has at least one layer");
    grads.main.out.w = dz_out.t().dot(&last.dense_out);
    grads.main.out.b = dz_out.sum_axis(Axis(0));
    let mut da = dz_out.dot(&model.main.out.w); // N x P

    let mut dlambda: Option<Array1<f64>> = None;
    for l in (0..model.main.layers.len()).rev() {
        let (blstm, dense) = &model.main.layers[l];
        let cache = &pass.cache.layers[l];
        let layer_input: &Array2<f64> = if l == 0 {
            feats
        } else {
            &pass.cache.layers[l - 1].dense_out
        };

        // dense projection with tanh
        let dz = ndarray::Zip::from(&da)
            .and(&cache.dense_out)
            .map_collect(|&d, &a| d * (1.0 - a * a));
        grads.main.layers[l].1.w = dz.t().dot(&cache.dense_in);
        grads.main.layers[l].1.b = dz.sum_axis(Axis(0));
        let dw = dz.dot(&dense.w); // N x 2H

        let dv = match &cache.drop_mask {
            Some(mask) => &dw * mask,
            None => dw,
        };
        let du = if l == 0 {
            if let Some(lambda) = &pass.lambda {
                // dv flows into both lambda and the unscaled concat outputs
                let mut dl = Array1::<f64>::zeros(2 * dims.hidden);
                for (dv_row, u_row) in dv.rows().into_iter().zip(cache.concat.rows()) {
                    ndarray::Zip::from(&mut dl).and(&dv_row).and(&u_row).for_each(
                        |acc, &d, &u| *acc += d * u,
                    );
                }
                dlambda = Some(dl);
                let mut du = dv;
                for mut row in du.rows_mut() {
                    row.zip_mut_with(lambda, |v, &s| *v *= s);
                }
                du
            } else {
                dv
            }
        } else {
            dv
        };

        let dh_fwd = du.slice(s![.., ..dims.hidden]).to_owned();
        let dh_bwd_scan = reverse_rows(&du.slice(s![.., dims.hidden..]).to_owned());
        let x_fwd = layer_input;
        let x_bwd = reverse_rows(layer_input);

        let (g_fwd, dx_fwd) = lstm_dir_backward(&blstm.fwd, &cache.fwd, x_fwd, &dh_fwd);
        let (g_bwd, dx_bwd_scan) = lstm_dir_backward(&blstm.bwd, &cache.bwd, &x_bwd, &dh_bwd_scan);
        grads.main.layers[l].0.fwd = g_fwd;
        grads.main.layers[l].0.bwd = g_bwd;
        da = dx_fwd + reverse_rows(&dx_bwd_scan);
    }

    // lambda path into the auxiliary network
    if let (Some(dl), Some(adapt), Some(aux), Some(aux_cache), Some(g_aux)) = (
        &dlambda,
        adapt_feats,
        model.aux.as_ref(),
        pass.aux_cache.as_ref(),
        grads.aux.as_mut(),
    ) {
        aux_backward(aux, aux_cache, adapt, dl, g_aux);
    }

    if let Some((name, index)) = grads.find_non_finite() {
        return Err(NetError::NonFinite(format!("gradient {name}[{index}]")));
    }
    Ok(grads)
}

/// BPTT for one LSTM direction (everything in scan order).
fn lstm_dir_backward(
    p: &LstmDirParams,
    cache: &DirCache,
    x_scan: &Array2<f64>,
    dh_post: &Array2<f64>,
) -> (LstmDirParams, Array2<f64>) {
    let n = x_scan.nrows();
    let h_dim = p.w_hh.ncols();
    let mut dpre_all = Array2::<f64>::zeros((n, 4 * h_dim));
    let mut dh_carry = Array1::<f64>::zeros(h_dim);
    let mut dc_carry = Array1::<f64>::zeros(h_dim);
    for t in (0..n).rev() {
        let gates = cache.gates.row(t);
        for k in 0..h_dim {
            let i = gates[k];
            let f = gates[h_dim + k];
            let g = gates[2 * h_dim + k];
            let o = gates[3 * h_dim + k];
            let tc = cache.tanh_c[[t, k]];
            let dh = dh_post[[t, k]] + dh_carry[k];
            let do_ = dh * tc;
            let dc = dc_carry[k] + dh * o * (1.0 - tc * tc);
            let c_prev = if t > 0 { cache.c[[t - 1, k]] } else { 0.0 };
            let di = dc * g;
            let df = dc * c_prev;
            let dg = dc * i;
            dc_carry[k] = dc * f;
            dpre_all[[t, k]] = di * i * (1.0 - i);
            dpre_all[[t, h_dim + k]] = df * f * (1.0 - f);
            dpre_all[[t, 2 * h_dim + k]] = dg * (1.0 - g * g);
            dpre_all[[t, 3 * h_dim + k]] = do_ * o * (1.0 - o);
        }
        dh_carry = p.w_hh.t().dot(&dpre_all.row(t));
    }

    // batched weight gradients
    let mut h_prev = Array2::<f64>::zeros((n, h_dim));
    for t in 1..n {
        h_prev.row_mut(t).assign(&cache.h.row(t - 1));
    }
    let grads = LstmDirParams {
        w_ih: dpre_all.t().dot(x_scan),
        w_hh: dpre_all.t().dot(&h_prev),
        bias: dpre_all.sum_axis(Axis(0)),
    };
    let dx = dpre_all.dot(&p.w_ih);
    (grads, dx)
}

fn aux_backward(
    aux: &AuxNetParams,
    cache: &AuxCache,
    adapt_feats: &Array2<f64>,
    dlambda: &Array1<f64>,
    grads: &mut AuxNetParams,
) {
    let n_a = adapt_feats.nrows() as f64;
    // lambda is the mean over frames: every frame output gets dlambda / N_a
    let dout_row = dlambda.mapv(|v| v / n_a);
    let mut dout = Array2::<f64>::zeros((adapt_feats.nrows(), dlambda.len()));
    for mut row in dout.rows_mut() {
        row.assign(&dout_row);
    }
    grads.out.w = dout.t().dot(&cache.r2);
    grads.out.b = dout.sum_axis(Axis(0));
    let dr2 = dout.dot(&aux.out.w);
    let dz2 = ndarray::Zip::from(&dr2)
        .and(&cache.r2)
        .map_collect(|&d, &r| if r > 0.0 { d } else { 0.0 });
    grads.d2.w = dz2.t().dot(&cache.r1);
    grads.d2.b = dz2.sum_axis(Axis(0));
    let dr1 = dz2.dot(&aux.d2.w);
    let dz1 = ndarray::Zip::from(&dr1)
        .and(&cache.r1)
        .map_collect(|&d, &r| if r > 0.0 { d } else { 0.0 });
    grads.d1.w = dz1.t().dot(adapt_feats);
    grads.d1.b = dz1.sum_axis(Axis(0));
}

/// Forward, loss, and gradients in one call. `scale` multiplies the loss
/// gradient (for batch averaging and short-segment reweighting); the
/// returned loss is unscaled.
#[allow(clippy::too_many_arguments)]
pub fn loss_grad(
    model: &ModelParams,
    feats: &Array2<f64>,
    adapt_feats: Option<&Array2<f64>>,
    mix_mel: &MelSpectrogram,
    fg_mel: &MelSpectrogram,
    dropout: f64,
    dropout_seed: u64,
    scale: f64,
) -> Result<(f64, ModelParams), NetError> {
    let pass = model_forward(model, feats, adapt_feats, Mode::Train, dropout, dropout_seed)?;
    let loss = super::loss(&pass.mask, mix_mel, fg_mel)?;
    if !loss.is_finite() {
        return Err(NetError::NonFinite("loss".into()));
    }
    let dmask = ndarray::Zip::from(&pass.mask)
        .and(&mix_mel.values)
        .and(&fg_mel.values)
        .map_collect(|&m, &x, &f| 2.0 * (m * x - f) * x * scale);
    let grads = backward(model, feats, adapt_feats, &pass, &dmask)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{MaskNetParams, NetDims, SizeProfile, Variant};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> NetDims {
        NetDims { layers: 2, hidden: 5, projection: 7, n_mels: 6 }
    }

    fn tiny_model(variant: Variant, seed: u64) -> ModelParams {
        let dims = tiny_dims();
        ModelParams {
            main: MaskNetParams::init(dims, seed),
            aux: variant.uses_aux().then(|| AuxNetParams::init(dims, seed + 1)),
            variant,
            profile: SizeProfile::Desk,
        }
    }

    fn toy(n: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, cols), |_| rng.random_range(lo..hi))
    }

    struct Problem {
        feats: Array2<f64>,
        adapt: Option<Array2<f64>>,
        mix: MelSpectrogram,
        fg: MelSpectrogram,
        dropout: f64,
        dropout_seed: u64,
    }

    impl Problem {
        fn new(model: &ModelParams, dropout: f64) -> Self {
            let frames = 4;
            // ReLU kinks break finite differences: screen adaptation draws
            // so every aux pre-activation stays clear of zero.
            // the h=1e-4 step can move a pre-activation by at most about
            // 2e-4, so 5e-4 of clearance keeps every difference one-sided
            let adapt = model.aux.as_ref().map(|aux| {
                (0u64..256)
                    .map(|s| toy(3, 6, 101 + s, -1.0, 1.0))
                    .find(|cand| {
                        let mut z1 = cand.dot(&aux.d1.w.t());
                        for mut row in z1.rows_mut() {
                            row += &aux.d1.b;
                        }
                        let r1 = z1.mapv(|v| v.max(0.0));
                        let mut z2 = r1.dot(&aux.d2.w.t());
                        for mut row in z2.rows_mut() {
                            row += &aux.d2.b;
                        }
                        z1.iter().chain(z2.iter()).all(|v| v.abs() > 5e-4)
                    })
                    .expect("kink-free adaptation draw")
            });
            Self {
                feats: toy(frames, 6, 100, -1.5, 1.5),
                adapt,
                mix: MelSpectrogram { values: toy(frames, 6, 102, 0.0, 2.0) },
                fg: MelSpectrogram { values: toy(frames, 6, 103, 0.0, 1.0) },
                dropout,
                dropout_seed: 42,
            }
        }

        fn eval(&self, model: &ModelParams) -> f64 {
            let pass = model_forward(
                model,
                &self.feats,
                self.adapt.as_ref(),
                Mode::Train,
                self.dropout,
                self.dropout_seed,
            )
            .unwrap();
            crate::net::loss(&pass.mask, &self.mix, &self.fg).unwrap()
        }

        fn grads(&self, model: &ModelParams) -> ModelParams {
            loss_grad(
                model,
                &self.feats,
                self.adapt.as_ref(),
                &self.mix,
                &self.fg,
                self.dropout,
                self.dropout_seed,
                1.0,
            )
            .unwrap()
            .1
        }
    }

    fn nudge(model: &mut ModelParams, tensor: usize, index: usize, delta: f64) {
        let mut tensors = model.named_tensors_mut();
        let slice = tensors[tensor].1.as_slice_mut().expect("standard layout");
        slice[index] += delta;
    }

    /// Central finite differences against analytic gradients, every entry of
    /// every tensor.
    fn check_all_gradients(mut model: ModelParams, problem: &Problem) {
        let analytic = problem.grads(&model);
        let names: Vec<String> = analytic.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let flat: Vec<Vec<f64>> = analytic
            .named_tensors()
            .iter()
            .map(|(_, v)| v.iter().cloned().collect())
            .collect();
        let h = 1e-4;
        for t in 0..names.len() {
            for i in 0..flat[t].len() {
                nudge(&mut model, t, i, h);
                let up = problem.eval(&model);
                nudge(&mut model, t, i, -2.0 * h);
                let down = problem.eval(&model);
                nudge(&mut model, t, i, h);
                let fd = (up - down) / (2.0 * h);
                let an = flat[t][i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "{}[{i}]: analytic {an:.9e} vs fd {fd:.9e} (rel {rel:.3e})",
                    names[t]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_without_aux() {
        let model = tiny_model(Variant::M1, 1);
        let problem = Problem::new(&model, 0.0);
        check_all_gradients(model, &problem);
    }

    #[test]
    fn gradients_match_finite_differences_with_aux() {
        let model = tiny_model(Variant::M1Plus, 2);
        let problem = Problem::new(&model, 0.0);
        check_all_gradients(model, &problem);
    }

    #[test]
    fn gradients_match_finite_differences_under_fixed_dropout() {
        // dropout masks depend only on the seed, so the loss is still a
        // deterministic differentiable function of the parameters
        let model = tiny_model(Variant::M2Plus, 3);
        let problem = Problem::new(&model, 0.3);
        check_all_gradients(model, &problem);
    }

    #[test]
    fn zero_loss_configuration_has_zero_gradients() {
        let model = tiny_model(Variant::M1, 4);
        let feats = toy(5, 6, 200, -1.0, 1.0);
        let mix = MelSpectrogram { values: toy(5, 6, 201, 0.0, 2.0) };
        let pass = model_forward(&model, &feats, None, Mode::Eval, 0.0, 0).unwrap();
        // choose the target so the current mask is exactly optimal
        let fg = MelSpectrogram { values: &pass.mask * &mix.values };
        let (loss, grads) = loss_grad(&model, &feats, None, &mix, &fg, 0.0, 0, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        for (name, view) in grads.named_tensors() {
            assert!(view.iter().all(|&v| v == 0.0), "{name} not zero");
        }
    }

    #[test]
    fn aux_gradients_are_exactly_zero_when_lambda_is_disabled() {
        // aux parameters exist but the pass runs without an adaptation input
        let model = tiny_model(Variant::M1Plus, 5);
        let mut no_aux = model.clone();
        no_aux.aux = None;
        let problem = Problem::new(&no_aux, 0.0);
        let grads = problem.grads(&model);
        let aux = grads.aux.expect("aux grads allocated");
        for d in [&aux.d1, &aux.d2, &aux.out] {
            assert!(d.w.iter().all(|&v| v == 0.0));
            assert!(d.b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_rejects_mismatched_dmask() {
        let model = tiny_model(Variant::M1, 6);
        let feats = toy(4, 6, 300, -1.0, 1.0);
        let pass = model_forward(&model, &feats, None, Mode::Eval, 0.0, 0).unwrap();
        let bad = Array2::zeros((2, 6));
        assert!(matches!(
            backward(&model, &feats, None, &pass, &bad),
            Err(NetError::ShapeMismatch(_))
        ));
    }
}
