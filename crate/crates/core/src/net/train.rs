//! Seeded, single-threaded training over a generated dataset.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, loss_grad, AdamConfig, AdamState, Mode, ModelParams, NetError, SizeProfile, Variant,
};
use crate::dsp::{Frontend, MelSpectrogram};
use crate::scene::{DatasetManifest, ManifestRecord, Split};
use crate::seed;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub variant: Variant,
    pub profile: SizeProfile,
    pub adam: AdamConfig,
    /// Training segment length in frames (shorter scenes are used whole and
    /// reweighted per frame).
    pub segment_frames: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(variant: Variant, profile: SizeProfile) -> Self {
        Self {
            variant,
            profile,
            adam: AdamConfig::default(),
            segment_frames: 170,
            dropout: 0.2,
            epochs: 10,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Per-epoch losses, in per-frame units so scene and segment lengths do not
/// change the scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters at the best validation epoch.
    pub model: ModelParams,
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Precomputed per-scene tensors, kept in memory across epochs.
pub struct SceneFeatures {
    pub feats: Array2<f64>,
    pub mix_mel: MelSpectrogram,
    pub fg_mel: MelSpectrogram,
    pub adapt_feats: Option<Array2<f64>>,
}

/// Read one scene's audio and compute the tensors training needs. The
/// adaptation features are computed only for aux-conditioned variants, in
/// the variant's feature mode.
pub fn load_scene_features(
    record: &ManifestRecord,
    manifest: &DatasetManifest,
    frontend: &Frontend,
    variant: Variant,
) -> Result<SceneFeatures, NetError> {
    let mode = variant.feature_mode();
    let mix = crate::audio::read_wav(&manifest.resolve(&record.mix_path))?;
    let fg = crate::audio::read_wav(&manifest.resolve(&record.fg_path))?;
    let mix_mel = frontend.mel_of(&mix)?;
    let fg_mel = frontend.mel_of(&fg)?;
    let feats = frontend.features(&mix_mel, mode);
    let adapt_feats = if variant.uses_aux() {
        let adapt = crate::audio::read_wav(&manifest.resolve(&record.adapt_path))?;
        Some(frontend.features(&frontend.mel_of(&adapt)?, mode))
    } else {
        None
    };
    Ok(SceneFeatures { feats, mix_mel, fg_mel, adapt_feats })
}

fn crop(scene: &SceneFeatures, offset: usize, len: usize) -> SceneFeatures {
    let slice = |m: &Array2<f64>| m.slice(ndarray::s![offset..offset + len, ..]).to_owned();
    SceneFeatures {
        feats: slice(&scene.feats),
        mix_mel: MelSpectrogram { values: slice(&scene.mix_mel.values) },
        fg_mel: MelSpectrogram { values: slice(&scene.fg_mel.values) },
        adapt_feats: scene.adapt_feats.clone(),
    }
}

fn accumulate(dst: &mut ModelParams, src: &ModelParams) {
    let mut d = dst.named_tensors_mut();
    let s = src.named_tensors();
    for i in 0..d.len() {
        let dv = d[i].1.as_slice_mut().expect("standard layout");
        let sv = s[i].1.as_slice().expect("standard layout");
        for k in 0..dv.len() {
            dv[k] += sv[k];
        }
    }
}

/// Mean per-frame validation loss in eval mode (no dropout).
fn validation_loss(model: &ModelParams, scenes: &[SceneFeatures]) -> Result<f64, NetError> {
    let mut total = 0.0;
    let mut frames = 0usize;
    for scene in scenes {
        let pass = super::backward::model_forward(
            model,
            &scene.feats,
            scene.adapt_feats.as_ref(),
            Mode::Eval,
            0.0,
            0,
        )?;
        total += super::loss(&pass.mask, &scene.mix_mel, &scene.fg_mel)?;
        frames += scene.feats.nrows();
    }
    Ok(total / frames.max(1) as f64)
}

/// Train a variant on the manifest's train split, validating each epoch and
/// retaining the best-validation parameters. Fixed seeds give bit-identical
/// trajectories.
pub fn train(
    manifest: &DatasetManifest,
    frontend: &Frontend,
    cfg: &TrainConfig,
) -> Result<TrainOutput, NetError> {
    let train_recs = manifest.split(Split::Train);
    let val_recs = manifest.split(Split::Val);
    if train_recs.is_empty() {
        return Err(NetError::EmptySplit("train"));
    }
    if val_recs.is_empty() {
        return Err(NetError::EmptySplit("val"));
    }

    let train_scenes: Vec<SceneFeatures> = train_recs
        .iter()
        .map(|r| load_scene_features(r, manifest, frontend, cfg.variant))
        .collect::<Result<_, _>>()?;
    let val_scenes: Vec<SceneFeatures> = val_recs
        .iter()
        .map(|r| load_scene_features(r, manifest, frontend, cfg.variant))
        .collect::<Result<_, _>>()?;

    let mut model = ModelParams::init(
        cfg.variant,
        cfg.profile,
        frontend.config.n_mels,
        seed::derive(cfg.seed, "init", 0),
    );
    let mut state = AdamState::new(&model);

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut visit: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_frames = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grads = model.zeros_like();
            for &idx in batch {
                let scene = &train_scenes[idx];
                let n = scene.feats.nrows();
                let seg = cfg.segment_frames.min(n);
                let offset = if n > seg {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "crop", visit));
                    rng.random_range(0..=n - seg)
                } else {
                    0
                };
                // short scenes count per frame like a full segment would
                let reweight = cfg.segment_frames as f64 / seg as f64;
                let scale = reweight / batch.len() as f64;
                let cropped = crop(scene, offset, seg);
                let (loss, scene_grads) = loss_grad(
                    &model,
                    &cropped.feats,
                    cropped.adapt_feats.as_ref(),
                    &cropped.mix_mel,
                    &cropped.fg_mel,
                    cfg.dropout,
                    seed::derive(cfg.seed, "drop", visit),
                    scale,
                )?;
                accumulate(&mut grads, &scene_grads);
                epoch_loss += loss * reweight;
                epoch_frames += cfg.segment_frames;
                visit += 1;
            }
            adam_step(&mut model, &grads, &mut state, &cfg.adam);
        }

        let train_loss = epoch_loss / epoch_frames.max(1) as f64;
        let val_loss = validation_loss(&model, &val_scenes)?;
        curve.push(EpochStats { epoch, train_loss, val_loss });
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, model.clone()));
        }
    }

    let (best_epoch, _, best_model) = best.expect("at least one epoch");
    Ok(TrainOutput { model: best_model, curve, best_epoch })
}
