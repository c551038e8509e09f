//! Mask-estimation networks: a stacked bidirectional LSTM with per-layer
//! dense projections, an optional sequence-summarizing auxiliary network,
//! the masking loss, exact backpropagation through time, and Adam training.
//!
//! The main network maps `N x F'` features to an `N x F'` Mel mask through
//! a stack of BLSTM layers, each followed by a tanh dense projection, and a
//! final sigmoid dense layer. When the auxiliary path is active, its output
//! vector scales the first BLSTM layer's concatenated outputs elementwise.
//! Everything runs in f64 and single-threaded; fixed seeds give
//! bit-identical trajectories.

mod adam;
mod backward;
mod checkpoint;
mod forward;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{backward, loss_grad, model_forward, ModelPass};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use forward::{aux_forward, forward, loss, AuxCache, ForwardCache, Mode};
pub use train::{train, EpochStats, SceneFeatures, TrainConfig, TrainOutput};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::FeatureMode;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("adaptation vector has width {got}, layer 1 outputs {expected}")]
    LambdaWidth { expected: usize, got: usize },
    #[error("adaptation input is empty")]
    EmptyAdaptation,
    #[error("variant {0} requires auxiliary parameters")]
    MissingAux(String),
    #[error("variant {0} requires an adaptation segment")]
    MissingAdaptation(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("corrupt checkpoint {path}: {detail}")]
    CorruptCheckpoint { path: PathBuf, detail: String },
    #[error("variant mismatch: checkpoint holds {found}, expected {expected}")]
    VariantMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
}

/// Model variants: feature frontend x auxiliary conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    M1,
    M1Plus,
    M2,
    M2Plus,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::M1, Variant::M1Plus, Variant::M2, Variant::M2Plus];

    pub fn feature_mode(self) -> FeatureMode {
        match self {
            Variant::M1 | Variant::M1Plus => FeatureMode::LogMel,
            Variant::M2 | Variant::M2Plus => FeatureMode::Pcen,
        }
    }

    pub fn uses_aux(self) -> bool {
        matches!(self, Variant::M1Plus | Variant::M2Plus)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::M1 => "M1",
            Variant::M1Plus => "M1+",
            Variant::M2 => "M2",
            Variant::M2Plus => "M2+",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "M1" | "m1" => Ok(Variant::M1),
            "M1+" | "m1+" => Ok(Variant::M1Plus),
            "M2" | "m2" => Ok(Variant::M2),
            "M2+" | "m2+" => Ok(Variant::M2Plus),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

/// Architecture size presets. The published configuration is 3 BLSTM layers
/// of 300 units per direction with 256-wide projections; the desk profile
/// shrinks widths so tests and gradient checks run on a workstation without
/// changing the topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeProfile {
    Paper,
    Desk,
}

impl SizeProfile {
    pub fn dims(self, n_mels: usize) -> NetDims {
        match self {
            SizeProfile::Paper => NetDims { layers: 3, hidden: 300, projection: 256, n_mels },
            SizeProfile::Desk => NetDims { layers: 2, hidden: 32, projection: 64, n_mels },
        }
    }
}

impl fmt::Display for SizeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeProfile::Paper => "paper",
            SizeProfile::Desk => "desk",
        })
    }
}

impl FromStr for SizeProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(SizeProfile::Paper),
            "desk" => Ok(SizeProfile::Desk),
            other => Err(format!("unknown size profile {other:?}")),
        }
    }
}

/// Concrete layer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub layers: usize,
    pub hidden: usize,
    pub projection: usize,
    pub n_mels: usize,
}

/// Width of the auxiliary network's two hidden layers.
pub const AUX_WIDTH: usize = 128;

/// Dense layer `y = W x + b`, `W: out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseParams {
    fn zeros(out: usize, input: usize) -> Self {
        Self { w: Array2::zeros((out, input)), b: Array1::zeros(out) }
    }

    fn init(out: usize, input: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / (input as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((out, input), |_| rng.random_range(-a..a)),
            b: Array1::zeros(out),
        }
    }
}

/// One LSTM direction. Gate rows are stacked `[input, forget, cell, output]`
/// in `hidden`-sized chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirParams {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmDirParams {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    fn init(hidden: usize, input: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / (input as f64).sqrt();
        let w_ih = Array2::from_shape_fn((4 * hidden, input), |_| rng.random_range(-a..a));
        let mut w_hh = Array2::zeros((4 * hidden, hidden));
        for gate in 0..4 {
            let block = orthogonal(hidden, rng);
            w_hh
                .slice_mut(ndarray::s![gate * hidden..(gate + 1) * hidden, ..])
                .assign(&block);
        }
        // forget-gate bias starts at 1 so memory persists early in training
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
        Self { w_ih, w_hh, bias }
    }
}

/// Random orthogonal matrix by modified Gram-Schmidt on a Gaussian draw.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let gaussian = |rng: &mut ChaCha8Rng| {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut m = Array2::from_shape_fn((n, n), |_| gaussian(rng));
    for j in 0..n {
        for k in 0..j {
            let proj = m.column(j).dot(&m.column(k));
            let prev = m.column(k).to_owned();
            m.column_mut(j).zip_mut_with(&prev, |a, &b| *a -= proj * b);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        if norm > 1e-12 {
            m.column_mut(j).mapv_inplace(|v| v / norm);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmLayer {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

/// Main mask-estimation network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskNetParams {
    pub layers: Vec<(BlstmLayer, DenseParams)>,
    pub out: DenseParams,
    pub dims: NetDims,
}

impl MaskNetParams {
    pub fn zeros(dims: NetDims) -> Self {
        let layers = (0..dims.layers)
            .map(|l| {
                let input = if l == 0 { dims.n_mels } else { dims.projection };
                (
                    BlstmLayer {
                        fwd: LstmDirParams::zeros(dims.hidden, input),
                        bwd: LstmDirParams::zeros(dims.hidden, input),
                    },
                    DenseParams::zeros(dims.projection, 2 * dims.hidden),
                )
            })
            .collect();
        Self {
            layers,
            out: DenseParams::zeros(dims.n_mels, dims.projection),
            dims,
        }
    }

    pub fn init(dims: NetDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..dims.layers)
            .map(|l| {
                let input = if l == 0 { dims.n_mels } else { dims.projection };
                (
                    BlstmLayer {
                        fwd: LstmDirParams::init(dims.hidden, input, &mut rng),
                        bwd: LstmDirParams::init(dims.hidden, input, &mut rng),
                    },
                    DenseParams::init(dims.projection, 2 * dims.hidden, &mut rng),
                )
            })
            .collect();
        Self {
            layers,
            out: DenseParams::init(dims.n_mels, dims.projection, &mut rng),
            dims,
        }
    }
}

/// Auxiliary sequence-summarizing network: two ReLU dense layers of width
/// [`AUX_WIDTH`] and a linear output matching the first BLSTM layer's
/// concatenated width `2H`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxNetParams {
    pub d1: DenseParams,
    pub d2: DenseParams,
    pub out: DenseParams,
}

impl AuxNetParams {
    pub fn zeros(dims: NetDims) -> Self {
        Self {
            d1: DenseParams::zeros(AUX_WIDTH, dims.n_mels),
            d2: DenseParams::zeros(AUX_WIDTH, AUX_WIDTH),
            out: DenseParams::zeros(2 * dims.hidden, AUX_WIDTH),
        }
    }

    pub fn init(dims: NetDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            d1: DenseParams::init(AUX_WIDTH, dims.n_mels, &mut rng),
            d2: DenseParams::init(AUX_WIDTH, AUX_WIDTH, &mut rng),
            out: DenseParams::init(2 * dims.hidden, AUX_WIDTH, &mut rng),
        }
    }
}

/// Complete trainable state: main network, optional auxiliary network, and
/// the tags that identify the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub main: MaskNetParams,
    pub aux: Option<AuxNetParams>,
    pub variant: Variant,
    pub profile: SizeProfile,
}

impl ModelParams {
    /// Fresh parameters for a variant; the aux network is allocated only
    /// when the variant uses it.
    pub fn init(variant: Variant, profile: SizeProfile, n_mels: usize, seed: u64) -> Self {
        let dims = profile.dims(n_mels);
        Self {
            main: MaskNetParams::init(dims, crate::seed::derive(seed, "main", 0)),
            aux: variant
                .uses_aux()
                .then(|| AuxNetParams::init(dims, crate::seed::derive(seed, "aux", 0))),
            variant,
            profile,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let dims = self.main.dims;
        Self {
            main: MaskNetParams::zeros(dims),
            aux: self.aux.as_ref().map(|_| AuxNetParams::zeros(dims)),
            variant: self.variant,
            profile: self.profile,
        }
    }

    pub fn dims(&self) -> NetDims {
        self.main.dims
    }

    /// All tensors with stable names, in a fixed order shared by
    /// [`Self::named_tensors_mut`], the checkpoint format, and Adam state.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (l, (blstm, dense)) in self.main.layers.iter().enumerate() {
            for (tag, dir) in [("fwd", &blstm.fwd), ("bwd", &blstm.bwd)] {
                out.push((format!("layer{l}.{tag}.w_ih"), dir.w_ih.view().into_dyn()));
                out.push((format!("layer{l}.{tag}.w_hh"), dir.w_hh.view().into_dyn()));
                out.push((format!("layer{l}.{tag}.bias"), dir.bias.view().into_dyn()));
            }
            out.push((format!("layer{l}.dense.w"), dense.w.view().into_dyn()));
            out.push((format!("layer{l}.dense.b"), dense.b.view().into_dyn()));
        }
        out.push(("out.w".into(), self.main.out.w.view().into_dyn()));
        out.push(("out.b".into(), self.main.out.b.view().into_dyn()));
        if let Some(aux) = &self.aux {
            for (tag, d) in [("d1", &aux.d1), ("d2", &aux.d2), ("out", &aux.out)] {
                out.push((format!("aux.{tag}.w"), d.w.view().into_dyn()));
                out.push((format!("aux.{tag}.b"), d.b.view().into_dyn()));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (l, (blstm, dense)) in self.main.layers.iter_mut().enumerate() {
            for (tag, dir) in [("fwd", &mut blstm.fwd), ("bwd", &mut blstm.bwd)] {
                out.push((format!("layer{l}.{tag}.w_ih"), dir.w_ih.view_mut().into_dyn()));
                out.push((format!("layer{l}.{tag}.w_hh"), dir.w_hh.view_mut().into_dyn()));
                out.push((format!("layer{l}.{tag}.bias"), dir.bias.view_mut().into_dyn()));
            }
            out.push((format!("layer{l}.dense.w"), dense.w.view_mut().into_dyn()));
            out.push((format!("layer{l}.dense.b"), dense.b.view_mut().into_dyn()));
        }
        out.push(("out.w".into(), self.main.out.w.view_mut().into_dyn()));
        out.push(("out.b".into(), self.main.out.b.view_mut().into_dyn()));
        if let Some(aux) = &mut self.aux {
            for (tag, d) in [("d1", &mut aux.d1), ("d2", &mut aux.d2), ("out", &mut aux.out)] {
                out.push((format!("aux.{tag}.w"), d.w.view_mut().into_dyn()));
                out.push((format!("aux.{tag}.b"), d.b.view_mut().into_dyn()));
            }
        }
        out
    }

    /// First non-finite tensor entry, as `(tensor name, flat index)`.
    pub fn find_non_finite(&self) -> Option<(String, usize)> {
        for (name, view) in self.named_tensors() {
            if let Some(i) = view.iter().position(|v| !v.is_finite()) {
                return Some((name, i));
            }
        }
        None
    }
}
