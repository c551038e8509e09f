//! Scene synthesis: procedural class pools, SNR-controlled mixing, and
//! dataset generation with seen/unseen evaluation splits.
//!
//! Each scene is one foreground event over one quasi-stationary background.
//! Class pools are split into seen and unseen halves; the evaluation subsets
//! cross them: C1 = seen/seen, C2 = seen fg + unseen bg, C3 = unseen fg +
//! seen bg, C4 = unseen/unseen. Users can substitute real audio for any
//! class through an external pool file (one WAV path per line).

pub mod gen;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioClip, AudioError, WavEncoding};
use crate::seed;
pub use gen::ProcFamily;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("class {0} is not a foreground class")]
    NotForeground(String),
    #[error("class {0} is not a background class")]
    NotBackground(String),
    #[error("silent source: {0} has zero RMS")]
    SilentSource(&'static str),
    #[error("length mismatch: foreground {fg} vs background {bg} samples")]
    LengthMismatch { fg: usize, bg: usize },
    #[error("sample rate mismatch: {a} vs {b} Hz")]
    RateMismatch { a: u32, b: u32 },
    #[error("background too short: {len} samples, need more than {need}")]
    BackgroundTooShort { len: usize, need: usize },
    #[error("no classes available for split {0}")]
    EmptyPool(Split),
    #[error("external pool {path}: {detail}")]
    BadPool { path: PathBuf, detail: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest parse error at line {line}: {detail}")]
    BadManifest { line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Foreground,
    Background,
}

/// How a class produces audio: a procedural family, or a user-supplied pool
/// of WAV files listed one path per line.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Procedural(ProcFamily),
    ExternalPool { list_path: PathBuf },
}

/// A sound class: name, role, seen/unseen flag, and generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundClass {
    pub name: String,
    pub kind: ClassKind,
    pub seen: bool,
    pub generator: Generator,
}

impl SoundClass {
    fn procedural(name: &str, kind: ClassKind, seen: bool, family: ProcFamily) -> Self {
        Self {
            name: name.to_string(),
            kind,
            seen,
            generator: Generator::Procedural(family),
        }
    }
}

/// Dataset split tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Val,
    C1,
    C2,
    C3,
    C4,
}

impl Split {
    pub const ALL: [Split; 6] = [Split::Train, Split::Val, Split::C1, Split::C2, Split::C3, Split::C4];

    /// (foreground seen, background seen) for this split.
    pub fn seen_flags(self) -> (bool, bool) {
        match self {
            Split::Train | Split::Val | Split::C1 => (true, true),
            Split::C2 => (true, false),
            Split::C3 => (false, true),
            Split::C4 => (false, false),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::C1 => "C1",
            Split::C2 => "C2",
            Split::C3 => "C3",
            Split::C4 => "C4",
        };
        f.write_str(s)
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "C1" | "c1" => Ok(Split::C1),
            "C2" | "c2" => Ok(Split::C2),
            "C3" | "c3" => Ok(Split::C3),
            "C4" | "c4" => Ok(Split::C4),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Request for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub fg_class: String,
    pub bg_class: String,
    pub snr_db: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub split: Split,
}

/// A realized mixture. `mixture = foreground + bg_gain * background`
/// elementwise, exactly, in the stored f64 samples.
#[derive(Debug, Clone)]
pub struct SceneMixture {
    pub foreground: AudioClip,
    pub background: AudioClip,
    pub mixture: AudioClip,
    pub snr_db: f64,
    pub bg_gain: f64,
}

/// The class roster used by dataset generation.
#[derive(Debug, Clone)]
pub struct Roster {
    pub classes: Vec<SoundClass>,
}

impl Roster {
    pub fn pool(&self, kind: ClassKind, seen: bool) -> Vec<&SoundClass> {
        self.classes
            .iter()
            .filter(|c| c.kind == kind && c.seen == seen)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<&SoundClass> {
        self.classes.iter().find(|c| c.name == name)
    }
}

/// Built-in roster: 5 seen + 5 unseen foreground classes, 10 seen + 5 unseen
/// background classes. Seen backgrounds are appliance-like; unseen ones are
/// noise colors and rumbles.
pub fn default_roster() -> Roster {
    use ClassKind::{Background as Bg, Foreground as Fg};
    use ProcFamily::*;
    let classes = vec![
        // seen foreground
        SoundClass::procedural("two_tone_alarm", Fg, true, TwoToneAlarm { fa: 880.0, fb: 1320.0, rate_hz: 3.0 }),
        SoundClass::procedural("rising_chirp", Fg, true, LinearChirp { f0: 400.0, f1: 3200.0 }),
        SoundClass::procedural("click_train", Fg, true, ClickTrain { rate_hz: 9.0 }),
        SoundClass::procedural("harmonic_burst", Fg, true, ToneBurst { f0: 330.0, harmonics: 5 }),
        SoundClass::procedural("noise_taps", Fg, true, NoiseBurst { bursts: 3 }),
        // unseen foreground
        SoundClass::procedural("falling_chirp", Fg, false, LinearChirp { f0: 2800.0, f1: 300.0 }),
        SoundClass::procedural("exp_sweep", Fg, false, ExpChirp { f0: 150.0, f1: 4000.0 }),
        SoundClass::procedural("fast_siren", Fg, false, TwoToneAlarm { fa: 600.0, fb: 900.0, rate_hz: 6.0 }),
        SoundClass::procedural("dense_clicks", Fg, false, ClickTrain { rate_hz: 25.0 }),
        SoundClass::procedural("bright_burst", Fg, false, ToneBurst { f0: 990.0, harmonics: 3 }),
        // seen background
        SoundClass::procedural("vacuum_roar", Bg, true, BandNoise { low_hz: 120.0, high_hz: 2600.0 }),
        SoundClass::procedural("fan_drone", Bg, true, BandNoise { low_hz: 60.0, high_hz: 900.0 }),
        SoundClass::procedural("water_rush", Bg, true, BandNoise { low_hz: 500.0, high_hz: 7000.0 }),
        SoundClass::procedural("frying_sizzle", Bg, true, BandNoise { low_hz: 1800.0, high_hz: 9500.0 }),
        SoundClass::procedural("fridge_hum", Bg, true, HumStack { f0: 50.0, harmonics: 5 }),
        SoundClass::procedural("shaver_buzz", Bg, true, HumStack { f0: 130.0, harmonics: 12 }),
        SoundClass::procedural("blender_whine", Bg, true, HumStack { f0: 290.0, harmonics: 9 }),
        SoundClass::procedural("microwave_drone", Bg, true, HumStack { f0: 59.0, harmonics: 7 }),
        SoundClass::procedural("dryer_rumble", Bg, true, AmNoise { depth: 0.08, rate_hz: 0.35, pink: false }),
        SoundClass::procedural("ac_hiss", Bg, true, AmNoise { depth: 0.06, rate_hz: 0.5, pink: false }),
        // unseen background
        SoundClass::procedural("pink_noise", Bg, false, PinkNoise),
        SoundClass::procedural("white_noise", Bg, false, WhiteNoise),
        SoundClass::procedural("broadband_noise", Bg, false, BandNoise { low_hz: 30.0, high_hz: 10_500.0 }),
        SoundClass::procedural("waterfall", Bg, false, AmNoise { depth: 0.05, rate_hz: 0.3, pink: true }),
        SoundClass::procedural("vibration", Bg, false, HumStack { f0: 31.0, harmonics: 3 }),
    ];
    Roster { classes }
}

fn render_class(
    class: &SoundClass,
    seed_value: u64,
    duration_s: f64,
    sample_rate_hz: u32,
) -> Result<AudioClip, SceneError> {
    match &class.generator {
        Generator::Procedural(family) => Ok(gen::render(
            family,
            seed::derive(seed_value, &class.name, 0),
            duration_s,
            sample_rate_hz,
        )),
        Generator::ExternalPool { list_path } => {
            let text = std::fs::read_to_string(list_path).map_err(|source| SceneError::Io {
                path: list_path.clone(),
                source,
            })?;
            let entries: Vec<&str> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect();
            if entries.is_empty() {
                return Err(SceneError::BadPool {
                    path: list_path.clone(),
                    detail: "pool file lists no audio".into(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, &class.name, 1));
            let pick = entries[rng.random_range(0..entries.len())];
            let base = list_path.parent().unwrap_or_else(|| Path::new("."));
            let clip = audio::read_wav(&base.join(pick))?;
            if clip.sample_rate_hz() != sample_rate_hz {
                return Err(SceneError::RateMismatch {
                    a: clip.sample_rate_hz(),
                    b: sample_rate_hz,
                });
            }
            Ok(audio::fit_to_duration(&clip, duration_s)?)
        }
    }
}

/// Render one foreground event, deterministic in `(class, seed)`.
pub fn synth_event(
    class: &SoundClass,
    seed_value: u64,
    duration_s: f64,
    sample_rate_hz: u32,
) -> Result<AudioClip, SceneError> {
    if class.kind != ClassKind::Foreground {
        return Err(SceneError::NotForeground(class.name.clone()));
    }
    render_class(class, seed_value, duration_s, sample_rate_hz)
}

/// Render one background clip, deterministic in `(class, seed)`.
pub fn synth_background(
    class: &SoundClass,
    seed_value: u64,
    duration_s: f64,
    sample_rate_hz: u32,
) -> Result<AudioClip, SceneError> {
    if class.kind != ClassKind::Background {
        return Err(SceneError::NotBackground(class.name.clone()));
    }
    render_class(class, seed_value, duration_s, sample_rate_hz)
}

/// Mix a foreground over a background at the target SNR.
///
/// The background gain is `g = (rms(fg)/rms(bg)) * 10^(-snr/20)` and the
/// foreground level is left alone, so foreground scale is stable across
/// SNRs. If the mixture would clip, all three stored signals are rescaled by
/// the same factor to peak 0.999, which leaves the SNR unchanged. The stored
/// mixture is recomputed as `fg + g*bg` after any rescale so additivity is
/// exact in f64.
pub fn mix_at_snr(fg: &AudioClip, bg: &AudioClip, snr_db: f64) -> Result<SceneMixture, SceneError> {
    if fg.sample_rate_hz() != bg.sample_rate_hz() {
        return Err(SceneError::RateMismatch {
            a: fg.sample_rate_hz(),
            b: bg.sample_rate_hz(),
        });
    }
    if fg.len() != bg.len() {
        return Err(SceneError::LengthMismatch {
            fg: fg.len(),
            bg: bg.len(),
        });
    }
    let fg_rms = audio::rms(fg);
    let bg_rms = audio::rms(bg);
    if fg_rms == 0.0 {
        return Err(SceneError::SilentSource("foreground"));
    }
    if bg_rms == 0.0 {
        return Err(SceneError::SilentSource("background"));
    }
    let bg_gain = (fg_rms / bg_rms) * 10f64.powf(-snr_db / 20.0);

    let mut fg_s = fg.samples().to_vec();
    let mut bg_s = bg.samples().to_vec();
    let mix_peak = fg_s
        .iter()
        .zip(&bg_s)
        .fold(0.0f64, |p, (a, b)| p.max((a + bg_gain * b).abs()));
    if mix_peak > 1.0 {
        let scale = 0.999 / mix_peak;
        for s in fg_s.iter_mut() {
            *s *= scale;
        }
        for s in bg_s.iter_mut() {
            *s *= scale;
        }
    }
    let mix_s: Vec<f64> = fg_s
        .iter()
        .zip(&bg_s)
        .map(|(a, b)| a + bg_gain * b)
        .collect();
    let rate = fg.sample_rate_hz();
    Ok(SceneMixture {
        foreground: AudioClip::new(fg_s, rate)?,
        background: AudioClip::new(bg_s, rate)?,
        mixture: AudioClip::new(mix_s, rate)?,
        snr_db,
        bg_gain,
    })
}

/// Seeded contiguous crop of a background clip, used as the adaptation
/// segment summarizing background statistics.
pub fn carve_adaptation_segment(
    bg: &AudioClip,
    seconds: f64,
    seed_value: u64,
) -> Result<AudioClip, SceneError> {
    let want = (seconds * f64::from(bg.sample_rate_hz())).round() as usize;
    if want == 0 || want >= bg.len() {
        return Err(SceneError::BackgroundTooShort {
            len: bg.len(),
            need: want,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let start = rng.random_range(0..=(bg.len() - want));
    Ok(AudioClip::new(
        bg.samples()[start..start + want].to_vec(),
        bg.sample_rate_hz(),
    )?)
}

/// Per-scene record in the dataset manifest. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub fg_class: String,
    pub bg_class: String,
    pub snr_db: f64,
    pub bg_gain: f64,
    pub fg_path: String,
    pub bg_path: String,
    pub mix_path: String,
    pub adapt_path: String,
    pub seed: u64,
}

/// Manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Load a JSON-lines manifest written by [`generate_dataset`].
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord =
                serde_json::from_str(line).map_err(|e| SceneError::BadManifest {
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            records.push(rec);
        }
        let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(Self { records, root })
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("manifest records serialize"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| SceneError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Scene counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
}

impl SplitCounts {
    pub fn of(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::C1 => self.c1,
            Split::C2 => self.c2,
            Split::C3 => self.c3,
            Split::C4 => self.c4,
        }
    }

    pub fn total(&self) -> usize {
        Split::ALL.iter().map(|&s| self.of(s)).sum()
    }
}

/// Dataset generation settings.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub counts: SplitCounts,
    pub duration_s: f64,
    pub adapt_s: f64,
    pub sample_rate_hz: u32,
    pub snr_range_db: (f64, f64),
    pub master_seed: u64,
    pub encoding: WavEncoding,
}

impl DatasetConfig {
    pub fn new(counts: SplitCounts, sample_rate_hz: u32, master_seed: u64) -> Self {
        Self {
            counts,
            duration_s: 2.0,
            adapt_s: 1.0,
            sample_rate_hz,
            snr_range_db: (-3.0, 3.0),
            master_seed,
            encoding: WavEncoding::Float32,
        }
    }
}

/// Generate all scenes and write audio plus a JSON-lines manifest under
/// `out_dir`. Per-scene seeds derive from `(master_seed, scene id)` only, so
/// regeneration with the same config is bit-identical.
pub fn generate_dataset(
    cfg: &DatasetConfig,
    roster: &Roster,
    out_dir: &Path,
) -> Result<DatasetManifest, SceneError> {
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|source| SceneError::Io {
        path: audio_dir.clone(),
        source,
    })?;

    let mut records = Vec::with_capacity(cfg.counts.total());
    for &split in &Split::ALL {
        let (fg_seen, bg_seen) = split.seen_flags();
        let fg_pool = roster.pool(ClassKind::Foreground, fg_seen);
        let bg_pool = roster.pool(ClassKind::Background, bg_seen);
        let count = cfg.counts.of(split);
        if count > 0 && (fg_pool.is_empty() || bg_pool.is_empty()) {
            return Err(SceneError::EmptyPool(split));
        }
        for i in 0..count {
            let id = format!("{split}_{i:04}");
            let scene_seed = seed::derive(cfg.master_seed, &id, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
            let fg_class = fg_pool[rng.random_range(0..fg_pool.len())];
            let bg_class = bg_pool[rng.random_range(0..bg_pool.len())];
            let snr_db = rng.random_range(cfg.snr_range_db.0..=cfg.snr_range_db.1);

            let spec = SceneSpec {
                fg_class: fg_class.name.clone(),
                bg_class: bg_class.name.clone(),
                snr_db,
                duration_s: cfg.duration_s,
                seed: scene_seed,
                split,
            };
            let (mixture, adapt) = realize_scene(&spec, roster, cfg)?;

            let paths = ["fg", "bg", "mix", "adapt"].map(|tag| format!("audio/{id}_{tag}.wav"));
            audio::write_wav(&out_dir.join(&paths[0]), &mixture.foreground, cfg.encoding)?;
            audio::write_wav(&out_dir.join(&paths[1]), &mixture.background, cfg.encoding)?;
            audio::write_wav(&out_dir.join(&paths[2]), &mixture.mixture, cfg.encoding)?;
            audio::write_wav(&out_dir.join(&paths[3]), &adapt, cfg.encoding)?;

            records.push(ManifestRecord {
                id,
                split,
                fg_class: spec.fg_class,
                bg_class: spec.bg_class,
                snr_db,
                bg_gain: mixture.bg_gain,
                fg_path: paths[0].clone(),
                bg_path: paths[1].clone(),
                mix_path: paths[2].clone(),
                adapt_path: paths[3].clone(),
                seed: scene_seed,
            });
        }
    }

    let manifest = DatasetManifest {
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Realize a scene spec: render sources, mix, and carve the adaptation
/// segment from a separately seeded render of the background class.
pub fn realize_scene(
    spec: &SceneSpec,
    roster: &Roster,
    cfg: &DatasetConfig,
) -> Result<(SceneMixture, AudioClip), SceneError> {
    let fg_class = roster
        .find(&spec.fg_class)
        .ok_or_else(|| SceneError::NotForeground(spec.fg_class.clone()))?;
    let bg_class = roster
        .find(&spec.bg_class)
        .ok_or_else(|| SceneError::NotBackground(spec.bg_class.clone()))?;

    let fg = synth_event(
        fg_class,
        seed::derive(spec.seed, "fg", 0),
        spec.duration_s,
        cfg.sample_rate_hz,
    )?;
    let bg = synth_background(
        bg_class,
        seed::derive(spec.seed, "bg", 0),
        spec.duration_s,
        cfg.sample_rate_hz,
    )?;
    let mixture = mix_at_snr(&fg, &bg, spec.snr_db)?;

    // Adaptation audio comes from a disjoint generation seed of the same
    // background class, then a seeded crop.
    let adapt_src = synth_background(
        bg_class,
        seed::derive(spec.seed, "adapt-src", 0),
        cfg.adapt_s + 1.0,
        cfg.sample_rate_hz,
    )?;
    let adapt = carve_adaptation_segment(&adapt_src, cfg.adapt_s, seed::derive(spec.seed, "carve", 0))?;
    Ok((mixture, adapt))
}
