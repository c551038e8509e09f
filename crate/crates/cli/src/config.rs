//! Experiment configuration: a plain hierarchical key-value text file.
//!
//! Syntax: `key = value` lines, `[section]` headers that prefix following
//! keys, `#` comments. Keys are addressed as `section.key`. Example:
//!
//! ```text
//! seed = 42
//! out_dir = runs/desk
//!
//! [frontend]
//! sample_rate_hz = 22050
//! win_len = 1024
//! hop = 256
//!
//! [dataset]
//! train = 500
//! val = 50
//! c1 = 50
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ambisep::dsp::FrontendConfig;
use ambisep::net::{AdamConfig, SizeProfile, TrainConfig, Variant};
use ambisep::scene::{DatasetConfig, SplitCounts};

use crate::CliError;

/// Parsed key-value tree.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected `key = value`", lineno + 1))
            })?;
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            entries.insert(full, value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.parse_as(key)?
            .ok_or_else(|| CliError::Usage(format!("config is missing required key {key}")))
    }
}

/// Everything a run needs: frontend settings, dataset counts, training
/// setup, evaluation filter length, output directory, and the master seed.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub frontend: FrontendConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub filter_len: usize,
    pub cap_db: f64,
}

impl ExperimentConfig {
    /// Load from a config file. The master seed is mandatory; there is no
    /// wall-clock fallback.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let kv = KeyValues::parse(&text)?;
        Self::from_key_values(&kv)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, CliError> {
        let seed: u64 = kv.required("seed")?;
        let out_dir = PathBuf::from(kv.required::<String>("out_dir")?);

        let sample_rate_hz: u32 = kv.parse_as("frontend.sample_rate_hz")?.unwrap_or(44_100);
        let mut frontend = FrontendConfig::for_sample_rate(sample_rate_hz);
        if let Some(v) = kv.parse_as("frontend.win_len")? {
            frontend.win_len = v;
        }
        if let Some(v) = kv.parse_as("frontend.hop")? {
            frontend.hop = v;
        }
        if let Some(v) = kv.parse_as("frontend.n_mels")? {
            frontend.n_mels = v;
        }
        if let Some(v) = kv.parse_as("frontend.fmin")? {
            frontend.fmin = v;
        }
        if let Some(v) = kv.parse_as("frontend.fmax")? {
            frontend.fmax = v;
        }
        frontend
            .validate()
            .map_err(|e| CliError::Usage(format!("config frontend: {e}")))?;

        let counts = SplitCounts {
            train: kv.parse_as("dataset.train")?.unwrap_or(0),
            val: kv.parse_as("dataset.val")?.unwrap_or(0),
            c1: kv.parse_as("dataset.c1")?.unwrap_or(0),
            c2: kv.parse_as("dataset.c2")?.unwrap_or(0),
            c3: kv.parse_as("dataset.c3")?.unwrap_or(0),
            c4: kv.parse_as("dataset.c4")?.unwrap_or(0),
        };
        let mut dataset = DatasetConfig::new(counts, sample_rate_hz, seed);
        if let Some(v) = kv.parse_as("dataset.duration_s")? {
            dataset.duration_s = v;
        }
        if let Some(v) = kv.parse_as("dataset.adapt_s")? {
            dataset.adapt_s = v;
        }
        if let Some(lo) = kv.parse_as("dataset.snr_lo_db")? {
            dataset.snr_range_db.0 = lo;
        }
        if let Some(hi) = kv.parse_as("dataset.snr_hi_db")? {
            dataset.snr_range_db.1 = hi;
        }

        let profile: SizeProfile = kv
            .get("train.size_profile")
            .map(|s| s.parse().map_err(CliError::Usage))
            .transpose()?
            .unwrap_or(SizeProfile::Desk);
        let mut train = TrainConfig::new(Variant::M1, profile);
        train.seed = seed;
        train.adam = AdamConfig {
            lr: kv.parse_as("train.lr")?.unwrap_or(1e-4),
            ..AdamConfig::default()
        };
        if let Some(v) = kv.parse_as("train.epochs")? {
            train.epochs = v;
        }
        if let Some(v) = kv.parse_as("train.batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = kv.parse_as("train.segment_frames")? {
            train.segment_frames = v;
        }
        if let Some(v) = kv.parse_as("train.dropout")? {
            train.dropout = v;
        }

        let variants = match kv.get("train.variants") {
            None => vec![Variant::M1],
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().parse::<Variant>().map_err(CliError::Usage))
                .collect::<Result<Vec<_>, _>>()?,
        };

        let filter_len = kv.parse_as("evaluate.filter_len")?.unwrap_or(512);
        let cap_db = kv.parse_as("evaluate.cap_db")?.unwrap_or(100.0);

        Ok(Self {
            seed,
            out_dir,
            frontend,
            dataset,
            train,
            variants,
            filter_len,
            cap_db,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("dataset").join("manifest.jsonl")
    }

    pub fn checkpoint_path(&self, variant: Variant) -> PathBuf {
        self.out_dir
            .join("checkpoints")
            .join(format!("{variant}.ckpt"))
    }

    pub fn curve_path(&self, variant: Variant) -> PathBuf {
        self.out_dir.join("curves").join(format!("{variant}.csv"))
    }

    pub fn estimates_dir(&self, label: &str, split: ambisep::scene::Split) -> PathBuf {
        self.out_dir.join("estimates").join(label).join(split.to_string())
    }

    pub fn eval_csv_path(&self, label: &str, split: ambisep::scene::Split) -> PathBuf {
        self.out_dir.join("eval").join(format!("{label}_{split}.csv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# experiment
seed = 42
out_dir = runs/demo

[frontend]
sample_rate_hz = 22050
win_len = 1024
hop = 256

[dataset]
train = 12
val = 4
c1 = 4   # inline comment
duration_s = 1.5

[train]
lr = 0.001
epochs = 3
size_profile = desk
variants = M1, M2

[evaluate]
filter_len = 32
";

    #[test]
    fn sample_config_parses() {
        let kv = KeyValues::parse(SAMPLE).unwrap();
        let cfg = ExperimentConfig::from_key_values(&kv).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.frontend.sample_rate_hz, 22_050);
        assert_eq!(cfg.frontend.win_len, 1024);
        assert_eq!(cfg.frontend.n_mels, 128);
        assert_eq!(cfg.dataset.counts.train, 12);
        assert_eq!(cfg.dataset.counts.c2, 0);
        assert!((cfg.dataset.duration_s - 1.5).abs() < 1e-12);
        assert_eq!(cfg.train.epochs, 3);
        assert!((cfg.train.adam.lr - 1e-3).abs() < 1e-15);
        assert_eq!(cfg.variants, vec![Variant::M1, Variant::M2]);
        assert_eq!(cfg.filter_len, 32);
    }

    #[test]
    fn missing_seed_is_a_usage_error() {
        let kv = KeyValues::parse("out_dir = x\n").unwrap();
        assert!(matches!(
            ExperimentConfig::from_key_values(&kv),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn bad_lines_and_values_are_usage_errors() {
        assert!(matches!(
            KeyValues::parse("this is not a key value line"),
            Err(CliError::Usage(_))
        ));
        let kv = KeyValues::parse("seed = not_a_number\nout_dir = x\n").unwrap();
        assert!(matches!(
            ExperimentConfig::from_key_values(&kv),
            Err(CliError::Usage(_))
        ));
    }
}
