//! Experiment orchestration behind the CLI subcommands. Everything here is
//! deterministic given the experiment config; commands fan out per scene in
//! manifest order (sorted by scene id at generation time).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ambisep::audio::{self, WavEncoding};
use ambisep::bss::{self, DecompositionConfig};
use ambisep::dsp::{self, Frontend};
use ambisep::net::{self, TrainConfig, Variant};
use ambisep::scene::{self, DatasetManifest, Split};
use ambisep::separation::{self, Masker};

use crate::config::ExperimentConfig;
use crate::report::{self, EvalRow, ReportSummary};
use crate::CliError;

/// Generate the dataset under `out_dir/dataset`; returns the manifest and
/// per-split counts for display.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<(DatasetManifest, Vec<(Split, usize)>), CliError> {
    let dataset_dir = cfg.out_dir.join("dataset");
    std::fs::create_dir_all(&dataset_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dataset_dir.display())))?;
    let roster = scene::default_roster();
    let manifest = scene::generate_dataset(&cfg.dataset, &roster, &dataset_dir)?;
    let counts = Split::ALL
        .iter()
        .map(|&s| (s, manifest.split(s).len()))
        .collect();
    Ok((manifest, counts))
}

/// Result of a training run.
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
}

/// Train one variant and write its checkpoint and loss-curve CSV.
pub fn run_train(cfg: &ExperimentConfig, variant: Variant) -> Result<TrainArtifacts, CliError> {
    let manifest = DatasetManifest::load(&cfg.manifest_path())?;
    let frontend = Frontend::new(cfg.frontend)?;
    let train_cfg = TrainConfig {
        variant,
        ..cfg.train.clone()
    };
    let output = net::train(&manifest, &frontend, &train_cfg)?;

    let checkpoint = cfg.checkpoint_path(variant);
    if let Some(parent) = checkpoint.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    net::save_checkpoint(&checkpoint, &output.model)?;

    let curve = cfg.curve_path(variant);
    if let Some(parent) = curve.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for stats in &output.curve {
        writeln!(text, "{},{:.9},{:.9}", stats.epoch, stats.train_loss, stats.val_loss)
            .expect("write to string");
    }
    std::fs::write(&curve, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", curve.display())))?;

    let last = output.curve.last().expect("at least one epoch");
    Ok(TrainArtifacts {
        checkpoint,
        curve,
        best_epoch: output.best_epoch,
        final_train_loss: last.train_loss,
        final_val_loss: last.val_loss,
    })
}

/// What produces masks in `run_separate`.
pub enum MaskSource {
    Oracle,
    Variant(Variant),
    Checkpoint(PathBuf),
}

/// Separate every scene of a split; writes `{id}_fg.wav` / `{id}_bg.wav`
/// plus a small metadata JSON naming the mask source. Returns the estimates
/// directory and the label.
pub fn run_separate(
    cfg: &ExperimentConfig,
    source: &MaskSource,
    split: Split,
    out_override: Option<&Path>,
    dump_masks: bool,
) -> Result<(PathBuf, String), CliError> {
    let manifest = DatasetManifest::load(&cfg.manifest_path())?;
    let frontend = Frontend::new(cfg.frontend)?;
    let model = match source {
        MaskSource::Oracle => None,
        MaskSource::Variant(v) => Some(net::load_checkpoint_expecting(
            &cfg.checkpoint_path(*v),
            *v,
        )?),
        MaskSource::Checkpoint(path) => Some(net::load_checkpoint(path)?),
    };
    let label = match &model {
        None => "IRM".to_string(),
        Some(m) => m.variant.to_string(),
    };
    let out_dir = match out_override {
        Some(p) => p.to_path_buf(),
        None => cfg.estimates_dir(&label, split),
    };
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;

    let records = manifest.split(split);
    if records.is_empty() {
        return Err(CliError::Data(format!("no scenes in split {split}")));
    }
    for record in records {
        let mix = audio::read_wav(&manifest.resolve(&record.mix_path))?;
        let result = match &model {
            None => {
                let fg = audio::read_wav(&manifest.resolve(&record.fg_path))?;
                let bg = audio::read_wav(&manifest.resolve(&record.bg_path))?;
                separation::separate(
                    &mix,
                    &Masker::Oracle { foreground: &fg, background: &bg },
                    &frontend,
                )?
            }
            Some(m) => {
                let adaptation = if m.variant.uses_aux() {
                    if record.adapt_path.is_empty() {
                        return Err(CliError::Data(format!(
                            "scene {}: variant {} needs an adaptation segment but the manifest has none",
                            record.id, m.variant
                        )));
                    }
                    Some(audio::read_wav(&manifest.resolve(&record.adapt_path))?)
                } else {
                    None
                };
                separation::separate(
                    &mix,
                    &Masker::Model { model: m, adaptation: adaptation.as_ref() },
                    &frontend,
                )?
            }
        };
        audio::write_wav(
            &out_dir.join(format!("{}_fg.wav", record.id)),
            &result.fg_estimate,
            WavEncoding::Float32,
        )?;
        audio::write_wav(
            &out_dir.join(format!("{}_bg.wav", record.id)),
            &result.bg_estimate,
            WavEncoding::Float32,
        )?;
        if dump_masks {
            dsp::write_matrix(
                &out_dir.join(format!("{}_mask_mel.bin", record.id)),
                result.mask_mel.values(),
            )?;
            dsp::write_matrix(
                &out_dir.join(format!("{}_mask_stft.bin", record.id)),
                result.mask_stft.values(),
            )?;
        }
    }

    let meta = serde_json::json!({ "label": label, "split": split.to_string() });
    std::fs::write(
        out_dir.join("estimates_meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(|e| CliError::Data(format!("cannot write estimates metadata: {e}")))?;
    Ok((out_dir, label))
}

fn estimates_label(dir: &Path) -> Option<String> {
    let text = std::fs::read_to_string(dir.join("estimates_meta.json")).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    Some(value.get("label")?.as_str()?.to_string())
}

/// Score a split's foreground estimates against the references; one CSV row
/// per manifest scene. Missing estimate files are flagged and skipped, not
/// fatal.
pub fn run_evaluate(
    cfg: &ExperimentConfig,
    estimates_dir: &Path,
    split: Split,
    filter_len: Option<usize>,
) -> Result<(PathBuf, Vec<EvalRow>), CliError> {
    let manifest = DatasetManifest::load(&cfg.manifest_path())?;
    let label = estimates_label(estimates_dir)
        .unwrap_or_else(|| estimates_dir.file_name().map_or("unknown".into(), |n| n.to_string_lossy().into_owned()));
    let l = filter_len.unwrap_or(cfg.filter_len);
    let decomp_cfg = DecompositionConfig { filter_len: l, cap_db: cfg.cap_db };

    let records = manifest.split(split);
    if records.is_empty() {
        return Err(CliError::Data(format!("no scenes in split {split}")));
    }
    let mut rows = Vec::with_capacity(records.len());
    for record in records {
        let estimate_path = estimates_dir.join(format!("{}_fg.wav", record.id));
        let mut row = EvalRow {
            scene_id: record.id.clone(),
            split,
            variant: label.clone(),
            sdr: None,
            sir: None,
            sar: None,
            sdr_i: None,
            sir_i: None,
            filter_len: l,
            status: "ok".to_string(),
        };
        if !estimate_path.exists() {
            row.status = "missing".to_string();
            rows.push(row);
            continue;
        }
        let estimate = audio::read_wav(&estimate_path)?;
        let mixture = audio::read_wav(&manifest.resolve(&record.mix_path))?;
        let fg = audio::read_wav(&manifest.resolve(&record.fg_path))?;
        let bg = audio::read_wav(&manifest.resolve(&record.bg_path))?;
        match bss::improvements(&estimate, &mixture, &[&fg, &bg], &decomp_cfg) {
            Ok(metrics) => {
                row.sdr = Some(metrics.sdr_db);
                row.sir = Some(metrics.sir_db);
                row.sar = Some(metrics.sar_db);
                row.sdr_i = metrics.sdr_i_db;
                row.sir_i = metrics.sir_i_db;
            }
            Err(e @ (bss::BssError::UndefinedTarget | bss::BssError::DegenerateSystem)) => {
                row.status = format!("numeric:{e}").replace(',', ";");
            }
            Err(e) => return Err(e.into()),
        }
        rows.push(row);
    }

    let csv_path = cfg.eval_csv_path(&label, split);
    report::write_eval_csv(&csv_path, &rows)?;
    Ok((csv_path, rows))
}

/// Aggregate per-scene CSVs into the report grid; writes `summary.csv` and
/// `report.txt` under `out_dir/report`.
pub fn run_report(
    cfg: &ExperimentConfig,
    csvs: &[PathBuf],
) -> Result<(ReportSummary, Vec<String>, PathBuf), CliError> {
    let paths: Vec<PathBuf> = if csvs.is_empty() {
        let eval_dir = cfg.out_dir.join("eval");
        let mut found: Vec<PathBuf> = std::fs::read_dir(&eval_dir)
            .map_err(|e| CliError::Data(format!("cannot list {}: {e}", eval_dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        found.sort();
        found
    } else {
        csvs.to_vec()
    };
    if paths.is_empty() {
        return Err(CliError::Data("no evaluation CSVs to report on".into()));
    }
    let mut rows = Vec::new();
    for path in &paths {
        rows.extend(report::read_eval_csv(path)?);
    }
    let (summary, warnings) = report::summarize(&rows);

    let report_dir = cfg.out_dir.join("report");
    std::fs::create_dir_all(&report_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", report_dir.display())))?;
    let summary_path = report_dir.join("summary.csv");
    std::fs::write(&summary_path, summary.to_csv())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", summary_path.display())))?;
    std::fs::write(report_dir.join("report.txt"), summary.to_table())
        .map_err(|e| CliError::Data(format!("cannot write report table: {e}")))?;
    Ok((summary, warnings, summary_path))
}
