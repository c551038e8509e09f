//! `ambisep` command line: synth, train, separate, evaluate, report.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ambisep::net::Variant;
use ambisep::scene::Split;
use ambisep_cli::commands::{self, MaskSource};
use ambisep_cli::config::ExperimentConfig;
use ambisep_cli::CliError;

#[derive(Parser)]
#[command(
    name = "ambisep",
    about = "Foreground/background ambient sound scene separation experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (plain key-value text).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the scene dataset and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a mask-estimation variant on the generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Variant to train: M1, M1+, M2, or M2+.
        #[arg(long)]
        variant: Variant,
        /// Architecture size: paper or desk.
        #[arg(long)]
        size_profile: Option<ambisep::net::SizeProfile>,
    },
    /// Write foreground/background estimates for every scene of a split.
    Separate {
        #[command(flatten)]
        common: Common,
        /// Use the ideal ratio mask computed from the reference sources.
        #[arg(long, conflicts_with_all = ["variant", "checkpoint"])]
        oracle: bool,
        /// Use this trained variant's checkpoint from the experiment tree.
        #[arg(long)]
        variant: Option<Variant>,
        /// Use an explicit checkpoint file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Split,
        /// Also dump the Mel and STFT masks in the binary matrix format.
        #[arg(long)]
        dump_masks: bool,
    },
    /// Score estimates with SDR/SIR/SAR and improvements over the mixture.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Estimates directory (defaults to the experiment tree location
        /// for --variant/--oracle).
        #[arg(long)]
        estimates: Option<PathBuf>,
        #[arg(long, conflicts_with = "variant")]
        oracle: bool,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        split: Split,
        /// Distortion filter length L (1 = plain projection).
        #[arg(long)]
        filter_len: Option<usize>,
    },
    /// Aggregate per-scene CSVs into median/quartile tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Per-scene CSV files; defaults to every CSV under the experiment's
        /// eval directory.
        csvs: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.dataset.master_seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn mask_source(
    oracle: bool,
    variant: Option<Variant>,
    checkpoint: Option<PathBuf>,
) -> Result<MaskSource, CliError> {
    match (oracle, variant, checkpoint) {
        (true, None, None) => Ok(MaskSource::Oracle),
        (false, Some(v), None) => Ok(MaskSource::Variant(v)),
        (false, None, Some(p)) => Ok(MaskSource::Checkpoint(p)),
        _ => Err(CliError::Usage(
            "choose exactly one of --oracle, --variant, --checkpoint".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let (manifest, counts) = commands::run_synth(&cfg)?;
            println!("wrote {}", cfg.manifest_path().display());
            for (split, count) in counts {
                println!("  {split}: {count} scenes");
            }
            println!("  total: {}", manifest.records.len());
        }
        Command::Train { common, variant, size_profile } => {
            let mut cfg = load_config(&common)?;
            if let Some(profile) = size_profile {
                cfg.train.profile = profile;
            }
            let artifacts = commands::run_train(&cfg, variant)?;
            println!("checkpoint: {}", artifacts.checkpoint.display());
            println!("loss curve: {}", artifacts.curve.display());
            println!(
                "best epoch {} | final train {:.6} val {:.6}",
                artifacts.best_epoch, artifacts.final_train_loss, artifacts.final_val_loss
            );
        }
        Command::Separate { common, oracle, variant, checkpoint, split, dump_masks } => {
            let cfg = load_config(&common)?;
            let source = mask_source(oracle, variant, checkpoint)?;
            let (dir, label) = commands::run_separate(&cfg, &source, split, None, dump_masks)?;
            println!("{label} estimates for {split}: {}", dir.display());
        }
        Command::Evaluate { common, estimates, oracle, variant, split, filter_len } => {
            let cfg = load_config(&common)?;
            let estimates_dir = match (estimates, oracle, variant) {
                (Some(dir), _, _) => dir,
                (None, true, None) => cfg.estimates_dir("IRM", split),
                (None, false, Some(v)) => cfg.estimates_dir(&v.to_string(), split),
                _ => {
                    return Err(CliError::Usage(
                        "evaluate needs --estimates, --oracle, or --variant".into(),
                    ))
                }
            };
            let (csv, rows) = commands::run_evaluate(&cfg, &estimates_dir, split, filter_len)?;
            let ok = rows.iter().filter(|r| r.status == "ok").count();
            println!("{}: {} rows ({} ok)", csv.display(), rows.len(), ok);
        }
        Command::Report { common, csvs } => {
            let cfg = load_config(&common)?;
            let (summary, warnings, summary_path) = commands::run_report(&cfg, &csvs)?;
            for warning in warnings {
                eprintln!("warning: {warning}");
            }
            print!("{}", summary.to_table());
            println!("summary: {}", summary_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success, everything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
