use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use selective_ae::model::Arch;
use selective_ae_cli::commands::{self, BenchArgs, DetectArgs, EvalArgs};
use selective_ae_cli::config::{RunConfig, BUILD_VERSION};
use selective_ae_cli::output::ErrorReport;
use selective_ae_cli::serve::{serve, ReviewState};

/// Selective-autoencoder pipeline for rare-object detection.
///
/// Settings resolve as defaults < --config file < --set overrides < command
/// flags. Every config field is addressable as a dotted key, for example
/// `--set train.learning_rate=0.001` or `--set detect.postprocess.val=0.2`.
#[derive(Parser)]
#[command(name = "selae", version = BUILD_VERSION)]
struct Cli {
    /// JSON file with (a subset of) the run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchFlag {
    Model1,
    Model2,
}

impl From<ArchFlag> for Arch {
    fn from(a: ArchFlag) -> Self {
        match a {
            ArchFlag::Model1 => Arch::Model1,
            ArchFlag::Model2 => Arch::Model2,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic frame dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        first_index: Option<usize>,
        #[arg(long)]
        boundary_every: Option<usize>,
    },
    /// Train on a seeded synthetic patch set.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        arch: Option<ArchFlag>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Number of patch pairs to generate.
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Detect objects in frames, image files or dataset directories.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        arch: Option<ArchFlag>,
        #[arg(long)]
        stride: Option<usize>,
        /// Gray threshold on the 0-255 scale.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        canvas: bool,
    },
    /// Score predicted boxes against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Dataset directory with per-frame non-egg counts.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iou_min: Option<f64>,
    },
    /// Time detection across strides.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        arch: Option<ArchFlag>,
        /// Fail when timing departs from t ~ P by more than the tolerance.
        #[arg(long)]
        strict: bool,
    },
    /// Run the annotation review service.
    Serve {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Directory with the static review UI bundle.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Detect { .. } => "detect",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
            Command::Serve { .. } => "serve",
        }
    }

    /// Command flags as config overrides.
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut put = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        };
        let arch = |a: &Option<ArchFlag>| a.map(|a| format!("{:?}", Arch::from(a)).to_lowercase());
        match self {
            Command::Synth {
                frames,
                seed,
                first_index,
                boundary_every,
                ..
            } => {
                put("dataset.frames", frames.map(|v| v.to_string()));
                put("synth.seed", seed.map(|v| v.to_string()));
                put("dataset.first_index", first_index.map(|v| v.to_string()));
                put("dataset.boundary_every", boundary_every.map(|v| v.to_string()));
            }
            Command::Train {
                arch: a,
                seed,
                epochs,
                pairs,
                ..
            } => {
                put("train.arch", arch(a).map(|s| format!("\"{s}\"")));
                put("train.seed", seed.map(|v| v.to_string()));
                put("synth.seed", seed.map(|v| v.to_string()));
                put("train.max_epochs", epochs.map(|v| v.to_string()));
                put("patches.count", pairs.map(|v| v.to_string()));
            }
            Command::Detect { stride, threshold, .. } => {
                put("detect.stride", stride.map(|v| v.to_string()));
                put("detect.postprocess.gray_threshold", threshold.map(|v| v.to_string()));
            }
            Command::Eval { iou_min, .. } => put("eval.iou_min", iou_min.map(|v| v.to_string())),
            Command::Bench { .. } | Command::Serve { .. } => {}
        }
        out
    }
}

fn run(cli: Cli) -> Result<Option<Value>> {
    let mut sets = cli.sets.clone();
    sets.extend(cli.command.overrides());
    let config = RunConfig::resolve(cli.config.as_deref(), &sets)?;
    let summary = match cli.command {
        Command::Synth { out, .. } => commands::cmd_synth(&config, &out)?,
        Command::Train { out, quiet, .. } => commands::cmd_train(&config, &out, !quiet)?,
        Command::Detect {
            model,
            inputs,
            out,
            arch,
            canvas,
            ..
        } => commands::cmd_detect(
            &config,
            &DetectArgs {
                model,
                inputs,
                out,
                arch: arch.map(Arch::from),
                canvas,
            },
        )?,
        Command::Eval {
            pred, truth, dataset, out, ..
        } => commands::cmd_eval(
            &config,
            &EvalArgs {
                predicted: pred,
                truth,
                dataset,
                out,
            },
        )?,
        Command::Bench {
            out,
            model,
            arch,
            strict,
        } => {
            let args = BenchArgs {
                model,
                arch: arch.map(Arch::from),
                out,
                strict,
            };
            let report = commands::cmd_bench(&config, &args)?;
            if !report.within_tolerance {
                eprintln!("warning: detection time departs from t ~ P by more than {}", report.tolerance);
            }
            serde_json::to_value(&report)?
        }
        Command::Serve {
            dataset,
            detections,
            bind,
            ui,
        } => {
            serve(ReviewState::open(&dataset, detections.as_deref())?, bind, ui)?;
            return Ok(None);
        }
    };
    Ok(Some(summary))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(Some(summary)) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport::new(name, &e);
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
