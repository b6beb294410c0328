//! `swd`: batch command-line front end for the SWD detection pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use swd_core::model::{CheckpointMeta, ModelParams};
use swd_core::pipeline::{
    classify_states, evaluate, list_subjects, load_epochs, predict_recording, write_corpus, PipelineConfig,
    SCHEMA_VERSION,
};
use swd_core::preprocess::{resample, ResampleSpec};
use swd_core::render::{trace_svg, TraceStyle};
use swd_core::signal_io::{load_labels, load_signal_auto, save_labels, save_signal, EventSet, SignalFormat};
use swd_core::training::{sweep, train_with_progress, SweepAxis};

/// Pipeline config stored next to a checkpoint so `predict` reuses it.
const PIPELINE_FILE: &str = "pipeline.json";
const RUN_FILE: &str = "run.json";

#[derive(Parser)]
#[command(name = "swd", version, about = "Spike-wave discharge detection in single-channel EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled corpus.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Resample a signal to a new rate.
    Resample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model on a corpus directory.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict SWD events for one recording.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-sample probabilities (CSV, one per line).
        #[arg(long)]
        probs: Option<PathBuf>,
    },
    /// Score predicted labels against reference labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label to score; other labels in either file are ignored.
        #[arg(long, default_value = "SWD")]
        label: String,
    },
    /// Detect noise and sleep epochs.
    States {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Thresholds and diagnostics as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Ablation sweep over augmentation, training fraction or scaling probability.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Static SVG trace with label overlays.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated label files, one overlay lane each.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<PathBuf>,
        #[arg(long, default_value_t = 60.0)]
        window: f64,
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Overrides the training seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of subjects (last in sorted order) held out for testing.
    #[arg(long, default_value_t = 1)]
    holdout: usize,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

struct Corpus {
    cfg: PipelineConfig,
    train: Vec<swd_core::training::SubjectEpochs>,
    test: Vec<swd_core::training::SubjectEpochs>,
}

fn load_corpus(args: &DataArgs) -> Result<Corpus> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let ids = list_subjects(&args.data)?;
    if args.holdout >= ids.len() {
        bail!(swd_core::Error::InvalidConfig(format!(
            "holdout {} leaves no training subjects out of {}",
            args.holdout,
            ids.len()
        )));
    }
    let (train_ids, test_ids) = ids.split_at(ids.len() - args.holdout);
    eprintln!("train subjects: {train_ids:?}; test subjects: {test_ids:?}");
    Ok(Corpus {
        train: load_epochs(&args.data, train_ids, &cfg)?,
        test: load_epochs(&args.data, test_ids, &cfg)?,
        cfg,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => {
            let cfg = load_config(config.as_deref())?;
            let ids = write_corpus(&out, &cfg.synth, seed)?;
            eprintln!("wrote {} subjects to {}", ids.len(), out.display());
        }
        Command::Resample { input, rate, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let rec = load_signal_auto(&input)?;
            let spec = ResampleSpec {
                kernel_half_width_zero_crossings: cfg.resample.kernel_half_width_zero_crossings,
                ..ResampleSpec::new(rec.sample_rate_hz, rate)
            };
            save_signal(&resample(&rec, &spec)?, &out, SignalFormat::from_path(&out))?;
        }
        Command::Train { data, out } => {
            let corpus = load_corpus(&data)?;
            let cfg = &corpus.cfg;
            let result = train_with_progress(&corpus.train, &corpus.test, &cfg.model, &cfg.train, |e| {
                eprintln!(
                    "epoch {:>3}  lr {:.2e}  train {:.4}  val {:.4}",
                    e.epoch, e.lr, e.train_loss, e.val_loss
                )
            })?;
            let report = &result.report;
            eprintln!("best epoch {} (val {:.4}), {:.1} s", report.best_epoch, report.best_val_loss, report.wall_clock_s);
            let meta = CheckpointMeta {
                sample_rate_hz: cfg.resample.target_rate_hz,
                step: report.total_steps,
                epoch: report.best_epoch,
                metrics: json!({ "best_val_loss": report.best_val_loss, "test": report.test_aggregate }),
            };
            result.checkpoint.save_checkpoint(&out, &meta)?;
            write_json(&out.join(PIPELINE_FILE), cfg)?;
            write_json(&out.join(RUN_FILE), &json!({ "schema_version": SCHEMA_VERSION, "run": report }))?;
        }
        Command::Predict { ckpt, input, out, probs } => {
            let (params, _) = ModelParams::<f32>::load_checkpoint(&ckpt)?;
            let pipeline_path = ckpt.join(PIPELINE_FILE);
            let cfg = if pipeline_path.exists() {
                PipelineConfig::load(&pipeline_path)?
            } else {
                PipelineConfig { model: params.config().clone(), ..PipelineConfig::default() }
            };
            let rec = load_signal_auto(&input)?;
            let pred = predict_recording(&params, &rec, &cfg)?;
            save_labels(&pred.events, &out)?;
            if let Some(path) = probs {
                let text: String = pred.probs.iter().map(|p| format!("{p:.6}\n")).collect();
                fs::write(&path, text)?;
            }
            eprintln!("{} events", pred.events.len());
        }
        Command::Eval { pred, truth, signal, out, label } => {
            let rec = load_signal_auto(&signal)?;
            let pick = |p: &Path| -> Result<EventSet> { Ok(load_labels(p)?.with_label(&label)) };
            let report = evaluate(&pick(&pred)?, &pick(&truth)?, &rec)?;
            write_json(&out, &report)?;
        }
        Command::States { input, out, config, report } => {
            let cfg = load_config(config.as_deref())?;
            let rec = load_signal_auto(&input)?;
            let states = classify_states(&rec, &cfg)?;
            if let Some(d) = &states.sleep.diagnostic {
                eprintln!("sleep: {d}");
            }
            save_labels(&states.combined(), &out)?;
            if let Some(path) = report {
                write_json(&path, &states)?;
            }
        }
        Command::Sweep { axis, data, out } => {
            let corpus = load_corpus(&data)?;
            let rows = sweep(&corpus.train, &corpus.test, &corpus.cfg.model, &corpus.cfg.train, axis)?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["axis", "label", "segments", "precision", "recall", "f1"])?;
            for r in &rows {
                w.write_record([
                    r.axis.to_string(),
                    r.label.clone(),
                    r.segments.to_string(),
                    format!("{:.6}", r.precision),
                    format!("{:.6}", r.recall),
                    format!("{:.6}", r.f1),
                ])?;
            }
            w.flush()?;
        }
        Command::Render { input, labels, window, start, out } => {
            let rec = load_signal_auto(&input)?;
            let layers = labels.iter().map(load_labels).collect::<swd_core::Result<Vec<_>>>()?;
            fs::write(&out, trace_svg(&rec, &layers, start, window, &TraceStyle::default())?)?;
        }
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<swd_core::Error>().map(swd_core::Error::kind))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<std::io::Error>().map(|_| "Io")))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<csv::Error>().map(|_| "Csv")))
        .unwrap_or("Error")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let body = json!({ "error": error_kind(&err), "message": format!("{err:#}") });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
