use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tstnet::checkpoint::{self, Checkpoint};
use tstnet::config::TrainConfig;
use tstnet::manifest::{load_dataset, load_ground_truths};
use tstnet::predictions::{read_predictions, write_predictions};
use tstnet::report::{loss_curve_svg, read_log, render_table, report_to_json, write_log_line};
use tstnet::synth::{generate, SynthConfig};
use tstnet::trainer::{run_predictions, train, TrainControl};
use tstnet_core::gradcheck::standard_fragments;
use tstnet_core::metrics::vqps;
use tstnet_core::model::ModelParams;

#[derive(Parser)]
#[command(
    name = "tstnet",
    version,
    about = "Temporal sentence grounding via cross-modal template tracking: \
             synthetic data, training, evaluation and gradient checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Assert single-threaded deterministic execution (always on; the flag
    /// documents intent and is accepted everywhere).
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Args)]
struct AblationArgs {
    /// Bypass the attention stages of search-space construction.
    #[arg(long)]
    no_ssr: bool,
    /// Unshare the template-side filters from the search-side filters.
    #[arg(long)]
    no_tg_filters_shared: bool,
    /// Replace instance filters with identity (pooling only).
    #[arg(long)]
    no_filter: bool,
    /// Bypass the dynamic template updater.
    #[arg(long)]
    no_dtu: bool,
    /// Drop the GRU from the updater, keeping only the FNN.
    #[arg(long)]
    no_gru: bool,
    /// Zero out the reversed track features.
    #[arg(long)]
    no_reverse: bool,
    /// Skip boundary refinement at prediction time.
    #[arg(long)]
    no_refine: bool,
}

impl AblationArgs {
    fn apply(&self, cfg: &mut TrainConfig) {
        cfg.flags.no_ssr |= self.no_ssr;
        cfg.flags.no_tg_filters_shared |= self.no_tg_filters_shared;
        cfg.flags.no_filter |= self.no_filter;
        cfg.flags.no_dtu |= self.no_dtu;
        cfg.flags.no_gru |= self.no_gru;
        cfg.flags.no_reverse |= self.no_reverse;
        cfg.flags.no_refine |= self.no_refine;
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        /// Synthetic-data config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the episode count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train a model on a dataset directory.
    Train {
        /// Training config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Line-delimited JSON epoch log (stdout when omitted).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[command(flatten)]
        ablation: AblationArgs,
    },
    /// Emit ranked moment predictions for every episode of a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output file, one JSON record per episode.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_n: usize,
    },
    /// Evaluate predictions (from a file or a checkpoint) against a
    /// dataset's ground truths.
    Eval {
        /// Prediction file produced by `predict`.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        /// Run this checkpoint instead of reading a prediction file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Write the evaluation report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top_n: usize,
    },
    /// Verify analytic gradients against f64 central differences for every
    /// model fragment; exits non-zero on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Render the metric table (and optionally a loss-curve SVG) from a
    /// training log.
    Report {
        #[arg(long)]
        log: PathBuf,
        /// Write the loss curve to this SVG file.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Synth { config, out, episodes } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)?;
                    serde_json::from_str::<SynthConfig>(&text)
                        .map_err(|e| anyhow::anyhow!("invalid synth config: {e}"))?
                }
                None => SynthConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            let plans = generate(&cfg, &out)?;
            println!("wrote {} episodes to {}", plans.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, data, out, log, resume, lr, epochs, batch, ablation } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(lr) = lr {
                cfg.lr = lr;
            }
            if let Some(epochs) = epochs {
                cfg.epochs = epochs;
            }
            if let Some(batch) = batch {
                cfg.batch = batch;
            }
            ablation.apply(&mut cfg);
            cfg.validate()?;
            let episodes = load_dataset(&data, &cfg.data_shape())?;
            let resume_ckpt = resume.map(|p| checkpoint::load(&p)).transpose()?;
            let mut log_sink: Box<dyn Write> = match &log {
                Some(path) => Box::new(fs::File::create(path)?),
                None => Box::new(std::io::stdout()),
            };
            let outcome = train(&cfg, &episodes, resume_ckpt, |stats| {
                write_log_line(&mut log_sink, stats).expect("log write");
                TrainControl::Continue
            })?;
            checkpoint::save(&out, &outcome.checkpoint)?;
            if let Some(reason) = &outcome.halted {
                eprintln!("training halted early: {reason}");
                eprintln!("last good checkpoint written to {}", out.display());
                return Ok(ExitCode::from(3));
            }
            if let Some(last) = outcome.history.last() {
                eprintln!(
                    "trained {} epochs; final loss {:.4}, R@1 IoU=0.5 {:.3}, mIoU {:.3}",
                    outcome.checkpoint.epoch, last.loss, last.r1_05, last.miou
                );
            }
            eprintln!("checkpoint written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Predict { checkpoint: ckpt_path, data, out, top_n } => {
            let (ckpt, mp) = load_model(&ckpt_path)?;
            let episodes = load_dataset(&data, &ckpt.config.data_shape())?;
            let run = run_predictions(&ckpt.set, &mp, &ckpt.config.model_config(), &episodes, top_n)?;
            let mut file = fs::File::create(&out)?;
            write_predictions(&mut file, &run.predictions)?;
            println!(
                "predicted {} episodes in {:.3}s: {:.1} video-query pairs/s, {} trainable parameters",
                episodes.len(),
                run.elapsed_secs,
                vqps(episodes.len(), run.elapsed_secs),
                run.param_count
            );
            println!("predictions written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { predictions, checkpoint: ckpt_path, data, report, top_n } => {
            let gts = load_ground_truths(&data)?;
            let preds = match (&predictions, &ckpt_path) {
                (Some(path), None) => read_predictions(path)?,
                (None, Some(path)) => {
                    let (ckpt, mp) = load_model(path)?;
                    let episodes = load_dataset(&data, &ckpt.config.data_shape())?;
                    let run = run_predictions(
                        &ckpt.set,
                        &mp,
                        &ckpt.config.model_config(),
                        &episodes,
                        top_n,
                    )?;
                    println!(
                        "{:.1} video-query pairs/s over {} episodes, {} trainable parameters",
                        vqps(episodes.len(), run.elapsed_secs),
                        episodes.len(),
                        run.param_count
                    );
                    run.predictions
                }
                _ => anyhow::bail!("eval needs exactly one of --predictions or --checkpoint"),
            };
            let eval_report = tstnet::trainer::report_for_predictions(&preds, &gts)?;
            print!("{}", render_table(&eval_report));
            if let Some(path) = report {
                fs::write(&path, serde_json::to_string_pretty(&report_to_json(&eval_report))?)?;
                eprintln!("report written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { tolerance } => {
            let reports = standard_fragments(cli.seed.unwrap_or(0x5eed))?;
            let mut ok = true;
            for r in &reports {
                let pass = r.max_rel_err < tolerance;
                ok &= pass;
                println!(
                    "{} {:<16} max_rel_err {:.3e} ({} scalars)",
                    if pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.checked_scalars
                );
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Report { log, plot } => {
            let history = read_log(&log)?;
            let last = history.last().expect("non-empty log");
            println!("epochs: {}", history.len());
            println!("final loss: {:.6}", last.loss);
            println!("{:<8}{:>10}{:>10}{:>10}{:>10}", "", "IoU=0.3", "IoU=0.5", "IoU=0.7", "mIoU");
            println!(
                "{:<8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
                "R@1", last.r1_03, last.r1_05, last.r1_07, last.miou
            );
            if let Some(path) = plot {
                fs::write(&path, loss_curve_svg(&history))?;
                println!("loss curve written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_model(path: &PathBuf) -> anyhow::Result<(Checkpoint, ModelParams)> {
    let ckpt = checkpoint::load(path)?;
    let (mp, reference) = ModelParams::init(&ckpt.config.model_config(), ckpt.config.seed);
    checkpoint::verify_against_model(&ckpt, &reference)?;
    Ok((ckpt, mp))
}
