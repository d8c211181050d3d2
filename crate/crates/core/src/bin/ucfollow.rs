use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ucfollow::dtrd::DtrdModel;
use ucfollow::harness::dataset::{load_corpus, record_corpus, record_sequence};
use ucfollow::harness::training::{train_model, write_loss_csv, write_metrics_csv};
use ucfollow::harness::{run_protocol, Config, MetricsReport};
use ucfollow::sim::record::write_sequence;
use ucfollow::sim::ScenarioName;
use ucfollow::{Error, Result};

#[derive(Parser)]
#[command(name = "ucfollow", version, about = "Person following in uniform crowds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record one simulated sequence, or the whole default corpus with --corpus.
    Record {
        #[arg(long, default_value = "one_cross")]
        scenario: ScenarioName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "A")]
        subject: String,
        /// Record the default corpus into OUT instead of a single sequence.
        #[arg(long)]
        corpus: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the tracker on the recorded corpus and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the experiment protocol and write a binary report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export CSV summaries from a binary report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        fps_floor: f64,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => {
            let mut cfg = Config::default();
            cfg.apply_env()?;
            Ok(cfg)
        }
    }
}

fn record(
    scenario: ScenarioName,
    seed: u64,
    out: &Path,
    subject: &str,
    corpus: bool,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    if corpus {
        let paths = record_corpus(&cfg, out, &mut |e| eprintln!("recorded {}", e.name))?;
        println!("{} sequences in {}", paths.len(), out.display());
    } else {
        let seq = record_sequence(&cfg, scenario, subject, &cfg.scenario, seed)?;
        write_sequence(out, &seq)?;
        println!("{} frames, {} agents in {}", seq.frames.len(), seq.agents, out.display());
    }
    Ok(())
}

fn train(config: &Path) -> Result<()> {
    let cfg = Config::load(config)?;
    if !cfg.data.dir.is_dir() {
        return Err(Error::Config(format!("dataset directory {} does not exist", cfg.data.dir.display())));
    }
    let sequences = load_corpus(&cfg.data.dir)?;
    eprintln!("{} sequences loaded", sequences.len());
    let (model, outcome) = train_model(&cfg, &sequences, &mut |epoch, loss| {
        eprintln!("epoch {} mean loss {loss:.6}", epoch + 1)
    })?;
    model.save(&cfg.experiment.checkpoint)?;
    write_loss_csv(&cfg.data.loss_csv, &outcome.epoch_losses)?;
    write_metrics_csv(&cfg.data.metrics_csv, &outcome)?;
    println!(
        "held-out IoU {:.4} -> {:.4}, checkpoint {}",
        outcome.eval_iou_before,
        outcome.eval_iou_after,
        cfg.experiment.checkpoint.display()
    );
    Ok(())
}

fn run(config: &Path, out: &Path) -> Result<()> {
    let cfg = Config::load(config)?;
    let model = if cfg.experiment.trackers.iter().any(|k| k.needs_model()) {
        let path = &cfg.experiment.checkpoint;
        if !path.is_file() {
            return Err(Error::Config(format!("checkpoint {} not found", path.display())));
        }
        Some(Arc::new(DtrdModel::load(cfg.tracker.clone(), path)?))
    } else {
        None
    };
    let report = run_protocol(&cfg, model, &mut |r| {
        eprintln!(
            "{} {} {} #{}: DE {:.3} FS {:.3} FPS {:.1}",
            r.key.subject, r.key.tracker, r.key.scenario, r.key.trial, r.row.de, r.row.fs, r.row.fps
        )
    })?;
    report.save(out)?;
    println!("{} trials written to {}", report.rows.len(), out.display());
    Ok(())
}

fn report(input: &Path, out: &Path, fps_floor: f64) -> Result<()> {
    let report = MetricsReport::load(input)?;
    report.write_csv(out, fps_floor)?;
    for a in report.aggregates(false) {
        println!(
            "{:<14} {:<13} DE {:.3}±{:.3}  FS {:.3}±{:.3}  FPS {:.1}",
            a.tracker.as_str(),
            a.scenario.as_str(),
            a.de.mean,
            a.de.std,
            a.fs.mean,
            a.fs.std,
            a.fps.mean
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Record {
            scenario,
            seed,
            out,
            subject,
            corpus,
            config,
        } => record(*scenario, *seed, out, subject, *corpus, config.as_deref()),
        Command::Train { config } => train(config),
        Command::Run { config, out } => run(config, out),
        Command::Report { input, out, fps_floor } => report(input, out, *fps_floor),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
