use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tempcon::Result;
use tempcon_cli::{
    exit_code, run_det_eval, run_matriochka, run_pretrain, run_probe_suite, run_report, run_synth_gen, run_tile,
    ExperimentConfig, SynthKind,
};

#[derive(Parser)]
#[command(name = "tempcon", version, about = "Temporal-positive contrastive pretraining and detection tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Temporal,
    Detection,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the encoder; writes a checkpoint and an epoch log.
    Pretrain(Common),
    /// Label-efficiency suite on a checkpoint.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Level-1/level-2 detection metrics from JSON-lines files.
    DetEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Tile a detection dataset directory.
    Tile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Nested class-preserving subsets of a detection dataset directory.
    Matriochka {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Write a synthetic dataset.
    SynthGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Summarise the artifacts of an output directory as markdown.
    Report(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg.with_overrides(common.seed, common.output_dir.clone()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(common) => {
            let cfg = load(&common)?;
            let out = run_pretrain(&cfg, |e| {
                eprintln!("epoch {:>4}  loss {:.5}  lr {:.5}  queue {}", e.epoch, e.mean_loss, e.lr, e.queue_fill)
            })?;
            println!("{}", out.checkpoint.display());
        }
        Command::Probe { common, checkpoint } => {
            let cfg = load(&common)?;
            print!("{}", run_probe_suite(&cfg, &checkpoint)?.render_table());
        }
        Command::DetEval { common, gt, pred } => {
            let cfg = load(&common)?;
            let r = run_det_eval(&cfg, &gt, &pred)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
        }
        Command::Tile { common, dataset } => {
            let cfg = load(&common)?;
            let s = run_tile(&cfg, &dataset)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
        }
        Command::Matriochka { common, dataset } => {
            let cfg = load(&common)?;
            let r = run_matriochka(&cfg, &dataset)?;
            for w in r.warnings() {
                eprintln!("warning: {w}");
            }
            print!("{}", r.render_table(&cfg.detkit.classes));
        }
        Command::SynthGen { common, kind } => {
            let cfg = load(&common)?;
            let kind = match kind {
                Kind::Temporal => SynthKind::Temporal,
                Kind::Detection => SynthKind::Detection,
            };
            println!("{}", run_synth_gen(&cfg, kind)?.display());
        }
        Command::Report(common) => {
            let cfg = load(&common)?;
            print!("{}", run_report(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
