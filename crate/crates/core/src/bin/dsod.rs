use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dsod::distill::InitMode;
use dsod::harness::{self, Overrides, RunConfig};

#[derive(Parser)]
#[command(version, about = "Source-free detector adaptation on synthetic domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags below take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Pseudo-label confidence threshold.
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    lambda1: Option<f64>,
    #[arg(long, global = true)]
    lambda2: Option<f64>,
    #[arg(long, global = true)]
    lambda3: Option<f64>,
    /// Pin the fusion weight and skip the stability sweep.
    #[arg(long, global = true)]
    w_star: Option<f64>,
    #[arg(long, global = true)]
    no_ufi: bool,
    #[arg(long, global = true)]
    no_safr: bool,
    #[arg(long, global = true)]
    no_daaw: bool,
    #[arg(long, global = true)]
    box_fusion: bool,
    #[arg(long, global = true, value_enum)]
    init: Option<Init>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Dsod,
    Source,
}

#[derive(Subcommand)]
enum Command {
    /// Write the source/target splits of the configured task.
    Generate,
    /// Train the source model on `<data>/source_train`.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
    },
    /// Stability sweep of a source checkpoint on the target split.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Self-training of a source checkpoint on the target split.
    Adapt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Distil an adapted checkpoint into a foundation-free student.
    Distill {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source checkpoint, required with `--init source`.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// AP50 of a checkpoint on a dataset directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Cosine between pyramid features and projected foundation features.
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoints to analyse; a fresh model when omitted.
        #[arg(long, num_args = 0..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        images: usize,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            delta: self.delta,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            w_star: self.w_star,
            no_ufi: self.no_ufi,
            no_safr: self.no_safr,
            no_daaw: self.no_daaw,
            box_fusion: self.box_fusion,
            init: self.init.map(|i| match i {
                Init::Dsod => InitMode::Dsod,
                Init::Source => InitMode::Source,
            }),
        }
    }
}

fn run(cli: Cli) -> dsod::Result<()> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    cfg.apply(&cli.common.overrides());
    let out = &cli.common.out;
    match &cli.command {
        Command::Generate => harness::generate(&cfg, out)?,
        Command::Pretrain { data } => {
            harness::pretrain(&cfg, data, out)?;
        }
        Command::Sweep { data, checkpoint } => {
            let w = harness::sweep(&cfg, data, checkpoint, out)?;
            println!("w* = {w}");
        }
        Command::Adapt { data, checkpoint } => {
            harness::adapt(&cfg, data, checkpoint, out)?;
        }
        Command::Distill {
            data,
            checkpoint,
            source,
        } => {
            harness::distill(&cfg, data, checkpoint, source.as_deref(), out)?;
        }
        Command::Evaluate { checkpoint, dataset } => {
            let map = harness::evaluate_checkpoint(checkpoint, dataset, out)?;
            println!("AP50 = {map:.4}");
        }
        Command::Analyze {
            dataset,
            checkpoint,
            images,
        } => harness::analyze(&cfg, checkpoint, dataset, *images, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
