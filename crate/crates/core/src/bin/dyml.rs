use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dyml::experiment::{
    cmd_eval, cmd_gen, cmd_study, cmd_train, EvalSource, ExperimentConfig, StudyName, TrainOptions,
};
use dyml::{DymlError, Result};

#[derive(Parser)]
#[command(name = "dyml", version, about = "Multi-scale metric learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the config's seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides DYML_OUT and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel workers for studies; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and test splits.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model per seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs.
        #[arg(long)]
        until_epoch: Option<usize>,
    },
    /// Evaluate trained models on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate this checkpoint instead of the per-seed runs.
        #[arg(long, conflicts_with = "embeddings")]
        checkpoint: Option<PathBuf>,
        /// Evaluate a DYME1 dump of test embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Run a named study.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        name: Study,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    #[value(name = "single_vs_multi")]
    SingleVsMulti,
    Benchmark,
    Conflict,
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.experiment.seeds = vec![seed];
    }
    let out = cfg.resolve_out_dir(common.out.as_deref());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common } => {
            let (cfg, out) = load(&common)?;
            let (train, test) = cmd_gen(&cfg, &out)?;
            println!("{}\n{}", train.display(), test.display());
        }
        Command::Train { common, resume, until_epoch } => {
            let (cfg, out) = load(&common)?;
            for path in cmd_train(&cfg, &out, &TrainOptions { resume, until_epoch })? {
                println!("{}", path.display());
            }
        }
        Command::Eval { common, checkpoint, embeddings } => {
            let (cfg, out) = load(&common)?;
            let source = match (checkpoint, embeddings) {
                (Some(c), _) => EvalSource::Checkpoint(c),
                (None, Some(e)) => EvalSource::Embeddings(e),
                (None, None) => EvalSource::Runs,
            };
            for r in cmd_eval(&cfg, &out, &source)? {
                let seed = r.meta.as_ref().map_or(0, |m| m.seed);
                println!("seed {seed}: R@1 {:.4} mAP {:.4} ASI {:.4}", r.cmc[0], r.map, r.asi);
            }
        }
        Command::Study { common, name } => {
            let (cfg, out) = load(&common)?;
            let name = match name {
                Study::SingleVsMulti => StudyName::SingleVsMulti,
                Study::Benchmark => StudyName::Benchmark,
                Study::Conflict => StudyName::Conflict,
            };
            let study = cmd_study(&cfg, name, &out, common.jobs)?;
            print!("{}", study.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &DymlError) -> u8 {
    if e.is_config_error() {
        2
    } else {
        3
    }
}
