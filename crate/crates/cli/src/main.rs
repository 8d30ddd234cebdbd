//! `lorb`: synthesize N-best data, pretrain a proxy rescorer, adapt it with
//! LoRA or a baseline method, and evaluate, compare and sweep.

mod commands;
mod config;
mod manifest;

use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lorb_core::data::Domain;
use lorb_core::peft::Method;

use config::{parse_domain, parse_method, Overrides, RunConfig};
use manifest::Run;

/// Bad flags, bad config, missing or malformed inputs. Exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

/// A training run produced non-finite values. Exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Diverged(pub String);

#[derive(Parser)]
#[command(
    name = "lorb",
    version,
    about = "Second-pass N-best rescoring with low-rank adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override it, it overrides built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel workers for comparison and sweep grids
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct DataArg {
    /// Directory with one `<domain>.jsonl` N-best file per configured domain
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct TargetArg {
    /// Target domain (defaults to the first configured domain)
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain>,
}

#[derive(Args)]
struct MethodsArg {
    /// Methods to run, comma separated (defaults to the config's sweep list)
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic N-best lists, one JSONL file per domain
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the proxy base rescorer on a mixture of all domains
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Adapt a base checkpoint to one domain
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Base checkpoint
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        target: TargetArg,
    },
    /// Pick the 1-best hypothesis of every list in an N-best file
    Rescore {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// LoRA delta to attach to the model
        #[arg(long)]
        delta: Option<PathBuf>,
        /// N-best JSONL file
        #[arg(long)]
        input: PathBuf,
    },
    /// Test-split WER of a model on every domain
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// LoRA delta to attach to the model
        #[arg(long)]
        delta: Option<PathBuf>,
        /// Checkpoint to report WERR against
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Train several methods on the target domain, evaluate on all domains
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Base checkpoint
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        target: TargetArg,
        #[command(flatten)]
        methods: MethodsArg,
    },
    /// Train every method over a warmup × learning-rate grid
    SweepStability {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Base checkpoint
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        target: TargetArg,
        #[command(flatten)]
        methods: MethodsArg,
        /// Warmup values, comma separated
        #[arg(long, value_delimiter = ',')]
        warmups: Option<Vec<usize>>,
        /// Learning rates, comma separated
        #[arg(long, value_delimiter = ',')]
        lrs: Option<Vec<f64>>,
    },
    /// Train every method on nested subsets of the target training data
    SweepScale {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Base checkpoint
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        target: TargetArg,
        #[command(flatten)]
        methods: MethodsArg,
        /// Training subset sizes, strictly ascending, comma separated
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Tune the interpolation weight on the target dev split
    SweepBeta {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        target: TargetArg,
        /// Beta grid, comma separated (defaults to the config's grid)
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
}

fn start(name: &'static str, common: &Common, pretraining: bool) -> anyhow::Result<Run> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(common.seed, common.jobs, &common.overrides, pretraining);
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| Path::new("runs").join(name));
    Run::start(name, cfg, &out)
}

fn run(cli: Cli) -> anyhow::Result<String> {
    match cli.command {
        Command::Synth { common } => commands::synth(start("synth", &common, false)?),
        Command::Pretrain { common, data } => commands::pretrain(start("pretrain", &common, true)?, &data.data),
        Command::Train {
            common,
            data,
            base,
            target,
        } => commands::train_cmd(start("train", &common, false)?, &base, &data.data, target.domain),
        Command::Rescore {
            common,
            model,
            delta,
            input,
        } => commands::rescore(start("rescore", &common, false)?, &model, delta.as_deref(), &input),
        Command::Eval {
            common,
            data,
            model,
            delta,
            baseline,
        } => commands::eval_cmd(
            start("eval", &common, false)?,
            &model,
            delta.as_deref(),
            &data.data,
            baseline.as_deref(),
        ),
        Command::Compare {
            common,
            data,
            base,
            target,
            methods,
        } => commands::compare(
            start("compare", &common, false)?,
            &base,
            &data.data,
            target.domain,
            methods.methods,
        ),
        Command::SweepStability {
            common,
            data,
            base,
            target,
            methods,
            warmups,
            lrs,
        } => commands::sweep_stability(
            start("sweep-stability", &common, false)?,
            &base,
            &data.data,
            commands::StabilityArgs {
                target: target.domain,
                methods: methods.methods,
                warmups,
                lrs,
            },
        ),
        Command::SweepScale {
            common,
            data,
            base,
            target,
            methods,
            sizes,
        } => commands::sweep_scale(
            start("sweep-scale", &common, false)?,
            &base,
            &data.data,
            target.domain,
            methods.methods,
            sizes,
        ),
        Command::SweepBeta {
            common,
            data,
            model,
            target,
            betas,
        } => commands::sweep_beta(
            start("sweep-beta", &common, false)?,
            &model,
            &data.data,
            target.domain,
            betas,
        ),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use lorb_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<Diverged>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Diverged { .. } | E::NonFinite(_) => 1,
                E::Io(io) if io.kind() == ErrorKind::NotFound => 2,
                E::Config(_)
                | E::Parse { .. }
                | E::SequenceTooLong { .. }
                | E::AlreadyAdapted(_)
                | E::NoLora
                | E::Checkpoint(_)
                | E::Empty(_) => 2,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LORB_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
