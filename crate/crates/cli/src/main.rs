use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pma_cli::{config, oracle, report};
use pma_core::experiment::{run_experiment, Mode, Verdict};
use pma_core::FourTankPlant;

#[derive(Parser)]
#[command(
    name = "pma",
    version,
    about = "Periodic modifier adaptation on the four-tank benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the DRTO loop, optionally with the tracking layer, and write logs and plots.
    Run(RunArgs),
    /// Solve the true-plant periodic problem and print it as CSV.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Inspect the model.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// DRTO-only shortcut.
    Drto {
        #[command(subcommand)]
        command: DrtoCommand,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: RunMode,
    /// Output directory; falls back to `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the oracle solve.
    #[arg(long)]
    no_oracle: bool,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Print Fx, Fu and c of the lifted model.
    Dump {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum DrtoCommand {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_oracle: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RunMode {
    DrtoOnly,
    Full,
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let loaded = config::load(&args.config)?;
    let out = match args.out.or_else(|| loaded.output.clone()) {
        Some(p) => p,
        None => bail!("no output directory: pass --out or set `dir` in `[output]`"),
    };
    let cfg = &loaded.experiment;
    let plant = FourTankPlant::new(cfg.plant.clone())?;
    let oracle = if args.no_oracle {
        None
    } else {
        Some(
            oracle(cfg, &plant, loaded.random_starts, loaded.seed)
                .context("computing the oracle")?,
        )
    };
    let mode = match args.mode {
        RunMode::DrtoOnly => Mode::DrtoOnly,
        RunMode::Full => Mode::Full,
    };
    let rep = run_experiment(cfg, &plant, oracle, mode)?;
    report::emit(&rep, &cfg.cost, &out)?;
    print!("{}", report::summary(&rep));
    Ok(match rep.verdict {
        Verdict::Converged => ExitCode::SUCCESS,
        Verdict::MaxIter => ExitCode::from(2),
        Verdict::Failed(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    })
}

fn print_oracle(path: &Path) -> Result<ExitCode> {
    let loaded = config::load(path)?;
    let cfg = &loaded.experiment;
    let plant = FourTankPlant::new(cfg.plant.clone())?;
    let o = oracle(cfg, &plant, loaded.random_starts, loaded.seed)?;
    print!("{}", report::oracle_csv(&o, &cfg.cost)?);
    eprintln!(
        "oracle cost {} (economic {}), KKT residual {:.3e}",
        o.cost, o.economic_cost, o.kkt_residual
    );
    Ok(ExitCode::SUCCESS)
}

fn dump_model(path: &Path) -> Result<ExitCode> {
    let loaded = config::load(path)?;
    print!("{}", report::model_csv(&loaded.experiment.lifted_model()?));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Oracle { config } => print_oracle(&config),
        Command::Model {
            command: ModelCommand::Dump { config },
        } => dump_model(&config),
        Command::Drto {
            command:
                DrtoCommand::Run {
                    config,
                    out,
                    no_oracle,
                },
        } => run(RunArgs {
            config,
            mode: RunMode::DrtoOnly,
            out,
            no_oracle,
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
