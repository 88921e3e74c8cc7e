//! `npde`: solve, train, generate blocks and run self-checks from JSON configs.

mod commands;
mod config;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, CommandFactory, Parser, Subcommand};

use commands::RunContext;
use config::{resolve, ExperimentConfig};

#[derive(Parser)]
#[command(name = "npde", version, about = "Finite-difference neural PDE engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides NPDE_OUT and io.out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// March a PDE forward in time.
    Solve(Common),
    /// Fit pipeline parameters to a dataset.
    Train(Common),
    /// Generate a network block from the discretization.
    GenBlock(Common),
    /// Run built-in checks.
    Verify {
        /// One of stencils, equivalence, gradients, oracles, all.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Accepted for symmetry with the other commands; unused.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

pub enum Failure {
    Config(anyhow::Error),
    SolveDiverged(usize),
    TrainDiverged(usize),
    VerifyFailed(usize),
    NotConverged,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

impl From<npde::NpdeError> for Failure {
    fn from(e: npde::NpdeError) -> Self {
        Failure::Config(e.into())
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig, config_dir: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os("NPDE_OUT").filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.io.as_ref().and_then(|io| io.out_dir.as_ref()).map(|p| resolve(config_dir, p)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn context(c: Common) -> Result<RunContext, Failure> {
    let config = ExperimentConfig::load(&c.config)?;
    let config_dir = c.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_dir = out_dir(c.out, &config, &config_dir);
    Ok(RunContext { config, config_dir, out_dir, seed_override: c.seed })
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Solve(c) => commands::cmd_solve(&context(c)?),
        Command::Train(c) => commands::cmd_train(&context(c)?),
        Command::GenBlock(c) => commands::cmd_gen_block(&context(c)?),
        Command::Verify { suite, config, .. } => {
            if !verify::is_suite(&suite) {
                let mut cmd = Cli::command().bin_name("npde");
                cmd.build();
                let usage = cmd.find_subcommand_mut("verify").expect("defined above").render_usage();
                return Err(Failure::Config(anyhow::anyhow!(
                    "unknown suite `{suite}` (expected one of {})\n\n{usage}",
                    verify::SUITES.join(", ")
                )));
            }
            if let Some(p) = config {
                ExperimentConfig::load(&p).with_context(|| format!("invalid config {}", p.display()))?;
            }
            let checks = verify::run(&suite)?;
            for c in &checks {
                println!("{}", c.line());
            }
            match checks.iter().filter(|c| !c.passed()).count() {
                0 => Ok(()),
                n => Err(Failure::VerifyFailed(n)),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::SolveDiverged(step)) => {
            eprintln!("error: solution diverged at step {step}");
            ExitCode::from(2)
        }
        Err(Failure::TrainDiverged(epoch)) => {
            eprintln!("error: training diverged at epoch {epoch}");
            ExitCode::from(3)
        }
        Err(Failure::VerifyFailed(n)) => {
            eprintln!("error: {n} check(s) failed");
            ExitCode::from(4)
        }
        Err(Failure::NotConverged) => {
            eprintln!("training stopped before reaching the target loss");
            ExitCode::from(5)
        }
    }
}
