use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use gdlab_cli::commands::{self, Command, Sidecar};
use gdlab_cli::config;

#[derive(Parser)]
#[command(name = "gdlab", version, about = "Gradient-descent training dynamics experiments")]
struct Cli {
    /// Worker threads (default: number of available processors).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More progress output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or a `run.json` sidecar from an earlier run.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.eta=7.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: out/<subcommand>).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one network and record its loss/accuracy trajectory.
    Train(RunArgs),
    /// Divergence curves and the Lyapunov exponent estimate at one eta.
    Lyap(RunArgs),
    /// Exponent, chaos fraction and time-to-accuracy over a learning-rate grid.
    Sweep(RunArgs),
    /// Bisect the learning rate where the chaos fraction reaches a target.
    Sweetspot(RunArgs),
    /// Top Hessian eigenvalue along a training trajectory.
    Sharpness(RunArgs),
    /// One-dimensional quadratic-loss map.
    Toymap {
        #[command(subcommand)]
        which: ToyCmd,
    },
    /// Repeat a run from its `run.json` sidecar.
    Rerun {
        sidecar: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
}

#[derive(Subcommand)]
enum ToyCmd {
    /// Late-time iterates over an eta grid.
    Bifurcation(RunArgs),
    /// Lyapunov exponent over an eta grid.
    Lyap(RunArgs),
}

fn execute(cmd: Command, args: &RunArgs) -> Result<()> {
    let cfg = config::resolve(args.config.as_deref(), &args.overrides)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(cmd.dir_name()));
    commands::run(cmd, &cfg, &out, args.overwrite)?;
    Ok(())
}

fn rerun(sidecar: &Path, out: &Path, overwrite: bool) -> Result<()> {
    let text = std::fs::read_to_string(sidecar)
        .with_context(|| format!("cannot read {}", sidecar.display()))?;
    let prev: Sidecar = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a run sidecar", sidecar.display()))?;
    let cmd = commands::from_name(&prev.subcommand)
        .ok_or_else(|| anyhow!("unknown subcommand `{}` in sidecar", prev.subcommand))?;
    let cfg = config::resolve(Some(sidecar), &[])?;
    commands::run(cmd, &cfg, out, overwrite)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }

    let result = match &cli.command {
        Cmd::Train(a) => execute(Command::Train, a),
        Cmd::Lyap(a) => execute(Command::Lyap, a),
        Cmd::Sweep(a) => execute(Command::Sweep, a),
        Cmd::Sweetspot(a) => execute(Command::SweetSpot, a),
        Cmd::Sharpness(a) => execute(Command::Sharpness, a),
        Cmd::Toymap { which: ToyCmd::Bifurcation(a) } => execute(Command::ToyBifurcation, a),
        Cmd::Toymap { which: ToyCmd::Lyap(a) } => execute(Command::ToyLyap, a),
        Cmd::Rerun {
            sidecar,
            out,
            overwrite,
        } => rerun(sidecar, out, *overwrite),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
