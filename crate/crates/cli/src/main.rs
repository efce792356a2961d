//! `bloch-edge`: band structures, gap edges, splitting plans and edge homogenization runs.
//!
//! Exit codes: 0 success, 1 `validate` found a failing check, 2 configuration error,
//! 3 solver error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Context;
use config::Overrides;
use output::{OutDir, Stamp};

#[derive(Parser)]
#[command(name = "bloch-edge", version, about = "Bloch bands, gap edges, eigenvalue splitting and edge homogenization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the planewave cutoff `cutoff`.
    #[arg(long, global = true)]
    cutoff: Option<usize>,
    /// Overrides the grid size `grid`.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true)]
    n_bands: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Band CSV and gap report.
    Bands,
    /// Gap report only.
    Gaps,
    /// Certified edge and its quadratic model.
    Edge,
    /// Single-point splitting plan and verification table.
    Split,
    /// Multi-point splitting plan.
    SplitMulti,
    /// Piecewise perturbation making one band simple everywhere.
    GlobalSimple,
    /// Exact vs effective resolvent sweep over epsilon.
    Homog,
    /// Projection-split resolvent norms per epsilon.
    CompareResolvents,
    /// Invariant suite with a pass/fail summary.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Bands => "bands",
            Command::Gaps => "gaps",
            Command::Edge => "edge",
            Command::Split => "split",
            Command::SplitMulti => "split-multi",
            Command::GlobalSimple => "global-simple",
            Command::Homog => "homog",
            Command::CompareResolvents => "compare-resolvents",
            Command::Validate => "validate",
        }
    }
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            return config_error("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    let Some(path) = &cli.config else {
        return config_error("--config is required");
    };
    let overrides = Overrides { seed: cli.seed, cutoff: cli.cutoff, grid: cli.grid, n_bands: cli.n_bands };
    let loaded = match config::load(path, &overrides) {
        Ok(l) => l,
        Err(msg) => return config_error(msg),
    };
    let out = match OutDir::create(&cli.out_dir) {
        Ok(o) => o,
        Err(e) => return config_error(format!("cannot create {}: {e}", cli.out_dir.display())),
    };
    let stamp = Stamp { command: cli.command.name().into(), digest: loaded.digest.clone(), seed: loaded.config.seed };
    let ctx = Context { loaded: &loaded, out: &out, stamp };
    let result = match cli.command {
        Command::Bands => commands::bands(&ctx, true).map(|_| true),
        Command::Gaps => commands::bands(&ctx, false).map(|_| true),
        Command::Edge => commands::edge(&ctx).map(|_| true),
        Command::Split => commands::split(&ctx).map(|_| true),
        Command::SplitMulti => commands::split_multi(&ctx).map(|_| true),
        Command::GlobalSimple => commands::global_simple(&ctx).map(|_| true),
        Command::Homog => commands::homog(&ctx).map(|_| true),
        Command::CompareResolvents => commands::compare_resolvents(&ctx).map(|_| true),
        Command::Validate => commands::validate(&ctx),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if commands::is_config_error(&e) => config_error(e),
        Err(e) => {
            eprintln!("solver error: {e}");
            ExitCode::from(3)
        }
    }
}
