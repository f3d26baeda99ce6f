//! Command-line front end for the SPDC source toolkit.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod scenario;

use commands::{Ctx, Status};
use scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "spdc", version, about = "Simulate and analyse a QPM photon-pair source")]
pub struct Cli {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Table format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a CE spectrum and fit the grating to it.
    Shg,
    /// Fit grating parameters to a CE CSV.
    FitCe {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Simulate pair emission and detection into a tag file.
    Pairs,
    /// Histogram a tag file and extract CAR and PCR.
    Correlate {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// CAR and PCR against pump power.
    CarScan,
    /// Franson histograms, fringe scan and visibility.
    Franson,
    /// Fit the visibility of a fringe CSV.
    FringeFit {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run built-in consistency checks.
    Selftest,
}

/// Run a parsed command line. Returns whether every fit converged.
pub fn run(cli: &Cli) -> Result<Status> {
    let mut scenario = match &cli.scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create output directory {}", cli.out.display()))?;
    let ctx = Ctx {
        scenario,
        out: cli.out.clone(),
        format: cli.format,
    };
    ctx.write_json("scenario.json", &ctx.scenario)?;
    let input = |p: &Option<PathBuf>| p.as_deref().map(Path::to_path_buf);
    match &cli.command {
        Command::Shg => commands::shg(&ctx),
        Command::FitCe { input: i } => commands::fit_ce(&ctx, input(i).as_deref()),
        Command::Pairs => commands::pairs(&ctx),
        Command::Correlate { input: i } => commands::correlate_cmd(&ctx, input(i).as_deref()),
        Command::CarScan => commands::car_scan_cmd(&ctx),
        Command::Franson => commands::franson(&ctx),
        Command::FringeFit { input: i } => commands::fringe_fit(&ctx, input(i).as_deref()),
        Command::Selftest => commands::selftest(&ctx),
    }
}
