//! `bdris`: run BD-RIS full-duplex link experiments from the command line.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bdris::channel::generate_channel_set;
use bdris::experiment::{
    emit_results, run_experiment_with_threads, ExperimentKind, ExperimentSpec, OutputFormat,
};
use bdris::reciprocity::{colinearity_gap, dl_power_bound, ul_power_bound, BoundReport};
use bdris::{FileConfig, ScenarioConfig};

/// Environment variable naming a directory whose `default.toml` is loaded
/// when no `--config` is given.
const CONFIG_DIR_ENV: &str = "BDRIS_CONFIG_DIR";

#[derive(Parser)]
#[command(
    name = "bdris",
    version,
    about = "Simulate and optimize a BD-RIS-assisted full-duplex link"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment batch and write records plus aggregates.
    Run(RunArgs),
    /// Print closed-form single-user surface-power bound reports as JSON.
    BoundCheck(BoundCheckArgs),
    /// Solve one scene and emit its normalized beampatterns.
    Beampattern(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file. Without it, `$BDRIS_CONFIG_DIR/default.toml` is
    /// used when present, else the built-in preset of the chosen kind.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of seeds per sweep point.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output stem; files get the format's extension appended.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker thread count (defaults to all cores on parallel builds).
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment kind, e.g. convergence, rate_region, sweep_elements.
    #[arg(long)]
    kind: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BoundCheckArgs {
    /// Element counts to evaluate; defaults to the bound_check preset grid.
    #[arg(long = "elements", value_delimiter = ',')]
    elements: Vec<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn load_config(explicit: &Option<PathBuf>) -> Result<Option<FileConfig>> {
    if let Some(path) = explicit {
        let cfg = FileConfig::from_path(path)
            .with_context(|| format!("loading config {}", path.display()))?;
        return Ok(Some(cfg));
    }
    if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
        let path = PathBuf::from(dir).join("default.toml");
        if path.exists() {
            let cfg = FileConfig::from_path(&path)
                .with_context(|| format!("loading config {}", path.display()))?;
            return Ok(Some(cfg));
        }
    }
    Ok(None)
}

fn build_spec(kind: Option<ExperimentKind>, common: &CommonArgs) -> Result<ExperimentSpec> {
    let spec = match load_config(&common.config)? {
        Some(file) => ExperimentSpec::from_file_config(kind, &file)?,
        None => match kind {
            Some(kind) => ExperimentSpec::canonical(kind),
            None => bail!("no experiment kind given (use --kind or a config file)"),
        },
    };
    Ok(spec)
}

fn emit(spec: &ExperimentSpec, common: &CommonArgs) -> Result<()> {
    let result = run_experiment_with_threads(spec, common.parallelism)?;
    let stem = common
        .out
        .clone()
        .or_else(|| spec.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("{}_results", spec.kind)));
    let files = emit_results(&result, common.format.into(), &stem)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let kind = args
        .kind
        .as_deref()
        .map(|s| s.parse::<ExperimentKind>())
        .transpose()?;
    let mut spec = build_spec(kind, &args.common)?;
    if let Some(seeds) = args.common.seeds {
        spec.n_seeds = seeds;
    }
    emit(&spec, &args.common)
}

/// One closed-form bound evaluation: both link directions plus the channel
/// colinearity gap that separates them.
#[derive(Serialize)]
struct BoundRow {
    n_elements: usize,
    seed: u64,
    dl: BoundReport,
    ul: BoundReport,
    colinearity_gap: f64,
}

fn cmd_bound_check(args: &BoundCheckArgs) -> Result<()> {
    let mut spec = build_spec(Some(ExperimentKind::BoundCheck), &args.common)?;
    if let Some(seeds) = args.common.seeds {
        spec.n_seeds = seeds;
    }
    if !args.elements.is_empty() {
        spec.sweep_values = args.elements.iter().map(|&m| m as f64).collect();
    }
    let mut rows = Vec::new();
    for &v in &spec.sweep_values {
        for j in 0..spec.n_seeds {
            let scen = ScenarioConfig {
                n_ris_elements: v as usize,
                rng_seed: spec.base_seed + j as u64,
                ..spec.scenario.clone()
            };
            scen.validate()?;
            let ch = generate_channel_set(&scen)?;
            let g = ch.bs_ris.column(0).into_owned();
            rows.push(BoundRow {
                n_elements: scen.n_ris_elements,
                seed: scen.rng_seed,
                dl: dl_power_bound(&ch.ris_dl[0], &g)?,
                ul: ul_power_bound(&g, &ch.ris_ul[0])?,
                colinearity_gap: colinearity_gap(&ch.ris_dl[0], &ch.ris_ul[0])?,
            });
        }
    }
    let json = serde_json::to_string_pretty(&rows)?;
    match &args.common.out {
        Some(path) => {
            let path = path.with_extension("json");
            std::fs::write(&path, format!("{json}\n"))?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_beampattern(common: &CommonArgs) -> Result<()> {
    let mut spec = build_spec(Some(ExperimentKind::Beampattern), common)?;
    if let Some(seeds) = common.seeds {
        spec.n_seeds = seeds;
    }
    emit(&spec, common)
}

fn main() -> Result<()> {
    match &Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::BoundCheck(args) => cmd_bound_check(args),
        Command::Beampattern(common) => cmd_beampattern(common),
    }
}
