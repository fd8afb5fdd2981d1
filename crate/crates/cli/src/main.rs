//! `conceptlab` command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod activation_cmds;
mod config;
mod intervention_cmds;
mod model_cmds;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{CliError, CliResult, Inputs, EXIT_OK, EXIT_USAGE};
use crate::model_cmds::RateKind;

#[derive(Debug, Parser)]
#[command(name = "conceptlab", version, about = "Concept-subspace analysis toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Global {
    /// Root seed for every random draw; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config for the subcommand; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print errors as JSON on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a basis, covariance, task and demonstrations.
    Simulate(model_cmds::SimulateArgs),
    /// Split a ridge fit into concept estimate and leakage.
    Decompose(model_cmds::DecomposeArgs),
    /// Error and sensitivity scaling with the number of demonstrations.
    Rates(model_cmds::RatesArgs),
    /// Scaling sweep with label noise.
    RatesNoisy(model_cmds::RatesArgs),
    /// Sweep over cross-block coupling.
    RatesNbd(model_cmds::RatesArgs),
    /// Recover the concept span from per-task moments.
    Identify(model_cmds::IdentifyArgs),
    /// Estimate the concept subspace of stored activations.
    EstimateSubspace(activation_cmds::EstimateArgs),
    /// Selected rank across sample sizes and shot counts.
    RankSweep(activation_cmds::RankSweepArgs),
    /// Patch clean activations into corrupted runs.
    Patch(intervention_cmds::InterventionArgs),
    /// Swap activations between relations.
    Swap(intervention_cmds::InterventionArgs),
    /// Learned subspace against random and cross-task controls.
    Controls(intervention_cmds::InterventionArgs),
    /// Noise restricted to the subspace, its complement, or everywhere.
    Noise(intervention_cmds::InterventionArgs),
    /// Run the same arms at every layer.
    Layers(intervention_cmds::LayersArgs),
    /// Geometry diagnostics for stored activations.
    Diag(activation_cmds::DiagArgs),
    /// Merge reports into one.
    Report(activation_cmds::MergeArgs),
}

fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    let mut inputs = Inputs::default();
    if let Some(path) = &g.config {
        inputs.add(path)?;
    }
    let mut report = match &cli.command {
        Command::Simulate(a) => model_cmds::simulate(g, a, &mut inputs),
        Command::Decompose(a) => model_cmds::decompose(g, a, &mut inputs),
        Command::Rates(a) => model_cmds::rates(g, a, RateKind::Plain, &mut inputs),
        Command::RatesNoisy(a) => model_cmds::rates(g, a, RateKind::Noisy, &mut inputs),
        Command::RatesNbd(a) => model_cmds::rates(g, a, RateKind::Coupled, &mut inputs),
        Command::Identify(a) => model_cmds::identify(g, a, &mut inputs),
        Command::EstimateSubspace(a) => activation_cmds::estimate(g, a, &mut inputs),
        Command::RankSweep(a) => activation_cmds::rank_sweep(g, a, &mut inputs),
        Command::Patch(a) => intervention_cmds::patch(g, a, &mut inputs),
        Command::Swap(a) => intervention_cmds::swap(g, a, &mut inputs),
        Command::Controls(a) => intervention_cmds::controls(g, a, &mut inputs),
        Command::Noise(a) => intervention_cmds::noise(g, a, &mut inputs),
        Command::Layers(a) => intervention_cmds::layers(g, a, &mut inputs),
        Command::Diag(a) => activation_cmds::diag(g, a, &mut inputs),
        Command::Report(a) => activation_cmds::merge(g, a, &mut inputs),
    }?;
    report.inputs = inputs.0;
    for n in &report.notices {
        log::warn!("{n}");
    }
    output::emit(&report, g.out.as_ref())
}

fn report_error(err: &CliError, json: bool) {
    if json {
        eprintln!("{}", err.to_json());
    } else {
        eprintln!("error: {err}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let wants_json = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::from(EXIT_OK as u8);
            }
            if matches!(e.kind(), ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                eprint!("{e}");
            } else {
                report_error(&CliError::Usage(e.to_string().trim().to_string()), wants_json);
            }
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            report_error(&e, cli.global.json_errors);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
