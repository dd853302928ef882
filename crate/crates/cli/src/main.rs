//! Batch pipeline front-end: load a road network, match trips, enrich
//! the records and run the analyses.
//!
//! Exit codes: 0 success, 2 input parse, 3 network, 4 enrichment,
//! 5 analysis.

mod commands;
mod config;
mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "trace-enrich",
    version,
    about = "Snap noisy vehicle GPS trips onto a road network and enrich them with map features"
)]
struct Cli {
    /// TOML configuration file; every key is overridable with
    /// `--section.key value` after the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Snap raw trips onto the road network
    Match {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Annotate matched trips with limits, elevation and infrastructure
    Enrich {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Build per-speed-limit energy statistics from enriched records
    Stats {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Estimate per-trip energy from the statistics
    Estimate {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Free-flow speed histogram under one speed limit
    Histogram {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Speed-over-time-of-day heatmap with lowest-population contours
    Heatmap {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Extract fixed-length learning segments with median-speed targets
    Segments {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("TRACE_ENRICH_LOG", "warn"),
    )
    .init();

    let cli = Cli::parse();
    let (overrides, run): (&[String], fn(&PipelineConfig) -> anyhow::Result<()>) =
        match &cli.command {
            Command::Match { overrides } => (overrides, commands::cmd_match),
            Command::Enrich { overrides } => (overrides, commands::cmd_enrich),
            Command::Stats { overrides } => (overrides, commands::cmd_stats),
            Command::Estimate { overrides } => (overrides, commands::cmd_estimate),
            Command::Histogram { overrides } => (overrides, commands::cmd_histogram),
            Command::Heatmap { overrides } => (overrides, commands::cmd_heatmap),
            Command::Segments { overrides } => (overrides, commands::cmd_segments),
        };

    let config = match PipelineConfig::load(cli.config.as_deref(), overrides) {
        Ok(c) => c,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    };

    if let Err(err) = run(&config) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

/// Stable exit-code contract over the library error taxonomy.
fn exit_code(err: &anyhow::Error) -> i32 {
    use trace_enrich::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::Parse { .. }
            | E::OutOfOrder { .. }
            | E::Csv(_)
            | E::InvalidCoordinate { .. }
            | E::EmptyTrace
            | E::InvalidParam { .. },
        ) => 2,
        Some(E::EmptyNetwork) => 3,
        Some(E::ElevationCoverage { .. }) => 4,
        Some(
            E::EmptyHistogram | E::UncoveredTrip { .. } | E::Shape { .. } | E::SeriesTooShort { .. },
        ) => 5,
        _ => 1,
    }
}
