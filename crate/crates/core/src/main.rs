//! Command-line entry point: geometry, spectrum, simulate and verify
//! subcommands over a shared TOML experiment config.

use ballflow::cli::{self, CliError, CurvatureAllowance, ExperimentConfig, EXIT_CONFIG, EXIT_OK};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ballflow",
    version,
    about = "Spectral Galerkin solver for incompressible flow in the ball with Navier friction boundary conditions"
)]
struct Args {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed override for random initial data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Render the SVG decay plot.
    #[arg(long, global = true)]
    plot: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the domain: rigid-field kernel dimension, axis/center,
    /// curvature bound and extrema.
    Geometry,
    /// Assemble the Stokes forms, solve the eigenproblem and report the
    /// spectral constants.
    Spectrum,
    /// Integrate the Galerkin system and write the diagnostics series.
    Simulate,
    /// Check the integral decay inequality on a series CSV and certify the
    /// exponential bound.
    Verify {
        /// Path to a series CSV (as written by `simulate`).
        #[arg(long)]
        series: PathBuf,
        /// Decay rate K to verify.
        #[arg(long)]
        rate: f64,
        /// Column to verify: any CSV column name, or E_dev for the
        /// deviation from the conserved rigid-rotation component.
        #[arg(long, default_value = "E")]
        column: String,
        /// Trapezoid-error allowance: "none", "auto", or an explicit bound
        /// on max |y''|.
        #[arg(long, default_value = "auto")]
        curvature: String,
    },
}

fn load_config(args: &Args) -> Result<ExperimentConfig, CliError> {
    match &args.config {
        Some(path) => ExperimentConfig::from_path(path),
        None => Err(CliError::Config(
            "--config PATH is required for this subcommand".into(),
        )),
    }
}

fn out_dir(args: &Args, config: Option<&ExperimentConfig>) -> PathBuf {
    args.out.clone().unwrap_or_else(|| {
        config
            .map(|c| PathBuf::from(&c.output.dir))
            .unwrap_or_else(|| PathBuf::from("out"))
    })
}

fn run(args: &Args) -> Result<(), CliError> {
    match &args.command {
        Command::Geometry => {
            let config = load_config(args)?;
            cli::run_geometry(&config, &out_dir(args, Some(&config)))
        }
        Command::Spectrum => {
            let config = load_config(args)?;
            cli::run_spectrum(&config, &out_dir(args, Some(&config)))
        }
        Command::Simulate => {
            let config = load_config(args)?;
            cli::run_simulate(&config, &out_dir(args, Some(&config)), args.seed, args.plot)
                .map(|_| ())
        }
        Command::Verify {
            series,
            rate,
            column,
            curvature,
        } => {
            let allowance = match curvature.as_str() {
                "none" => CurvatureAllowance::None,
                "auto" => CurvatureAllowance::Auto,
                value => CurvatureAllowance::Value(value.parse::<f64>().map_err(|_| {
                    CliError::Config(format!(
                        "--curvature must be none, auto or a number, got `{value}`"
                    ))
                })?),
            };
            cli::run_verify(series, column, *rate, allowance, &out_dir(args, None)).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            // Keep clap's help/version on stdout with code 0; real usage
            // errors map to the config exit code.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG as u8)
            } else {
                ExitCode::from(EXIT_OK as u8)
            };
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
