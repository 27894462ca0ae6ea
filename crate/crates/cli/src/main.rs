use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use osl_synth_cli::commands::{self, CliError, SimulateOptions, TubeOptions};

#[derive(Parser)]
#[command(name = "osl-synth", version, about = "Euler-tube controller synthesis for sampled switched systems")]
struct Cli {
    /// Worker threads for estimation, synthesis and simulation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a configuration file.
    Check { config: PathBuf },
    /// Estimate per-mode constants and run the soundness check.
    Constants {
        config: PathBuf,
        /// Write the JSON report here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a controller.
    Synth {
        config: PathBuf,
        /// Controller file (default: <config stem>.controller.json).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Use a report from `constants` instead of estimating again.
        #[arg(long)]
        constants: Option<PathBuf>,
    },
    /// Closed-loop simulation of a complete controller.
    Simulate {
        controller: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 20)]
        cycles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectory CSV: run, t, x_1..x_n, active_mode, ball_index, cycle.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Error tube of one ball under one pattern, as CSV.
    Tube {
        config: PathBuf,
        /// Center coordinates then radius, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        ball: Vec<f64>,
        /// Mode ids separated by spaces or commas, e.g. "1 3 2".
        #[arg(long)]
        pattern: String,
        /// Override the configured sub-sampling factor.
        #[arg(long)]
        substeps: Option<usize>,
        /// Extra samples inside each sub-step.
        #[arg(long, default_value_t = 1)]
        resolution: usize,
        #[arg(long)]
        constants: Option<PathBuf>,
        /// Output file (default: standard output).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Check { config } => commands::check(&config, &mut out),
        Command::Constants { config, out: report } => commands::constants(&config, report.as_deref(), &mut out),
        Command::Synth { config, out: file, constants } => {
            let file = file.unwrap_or_else(|| commands::default_controller_path(&config));
            commands::synth(&config, &file, constants.as_deref(), &mut out)
        }
        Command::Simulate { controller, runs, cycles, seed, csv } => {
            commands::simulate(&controller, SimulateOptions { runs, cycles, seed }, csv.as_deref(), &mut out)
        }
        Command::Tube { config, ball, pattern, substeps, resolution, constants, csv } => {
            let opts = TubeOptions { ball, pattern, substeps, resolution, constants };
            let mut err = std::io::stderr();
            match csv {
                Some(path) => {
                    let mut buf = Vec::new();
                    let code = commands::tube(&config, &opts, &mut buf, &mut err)?;
                    std::fs::write(&path, buf)
                        .map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
                    Ok(code)
                }
                None => commands::tube(&config, &opts, &mut out, &mut err),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_CONFIG } else { commands::EXIT_OK });
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: cannot start {jobs} workers: {e}");
            return ExitCode::from(commands::EXIT_CONFIG);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
