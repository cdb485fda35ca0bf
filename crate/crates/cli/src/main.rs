use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hexcal::calibration::CompensationOption;
use hexcal_cli::{Globals, CmdResult, EXIT_INPUT};

#[derive(Parser)]
#[command(name = "hexcal", version, about = "Hexapod kinematics and least-squares pose calibration")]
struct Cli {
    /// Geometry TOML file (defaults to the built-in reference layout)
    #[arg(long, global = true)]
    geometry: Option<PathBuf>,
    /// Override every seed in the scenario
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or output directory for `calibrate`
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leg lengths for a pose: x y z (mm) alpha beta gamma (deg)
    Ik {
        #[arg(num_args = 6, allow_negative_numbers = true, required = true)]
        pose: Vec<f64>,
    },
    /// Pose for six leg lengths (mm)
    Fk {
        #[arg(num_args = 6, allow_negative_numbers = true, required = true)]
        legs: Vec<f64>,
        /// Starting pose for the iteration (defaults to home)
        #[arg(long, num_args = 6, allow_negative_numbers = true)]
        guess: Option<Vec<f64>>,
    },
    /// Simulate a measurement campaign and write the dataset CSV
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Fit a compensation model and write model, predictions and report
    Calibrate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        option: u8,
    },
    /// Re-measure predicted poses and report against a baseline
    Verify {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Report CSV or dataset CSV
        #[arg(long)]
        baseline: PathBuf,
    },
    /// Error report for a dataset or per-pose error CSV
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Per-pose absolute-error CSV for plotting
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn six(v: &[f64]) -> [f64; 6] {
    v.try_into().expect("clap enforces six values")
}

fn run(cli: Cli) -> CmdResult {
    let g = Globals {
        geometry: cli.geometry,
        seed: cli.seed,
        output: cli.output,
    };
    match cli.command {
        Command::Ik { pose } => hexcal_cli::cmd_ik(&g, six(&pose)),
        Command::Fk { legs, guess } => hexcal_cli::cmd_fk(&g, six(&legs), guess.as_deref().map(six)),
        Command::Simulate { scenario } => hexcal_cli::cmd_simulate(&g, &scenario),
        Command::Calibrate { dataset, option } => {
            let option = CompensationOption::from_number(option).expect("range checked");
            hexcal_cli::cmd_calibrate(&g, &dataset, option)
        }
        Command::Verify {
            predictions,
            scenario,
            baseline,
        } => hexcal_cli::cmd_verify(&g, &predictions, &scenario, &baseline),
        Command::Report {
            input,
            baseline,
            plot,
        } => hexcal_cli::cmd_report(&g, &input, baseline.as_deref(), plot.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
