use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wavedp::accountant::{self, MechanismParams, RdpLedger};
use wavedp::experiment;

/// Differentially private federated learning with Haar-wavelet noise.
#[derive(Debug, Parser)]
#[command(name = "wavedp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every arm of an experiment spec.
    Run {
        spec: PathBuf,
        /// Output directory (overrides `out_dir` in the spec).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run arms concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Compare final accuracy across arm output directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Privacy spent by a subsampled Gaussian mechanism.
    Accountant {
        /// Poisson sampling rate.
        #[arg(long)]
        q: f64,
        /// Noise multiplier (per coefficient when --wavelet-m is given).
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Padded length of the wavelet transform; converts `sigma` to the
        /// effective multiplier.
        #[arg(long)]
        wavelet_m: Option<usize>,
    },
}

fn accountant_report(
    q: f64,
    sigma: f64,
    steps: u64,
    delta: f64,
    m: Option<usize>,
) -> Result<String, accountant::AccountantError> {
    let z = match m {
        Some(m) => accountant::effective_noise_multiplier(sigma, m)?,
        None => sigma,
    };
    let ledger = RdpLedger::default().compose(&MechanismParams::new(q, z)?, steps)?;
    let (eps, order) = ledger.to_epsilon(delta)?;
    let mut s = format!("effective noise multiplier: {z}\n");
    s.push_str(&format!(
        "epsilon: {eps}\ndelta: {delta}\noptimal order: {order}\n"
    ));
    Ok(s)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            spec,
            out,
            parallel,
        } => match experiment::run_experiment(&spec, out.as_deref(), parallel) {
            Ok(results) => {
                for r in results {
                    let last = r.metrics.last();
                    println!(
                        "{}: accuracy {:.4}, epsilon {}",
                        r.name,
                        last.map_or(f64::NAN, |m| m.test_accuracy),
                        last.map_or(f64::NAN, |m| m.epsilon_spent),
                    );
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Compare { dirs } => match experiment::report_compare(&dirs) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Accountant {
            q,
            sigma,
            steps,
            delta,
            wavelet_m,
        } => match accountant_report(q, sigma, steps, delta, wavelet_m) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
