//! `lsa-precode`: scenario runner for the recursive convolutional precoder.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 verification failure.

use clap::{Args, Parser, Subcommand};
use lsa_precode::config::{Scale, ScenarioConfig};
use lsa_precode::runner;
use lsa_precode::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lsa-precode", version, about = "Massive-MIMO OFDM downlink precoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON scenario configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment preset: fig3|fig4|fig5|fig6|fig7.
    #[arg(long)]
    preset: Option<String>,
    /// Preset scale.
    #[arg(long, default_value = "desk")]
    scale: String,
    /// Worker threads (0 = all cores). Output is identical for any value.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output CSV path; a run manifest is written alongside.
    #[arg(long, default_value = "out.csv")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial-count override.
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Initialization study: MSE and SER vs order-recursion count.
    InitMse(RunArgs),
    /// Tracking study: per-block MSE and SER across the frame per Doppler.
    Tracking(RunArgs),
    /// Channel-estimation-error study: converged MSE floor and SER.
    ChanError(RunArgs),
    /// SER vs Es/N0 for proposed / shared ZF / MF.
    SerCurve(RunArgs),
    /// Complexity comparison from the closed-form counts.
    Complexity(RunArgs),
    /// Run the built-in invariant suite.
    Verify {
        /// Negative control: flip a sign in the filter update; the suite
        /// must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, Error> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => ScenarioConfig::preset(name, args.scale.parse::<Scale>()?)?,
        (None, Some(path)) => ScenarioConfig::from_json(&std::fs::read_to_string(path)?)?,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "pass --config <path> or --preset <name>".into(),
            ))
        }
    };
    if let (Some(path), Some(_)) = (&args.config, &args.preset) {
        // Flags and config file both given: file overrides preset fields.
        cfg = ScenarioConfig::from_json(&std::fs::read_to_string(path)?)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(args: &RunArgs, out: runner::RunOutput) -> Result<(), Error> {
    std::fs::write(&args.out, out.csv)?;
    let manifest_path = args.out.with_extension("manifest.json");
    std::fs::write(manifest_path, out.manifest)?;
    Ok(())
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::InitMse(args) => {
            let cfg = load_config(&args)?;
            write_output(&args, runner::cmd_init_mse(&cfg, args.threads)?)
        }
        Command::Tracking(args) => {
            let cfg = load_config(&args)?;
            write_output(&args, runner::cmd_tracking(&cfg, args.threads)?)
        }
        Command::ChanError(args) => {
            let cfg = load_config(&args)?;
            write_output(&args, runner::cmd_chan_error(&cfg, args.threads)?)
        }
        Command::SerCurve(args) => {
            let cfg = load_config(&args)?;
            write_output(&args, runner::cmd_ser_curve(&cfg, args.threads)?)
        }
        Command::Complexity(args) => {
            let cfg = load_config(&args)?;
            write_output(&args, runner::cmd_complexity(&cfg)?)
        }
        Command::Verify { inject_fault } => {
            let report = runner::cmd_verify(inject_fault);
            print!("{}", report.render());
            if report.all_passed() {
                Ok(())
            } else {
                Err(Error::Verification("invariant suite failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
