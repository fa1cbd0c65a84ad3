use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use mpdd::config::{load_scenario, parse_scenario, ScenarioSpec, SEED_ENV};
use mpdd_bench::checks::{gradient_check, oracle_check, unitarity_check, CheckSummary};
use mpdd_bench::{
    output_path, parse_modes, parse_snrs, parse_waveforms, run_ber_sweep, run_convergence, run_mse_sweep, write_rows,
    write_trace, SweepSpec, DESK_SCENARIO, ESTIMATE_HEADER, FULL_SCENARIO, RECOVERY_SCENARIO, SWEEP_HEADER,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Full,
    Recovery,
}

#[derive(Debug, Parser)]
#[command(name = "mpdd", version, about = "SIM-parametrized ISAC channel experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario JSON file; the built-in profile is used when absent.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Built-in scenario used when no file is given.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed and the MPDD_SEED variable.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 100)]
    trials: usize,
    /// Comma-separated SNR list in dB.
    #[arg(long, global = true, default_value = "0,5,10,15,20,25,30")]
    snr: String,
    #[arg(long, global = true, default_value = "all")]
    waveform: String,
    #[arg(long = "sim-mode", global = true, default_value = "all")]
    sim_mode: String,
    /// Output file stem inside `<out>/<subcommand>/`.
    #[arg(long, global = true, default_value = "run")]
    label: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimizer trace (iteration, sweep, targeted path, per-path objectives).
    Convergence,
    /// Range/velocity RMSE against SNR.
    Mse,
    /// Uncoded BER against SNR.
    Ber,
    /// Matrix model against the time-domain prefix simulator.
    OracleCheck,
    /// Unitarity, oracle and gradient suites with pass counts.
    Selftest,
}

fn scenario(cli: &Cli) -> Result<ScenarioSpec> {
    let mut spec = match &cli.scenario {
        Some(path) => load_scenario(path).with_context(|| format!("scenario {}", path.display()))?,
        None => parse_scenario(match cli.profile {
            Profile::Desk => DESK_SCENARIO,
            Profile::Full => FULL_SCENARIO,
            Profile::Recovery => RECOVERY_SCENARIO,
        })?,
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn seed(cli: &Cli) -> Result<u64> {
    if let Some(s) = cli.seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .parse()
            .with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer")),
        Err(_) => Ok(mpdd::config::DEFAULT_SEED),
    }
}

fn sweep_spec(cli: &Cli) -> Result<SweepSpec> {
    Ok(SweepSpec {
        waveforms: parse_waveforms(&cli.waveform)?,
        modes: parse_modes(&cli.sim_mode)?,
        snrs_db: parse_snrs(&cli.snr)?,
        trials: cli.trials,
    })
}

fn report(summary: &CheckSummary) -> bool {
    println!(
        "{:<10} {:>6}/{:<6} worst {:.3e}  {}",
        summary.name,
        summary.passed,
        summary.total,
        summary.worst,
        if summary.ok() { "ok" } else { "FAIL" }
    );
    summary.ok()
}

fn run(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::Convergence => {
            let sc = scenario(cli)?;
            let trace = run_convergence(&sc)?;
            let path = output_path(&cli.out, "convergence", &cli.label)?;
            write_trace(&path, &trace)?;
            println!(
                "{} iterations, {} target switches, weakest path {:.4e} -> {:.4e}; wrote {}",
                trace.iterations(),
                trace.switches(),
                trace.initial_min(),
                trace.final_min(),
                path.display()
            );
        }
        Command::Mse | Command::Ber => {
            let sc = scenario(cli)?;
            let spec = sweep_spec(cli)?;
            let is_mse = matches!(cli.command, Command::Mse);
            let name = if is_mse { "mse" } else { "ber" };
            info!("{name} sweep: {} trials", spec.trials);
            let result = if is_mse {
                run_mse_sweep(&sc, &spec)?
            } else {
                run_ber_sweep(&sc, &spec)?
            };
            let path = output_path(&cli.out, name, &cli.label)?;
            write_rows(&path, &result.rows, &SWEEP_HEADER)?;
            if is_mse {
                let est = output_path(&cli.out, name, &format!("{}_estimates", cli.label))?;
                write_rows(&est, &result.estimates, &ESTIMATE_HEADER)?;
            }
            for f in &result.failures {
                eprintln!("failed: {f}");
            }
            println!(
                "{} rows, {} failures; wrote {}",
                result.rows.len(),
                result.failures.len(),
                path.display()
            );
        }
        Command::OracleCheck => {
            let (summary, rows) = oracle_check(&[8, 16, 64], cli.trials, seed(cli)?)?;
            let path = output_path(&cli.out, "oracle-check", &cli.label)?;
            write_rows(&path, &rows, &["waveform", "n", "trial", "paths", "max_abs_error"])?;
            let ok = report(&summary);
            println!("wrote {}", path.display());
            if !ok {
                bail!("oracle check failed");
            }
        }
        Command::Selftest => {
            let s = seed(cli)?;
            let checks = [
                unitarity_check(&[8, 16, 64], 20, s)?,
                oracle_check(&[8, 16, 32], 10, s)?.0,
                gradient_check(10, s)?,
            ];
            let ok = checks.iter().map(report).fold(true, |a, b| a & b);
            if !ok {
                bail!("self test failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
