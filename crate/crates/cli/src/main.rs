use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lgtime_cli::commands::{cmd_lg, cmd_rabi, cmd_spectra, cmd_validate, Overrides};
use lgtime_cli::{CliError, ExperimentConfig, ModelName};

/// Leggett-Garg experiments on a continuously measured driven qubit.
#[derive(Parser, Debug)]
#[command(name = "lgtime", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file (Hz and seconds)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// trace model for `lg`
    #[arg(long, global = true, value_name = "NAME")]
    model: Option<ModelName>,
    /// noise-free, decoherence-free curve for `lg`
    #[arg(long, global = true)]
    ideal: bool,
    /// reduced workload
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ensemble Rabi oscillations and Bloch fits
    Rabi,
    /// Analytic and master-equation spectra with an agreement table
    Spectra,
    /// Detector pipeline and Leggett-Garg analysis
    Lg,
    /// Acceptance suite; exit status 1 when a criterion fails
    Validate,
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        model: cli.model,
    }
    .apply(&mut cfg);
    cfg.validate()?;
    if cli.ideal && !matches!(cli.command, Command::Lg) {
        return Err(CliError::Config("--ideal only applies to `lg`".into()));
    }
    match cli.command {
        Command::Rabi => {
            let s = cmd_rabi(&cfg, cli.quick)?;
            println!("{:>8} {:>10} {:>14} {:>14} {:>12}", "nbar", "nbar_meas", "gamma2 (1/s)", "gamma_ph (1/s)", "tau_exp (ns)");
            for r in &s.rows {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
                println!(
                    "{:>8} {:>10.4} {:>14} {:>14} {:>12}",
                    r.nbar,
                    r.nbar_measured,
                    f(r.gamma2_fit),
                    f(r.gamma_phi_ph),
                    r.tau_exp.map_or("-".to_string(), |t| format!("{:.1}", t * 1e9))
                );
            }
            if let Some(sl) = s.slope {
                println!(
                    "dephasing slope {:.4e} 1/s per photon, predicted {:.4e} ({:+.1}%)",
                    sl.slope,
                    sl.predicted,
                    100.0 * sl.relative_error()
                );
            }
        }
        Command::Spectra => {
            let rows = cmd_spectra(&cfg, cli.quick)?;
            println!("{:>8} {:>10} {:>10}", "nbar", "rabi_MHz", "L1 error");
            for r in rows {
                let e = r.l1_error.map_or("-".to_string(), |e| format!("{:.2}%", 100.0 * e));
                println!("{:>8} {:>10} {:>10}", r.nbar, r.rabi_hz / 1e6, e);
            }
        }
        Command::Lg => {
            let s = cmd_lg(&cfg, cli.ideal, cli.quick)?;
            println!(
                "{}: f* = {:.4} at tau = {:.2} ns, sigma = {:.4}, systematic = {:.4}, K(0) = {:.4}, significance = {:.2}",
                s.model,
                s.f_star,
                s.tau_star_s * 1e9,
                s.sigma_star,
                s.systematic,
                s.k0,
                s.significance
            );
        }
        Command::Validate => {
            let report = cmd_validate(&cfg, cli.quick)?;
            if !report.passed {
                eprintln!("failed criteria: {:?}", report.failed_ids());
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
