//! Command-line front-end: run experiment configs or named presets and emit
//! `report.json` plus per-curve CSV files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use risfit::analysis::NmseDomain;
use risfit::experiments::{
    list_presets, load_spec, preset, run_experiment, write_report, ExperimentReport, ExperimentSpec,
};
use risfit::Error;

#[derive(Parser)]
#[command(
    name = "risfit",
    version,
    about = "RIS channel simulation and mixture fitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Linear,
    Log10,
}

impl From<DomainArg> for NmseDomain {
    fn from(value: DomainArg) -> Self {
        match value {
            DomainArg::Linear => NmseDomain::Linear,
            DomainArg::Log10 => NmseDomain::Log10,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Channel realization count override.
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory for report.json and curve CSVs.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Domain for the NMSE goodness-of-fit table.
    #[arg(long)]
    nmse_domain: Option<DomainArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Run a named preset scenario.
    Preset {
        name: String,
        /// Transmit antenna count (fig1a presets only).
        #[arg(long)]
        antennas: Option<usize>,
        #[command(flatten)]
        common: RunArgs,
    },
    /// List the available preset names.
    ListPresets,
}

fn apply_overrides(spec: &mut ExperimentSpec, args: &RunArgs) {
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(samples) = args.samples {
        spec.scenario.sample_count = samples;
    }
    if let Some(domain) = args.nmse_domain {
        spec.nmse_domain = domain.into();
    }
}

fn print_summary(report: &ExperimentReport) {
    if let Some(name) = &report.preset_name {
        println!("preset: {name}");
    }
    let f = &report.fitted;
    println!(
        "fitted mixture: omega = ({:.4}, {:.4}), m = ({:.4}, {:.4}), Omega = ({:.3e}, {:.3e})",
        f.omega1, f.omega2, f.m1, f.m2, f.spread1, f.spread2
    );
    println!("iterations: {} (converged: {})", f.iterations, f.converged);
    for (method, score) in &report.nmse_table {
        println!("nmse[{method}] = {score:.4}");
    }
    let t = report.timing;
    eprintln!(
        "timing: simulate {:.2}s, fit {:.2}s, evaluate {:.2}s",
        t.simulate.as_secs_f64(),
        t.fit.as_secs_f64(),
        t.evaluate.as_secs_f64()
    );
}

fn execute(spec: ExperimentSpec, args: &RunArgs) -> Result<ExperimentReport, Error> {
    let report = run_experiment(&spec)?;
    let written = write_report(&args.out_dir, &report)?;
    print_summary(&report);
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(report)
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::ListPresets => {
            for name in list_presets() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, common } => {
            let mut spec = load_spec(&config)?;
            apply_overrides(&mut spec, &common);
            let report = execute(spec, &common)?;
            Ok(exit_for(&report))
        }
        Command::Preset {
            name,
            antennas,
            common,
        } => {
            let mut spec = preset(&name)?;
            if let Some(m) = antennas {
                spec.scenario.m_antennas = m;
            }
            apply_overrides(&mut spec, &common);
            let report = execute(spec, &common)?;
            Ok(exit_for(&report))
        }
    }
}

/// A run whose EM fit did not converge still writes its report but signals
/// the numerical condition through the exit code.
fn exit_for(report: &ExperimentReport) -> ExitCode {
    if report.fitted.converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("warning: EM did not converge within the iteration budget");
        ExitCode::from(3)
    }
}

/// Die quietly when output is piped into a closed reader (`… | head`).
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
