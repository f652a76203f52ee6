use clap::{Parser, Subcommand};
use nozzle_lab::cli::{self, Command, RunOverrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nozzle-lab", version, about = "Thin-channel flow and Korn-constant experiments")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; NOZZLE_LAB_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed of the initial-data perturbation.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Geometry checks.
    Geometry {
        #[command(subcommand)]
        what: GeometryCmd,
    },
    /// Quasi-one-dimensional run.
    #[command(name = "run-1d")]
    Run1d,
    /// Axisymmetric thin-channel run.
    RunAxi,
    /// Relative-energy convergence study.
    Converge {
        #[command(subcommand)]
        limit: Limit,
    },
    /// Korn constants.
    Korn {
        #[command(subcommand)]
        what: KornCmd,
    },
    /// Tangent Poincare constants of cross sections.
    Poincare,
}

#[derive(Subcommand)]
enum GeometryCmd {
    /// Area table, divergence identity and flow reconstruction.
    Check,
}

#[derive(Subcommand)]
enum Limit {
    Inviscid,
    Viscous,
}

#[derive(Subcommand)]
enum KornCmd {
    /// Sweep over epsilon.
    Sweep,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let command = match args.command {
        Cmd::Geometry { what: GeometryCmd::Check } => Command::GeometryCheck,
        Cmd::Run1d => Command::Run1d,
        Cmd::RunAxi => Command::RunAxi,
        Cmd::Converge { limit: Limit::Inviscid } => Command::ConvergeInviscid,
        Cmd::Converge { limit: Limit::Viscous } => Command::ConvergeViscous,
        Cmd::Korn { what: KornCmd::Sweep } => Command::KornSweep,
        Cmd::Poincare => Command::Poincare,
    };
    let cfg = match &args.config {
        Some(p) => cli::load_config(p),
        None => cli::parse_config("", std::path::Path::new(".")),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let overrides = RunOverrides { out: args.out, jobs: args.jobs, seed: args.seed };
    match cli::run(&cfg, command, &overrides) {
        Ok(m) => {
            for a in &m.assertions {
                println!("{} {}: {:.6e} ({})", if a.passed { "PASS" } else { "FAIL" }, a.name, a.value, a.threshold);
            }
            for j in m.jobs.iter().filter(|j| !j.ok) {
                eprintln!("job {} failed: {}", j.name, j.message.as_deref().unwrap_or(""));
            }
            ExitCode::from(m.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
