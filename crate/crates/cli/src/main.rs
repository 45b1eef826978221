use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nudgefem_cli::{run_suite, Overrides};

/// Continuous data assimilation for the heat equation: saturation and convergence experiments.
#[derive(Debug, Parser)]
#[command(name = "nudgefem", version)]
struct Cli {
    /// TOML file with the same keys as the flags (snake_case); flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    let base = match &cli.config {
        Some(path) => Overrides::from_file(path)?,
        None => Overrides::default(),
    };
    let spec = base.merged(cli.overrides).resolve()?;
    let report = run_suite(&spec)?;
    for run in &report.runs {
        match &run.result {
            Ok(s) => {
                let gamma = s.fit.as_ref().map_or_else(|e| e.clone(), |f| nudgefem_cli::output::format_gamma(f.gamma));
                println!(
                    "{:<28} acc {:.4e}  final L2 {:.4e}  final H1 {:.4e}  gamma {gamma}",
                    run.label, s.accumulated, s.final_l2, s.final_h1
                );
            }
            Err(e) => println!("{:<28} FAILED: {e}", run.label),
        }
    }
    println!("outputs in {}", report.dir.display());
    Ok(report.all_succeeded())
}
