use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use coagsens::config::{parse_override, parse_pairs};
use coagsens::harness::validate::run_validation;
use coagsens::harness::{
    run_convergence_study, run_efficiency_study, run_experiment, write_oracle, ConvergenceReference,
};
use coagsens::ExperimentConfig;

/// Coupled stochastic particle estimators of coagulation sensitivities.
#[derive(Parser)]
#[command(name = "coagsens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate L replicates and write sensitivity and event tables.
    Run(Common),
    /// Measure c_tot over the N ladder at fixed N·L.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Reference sensitivity for c_tot.
        #[arg(long, value_enum, default_value_t = Reference::Oracle)]
        reference: Reference,
    },
    /// Compare inefficiency of the three algorithms.
    Efficiency(Common),
    /// Run the invariant suites.
    Validate(Common),
    /// Write the deterministic reference sensitivity only.
    Oracle(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Reference {
    Oracle,
    Largest,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// File pairs first, then `--set`, then the dedicated flags.
    fn config(&self) -> Result<ExperimentConfig> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        for o in &self.overrides {
            pairs.push(parse_override(o)?);
        }
        if let Some(s) = self.seed {
            pairs.push(("seed".into(), s.to_string()));
        }
        if let Some(w) = self.workers {
            pairs.push(("workers".into(), w.to_string()));
        }
        Ok(ExperimentConfig::from_pairs(&pairs)?)
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let config = c.config()?;
            let result = run_experiment(&config)?;
            report(&result.write(&c.out)?);
            if result.extinctions > 0 {
                println!(
                    "{} replicates ran out of pairs before t_end",
                    result.extinctions
                );
            }
        }
        Command::Converge {
            common: c,
            reference,
        } => {
            let config = c.config()?;
            let reference = match reference {
                Reference::Oracle => ConvergenceReference::Oracle,
                Reference::Largest => ConvergenceReference::LargestRun,
            };
            let result = run_convergence_study(&config, reference)?;
            report(&result.write(&c.out)?);
            println!(
                "slope {:.4} (stderr {:.4})",
                result.fit.slope, result.fit.slope_stderr
            );
        }
        Command::Efficiency(c) => {
            let config = c.config()?;
            let result = run_efficiency_study(&config)?;
            report(&result.write(&c.out)?);
        }
        Command::Validate(c) => {
            let config = c.config()?;
            let outcomes = run_validation(&config)?;
            let mut failed = Vec::new();
            for o in &outcomes {
                println!(
                    "{} {}: {}",
                    if o.passed { "ok  " } else { "FAIL" },
                    o.name,
                    o.detail
                );
                if !o.passed {
                    failed.push(o.name);
                }
            }
            if !failed.is_empty() {
                bail!("validation failed: {}", failed.join(", "));
            }
        }
        Command::Oracle(c) => {
            let config = c.config()?;
            report(&write_oracle(&config, &c.out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
