use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdeconv::coeff_info::coeff_info;
use sdeconv::descriptor::from_params;
use sdeconv::{run_convergence, run_verify, ExperimentConfig, Selector};

#[derive(Parser)]
#[command(name = "sdeconv", version, about = "Strong convergence experiments for Euler–Maruyama with irregular coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coupled convergence experiment and write errors.csv, fit.json, plotdata.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Overrides `estimators.batch_paths`.
        #[arg(long)]
        batch: Option<usize>,
        /// Exit with status 2 if the run produced estimator warnings.
        #[arg(long)]
        deny_warnings: bool,
    },
    /// Run verification suites: all, 3.1, 3.2, 3.4, 3.5, 3.6, yw, certs.
    Verify {
        #[arg(long)]
        lemma: Selector,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Print the certificate summary of a coefficient.
    Coeff {
        #[arg(long)]
        kind: String,
        /// `key=value` pairs, repeatable or comma separated.
        #[arg(long, num_args = 0..)]
        params: Vec<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            batch,
            deny_warnings,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(b) = batch {
                cfg.estimators.batch_paths = b;
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| anyhow::anyhow!("no output directory: pass --out or set output_dir"))?;
            let outcome = run_convergence(&cfg, &out, workers)?;
            for r in &outcome.report.rows {
                println!("n={:>6}  e={:.6e}  se={:.2e}  e·log n={:.4}", r.n, r.error_mean, r.error_se, r.error_times_logn());
            }
            for f in &outcome.report.fits {
                println!("{}: c={:.6} slope={:.4} residual={:.4e}", f.model.name(), f.c, f.slope, f.residual);
            }
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            Ok(if deny_warnings && !outcome.report.warnings.is_empty() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Verify { lemma, config, workers } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_verify(&cfg, &lemma, workers)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Coeff { kind, params } => {
            let d = from_params(&kind, &params)?;
            print!("{}", coeff_info(&d)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
