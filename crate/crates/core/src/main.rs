use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hamgd::calculus::{check_derivatives, CHECK_RADIUS};
use hamgd::harness::{load_config, repro_appendix_h, run_experiment, sweep_bilinear_strength, write_sweep, Summary};
use hamgd::spectral::{certify, Region};
use hamgd::Objective;

#[derive(Parser)]
#[command(name = "hamgd", version, about = "Hamiltonian gradient descent and min-max dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its trajectory CSV.
    Run { config: PathBuf },
    /// Run the 20 preset experiments (two objectives, two couplings, five methods).
    #[command(name = "repro-appendix-h")]
    ReproAppendixH {
        #[arg(long, default_value = "appendix_h")]
        outdir: PathBuf,
    },
    /// Report PL constants, smoothness and predicted rates for a config's problem.
    Certify {
        config: PathBuf,
        /// Half-width of the sampled box.
        #[arg(long, default_value_t = CHECK_RADIUS)]
        radius: f64,
        /// Grid points per axis (default: as fine as a 200k-point budget allows).
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Compare analytic derivatives against finite differences.
    Checkgrad {
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Rerun a config's solver over several coupling weights.
    Sweep {
        config: PathBuf,
        /// Comma-separated coupling weights.
        #[arg(long = "c", value_delimiter = ',', required = true)]
        c: Vec<f64>,
        /// Output directory (default: next to the config's output file).
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
}

fn print_summary(s: &Summary) {
    println!(
        "{}: {} after {} steps, final grad_norm {:.6e} -> {}",
        s.label,
        s.terminated_by,
        s.steps,
        s.final_grad_norm,
        s.output.display()
    );
}

fn execute(cli: Cli) -> hamgd::Result<ExitCode> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            print_summary(&run_experiment(&cfg)?);
        }
        Command::ReproAppendixH { outdir } => {
            for s in repro_appendix_h(&outdir)? {
                print_summary(&s);
            }
            println!("summary written to {}", outdir.join("summary.csv").display());
        }
        Command::Certify { config, radius, resolution } => {
            let cfg = load_config(&config)?;
            let problem = cfg.build_problem()?;
            let region = match resolution {
                Some(n) => Region::new(-radius, radius, n)?,
                None => Region::within_budget(radius, problem.dim(), 200_000)?,
            };
            let report = certify(&cfg.label, &problem, &region)?;
            print!("{report}");
            println!("{}", report.machine_line());
        }
        Command::Checkgrad { config, points, seed, tol } => {
            let cfg = load_config(&config)?;
            let problem = cfg.build_problem()?;
            let rep = check_derivatives(&problem, points, seed, tol);
            println!(
                "{}: {} ({} points, max relative error {:.3e} at {:?}, tolerance {:.1e}, {} jacobian checks skipped near kinks)",
                cfg.label,
                if rep.passed { "PASS" } else { "FAIL" },
                rep.points,
                rep.max_rel_error,
                rep.worst_point.as_vector().as_slice(),
                rep.tolerance,
                rep.skipped_jacobian,
            );
            if !rep.passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Sweep { config, c, outdir } => {
            let cfg = load_config(&config)?;
            let rows = sweep_bilinear_strength(&cfg, &c)?;
            let dir = outdir.unwrap_or_else(|| cfg.output.parent().map(Path::to_path_buf).unwrap_or_default());
            let summary = write_sweep(&dir, &cfg.label, &rows)?;
            for r in &rows {
                let iters = r.iters_to_tol.map_or_else(|| "not reached".to_string(), |k| k.to_string());
                println!("c = {}: iterations to tolerance {iters}, final grad_norm {:.6e}", r.c, r.final_grad_norm);
            }
            println!("summary written to {}", summary.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
