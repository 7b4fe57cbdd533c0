use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use chemolab::cutoff::{CutoffMode, CutoffSpec};
use chemolab::grid::Grid;
use chemolab::runner::{cmd_cutoff_check, cmd_maxreg, cmd_run, cmd_sweep, MaxRegArgs};
use chemolab::verify;

#[derive(Parser, Debug)]
#[command(name = "chemolab", version, about = "Chemotaxis-growth numerical lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation from a TOML config.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the acceptance suite.
    Verify {
        /// Restrict to these criterion ids (repeatable).
        #[arg(long)]
        only: Vec<u32>,
    },
    /// Vary one config key over several values, one run directory per value.
    Sweep {
        config: PathBuf,
        /// Dotted key, e.g. `coefficients.u0_expr` or `time.T`.
        #[arg(long)]
        key: String,
        /// Value as a TOML literal; bare text is taken as a string (repeatable).
        #[arg(long = "value", required = true)]
        values: Vec<String>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Estimate the discrete maximal-regularity constant of the Neumann heat problem.
    Maxreg {
        #[arg(long, default_value_t = 8)]
        nx: usize,
        #[arg(long, default_value_t = 8)]
        ny: usize,
        #[arg(long = "Lx", default_value_t = 1.0)]
        lx: f64,
        #[arg(long = "Ly", default_value_t = 1.0)]
        ly: f64,
        #[arg(long = "T", default_value_t = 0.05)]
        t_final: f64,
        #[arg(long)]
        dt: Option<f64>,
        /// Time exponents (comma separated or repeated).
        #[arg(long, value_delimiter = ',', default_value = "2")]
        p: Vec<f64>,
        /// Space exponents (comma separated or repeated).
        #[arg(long, value_delimiter = ',', default_value = "2")]
        q: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 500)]
        budget: usize,
        #[arg(long, default_value = "maxreg")]
        out: PathBuf,
    },
    /// Build a cutoff, print C_phi and write phi, |grad phi|, lap phi as text grids.
    CutoffCheck {
        #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long)]
        r_inner: f64,
        #[arg(long)]
        r_outer: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long, value_enum, default_value_t = Mode::Tensor)]
        mode: Mode,
        #[arg(long, default_value_t = 64)]
        nx: usize,
        #[arg(long, default_value_t = 64)]
        ny: usize,
        #[arg(long = "Lx", default_value_t = 1.0)]
        lx: f64,
        #[arg(long = "Ly", default_value_t = 1.0)]
        ly: f64,
        #[arg(long, default_value = "cutoff")]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Radial,
    Tensor,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, out } => {
            let s = cmd_run(&config, &out).with_context(|| format!("run {}", config.display()))?;
            println!("{}", s.line());
            if !s.mass_bound_passed {
                println!("status=fail reason=mass_bound worst_margin={:e}", s.mass_bound_margin);
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { only } => {
            let results = if only.is_empty() {
                verify::run_all()
            } else {
                let mut v = Vec::new();
                for id in only {
                    match verify::run_criterion(id) {
                        Some(r) => v.push(r),
                        None => bail!("unknown criterion {}", id),
                    }
                }
                v
            };
            for r in &results {
                println!("{}", r.line());
            }
            let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
            println!(
                "summary passed={} failed={} failed_ids={}",
                results.len() - failed.len(),
                failed.len(),
                if failed.is_empty() { "none".to_string() } else { failed.join(",") }
            );
            Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Sweep { config, key, values, out } => {
            let runs =
                cmd_sweep(&config, &key, &values, &out).with_context(|| format!("sweep {}", config.display()))?;
            let mut ok = true;
            for s in &runs {
                println!("{}", s.line());
                ok &= s.mass_bound_passed;
            }
            if !ok {
                println!("status=fail reason=mass_bound");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Maxreg { nx, ny, lx, ly, t_final, dt, p, q, seeds, budget, out } => {
            let args = MaxRegArgs { nx, ny, lx, ly, t_final, dt, p, q, seeds, budget };
            let rep = cmd_maxreg(&args, &out)?;
            println!("dt={:e} steps={}", rep.dt, rep.steps);
            for s in &rep.samples {
                println!(
                    "p={} q={} K_hat={:e} iterations={} converged={}",
                    s.p, s.q, s.k_hat, s.iterations, s.converged
                );
            }
            if let Some(n) = rep.svd_norm {
                println!("svd_norm.p2.q2={:e}", n);
            }
            println!("report={}", out.join("probe.meta").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::CutoffCheck { x0, r_inner, r_outer, eta, mode, nx, ny, lx, ly, out } => {
            let x0 = match x0.as_slice() {
                [x, y] => (*x, *y),
                _ => bail!("--x0 takes two values"),
            };
            let mode = match mode {
                Mode::Radial => CutoffMode::Radial,
                Mode::Tensor => CutoffMode::Tensor,
            };
            let grid = Grid::new(nx, ny, lx, ly)?;
            let spec = CutoffSpec { x0, r_inner, r_outer, eta, mode };
            let rep = cmd_cutoff_check(&spec, &grid, Some(&out))?;
            print!("{}", rep.meta());
            Ok(if rep.bounds_hold { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
