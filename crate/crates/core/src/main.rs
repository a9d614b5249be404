//! Command-line front end: signal generation, solving, width estimation,
//! rate-bound evaluation, phase-grid experiments, and heatmap plotting.
//!
//! Output protocol: one line of space-separated `key=value` pairs per
//! command on stdout. Generic floats are printed with 6 fixed decimals;
//! residual-like quantities (feasibility residual, standard error) use
//! scientific notation with 3 decimals. Exit codes: 0 success, 2 flag
//! errors (with usage), 1 runtime failure (one-line diagnostic on stderr).

use clap::{Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use tvmin::conegeom::{DEFAULT_INNER_TOLERANCE, DEFAULT_NUM_SAMPLES};
use tvmin::phaselab::{grid_to_csv_string, ExperimentSpec, HeatmapOverlays};
use tvmin::signals::{read_signal_text, write_signal_text, LevelSource, PiecewiseConstantSpec};
use tvmin::{
    check_recovery, derive_seed, estimate_statistical_dimension, discretize_pc, make_dense_jump,
    make_equidistant, read_grid_csv, render_heatmap_svg, run_phase_grid, solve_tv,
    theoretical_rate, transition_location, MeasurementEnsemble, Signal, SolveStatus, SolverConfig,
};

#[derive(Parser)]
#[command(
    name = "tvmin",
    version,
    about = "1D total-variation recovery and phase-transition experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Equidistant,
    DenseJump,
    Pc,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a signal and write it as a flat text file.
    Gen {
        #[arg(long, value_enum)]
        class: ClassArg,
        #[arg(long)]
        n: usize,
        /// Jump count (ignored for class pc).
        #[arg(long, default_value_t = 0)]
        s: usize,
        /// Level seed for the equidistant class.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Breakpoints in (0, 1], comma-separated, last must be 1 (class pc).
        #[arg(long)]
        breakpoints: Option<String>,
        /// Piece levels, comma-separated, one per piece (class pc).
        #[arg(long)]
        levels: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a Gaussian ensemble, measure a stored signal, and solve.
    Solve {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        m: usize,
        /// Seed of the measurement ensemble.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative l2 recovery tolerance.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 20_000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-7)]
        conv_tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        feas_tol: f64,
    },
    /// Monte-Carlo statistical-dimension estimate at a stored signal.
    Width {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NUM_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_INNER_TOLERANCE)]
        inner_tol: f64,
        /// Worker threads (0 = automatic).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Append `n,s,delta_hat,standard_error,num_samples,seed` to a CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate the separation-aware measurement bound.
    Bound {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        u: f64,
        #[arg(long = "C", default_value_t = 1.0)]
        c: f64,
    },
    /// Run a phase-transition grid from a spec file and write CSV.
    Phase {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = automatic).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Render a stored grid as an SVG heatmap.
    Plot {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overlay the per-n width estimate (needs the grid's spec echo).
        #[arg(long, default_value_t = false)]
        overlay_width: bool,
        /// Overlay the per-n rate bound (needs the grid's spec echo).
        #[arg(long, default_value_t = false)]
        overlay_bound: bool,
        /// Samples per width estimate.
        #[arg(long, default_value_t = DEFAULT_NUM_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        u: f64,
        #[arg(long = "C", default_value_t = 1.0)]
        c: f64,
    },
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

fn parse_f64_csv(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad float {t:?}: {e}")))
        .collect()
}

fn with_workers<T>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, String>
where
    T: Send,
{
    if workers == 0 {
        Ok(f())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| format!("cannot build worker pool: {e}"))?;
        Ok(pool.install(f))
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Gen {
            class,
            n,
            s,
            seed,
            breakpoints,
            levels,
            out,
        } => {
            let signal = match class {
                ClassArg::Equidistant => make_equidistant(n, s, LevelSource::Seeded(seed))
                    .map_err(|e| e.to_string())?,
                ClassArg::DenseJump => make_dense_jump(n, s).map_err(|e| e.to_string())?,
                ClassArg::Pc => {
                    let breakpoints = breakpoints
                        .ok_or("class pc requires --breakpoints")
                        .and_then(|t| parse_f64_csv(&t).map_err(|_| "bad --breakpoints"))
                        .map_err(|e| e.to_string())?;
                    let levels = levels
                        .ok_or("class pc requires --levels".to_string())
                        .and_then(|t| parse_f64_csv(&t))?;
                    let spec = PiecewiseConstantSpec::new(breakpoints, levels)
                        .map_err(|e| e.to_string())?;
                    discretize_pc(&spec, n).map_err(|e| e.to_string())?
                }
            };
            std::fs::write(&out, write_signal_text(&signal, seed))
                .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
            println!(
                "written={} n={} s={} seed={} delta_max={}",
                out.display(),
                signal.n(),
                signal.jump_count(),
                seed,
                fixed(signal.delta_max())
            );
            Ok(())
        }
        Command::Solve {
            signal,
            m,
            seed,
            tol,
            max_iter,
            conv_tol,
            feas_tol,
        } => {
            let (signal, _) = load_signal(&signal)?;
            let ensemble =
                MeasurementEnsemble::sample(m, signal.n(), seed).map_err(|e| e.to_string())?;
            let y = ensemble.apply(signal.values()).map_err(|e| e.to_string())?;
            let config = SolverConfig {
                max_iterations: max_iter,
                convergence_tolerance: conv_tol,
                feasibility_tolerance: feas_tol,
                ..SolverConfig::default()
            };
            let result = solve_tv(&ensemble, y.view(), &config).map_err(|e| e.to_string())?;
            let recovered = result.status == SolveStatus::Converged
                && check_recovery(result.x_hat.view(), signal.values(), tol);
            let status = match result.status {
                SolveStatus::Converged => "converged",
                SolveStatus::IterationLimit => "iteration-limit",
                SolveStatus::NumericalFailure => "numerical-failure",
            };
            println!(
                "status={} iterations={} objective={} residual={} recovered={}",
                status,
                result.iterations,
                fixed(result.objective),
                sci(result.feasibility_residual),
                recovered
            );
            Ok(())
        }
        Command::Width {
            signal,
            samples,
            seed,
            inner_tol,
            workers,
            csv,
        } => {
            let (signal, _) = load_signal(&signal)?;
            let estimate = with_workers(workers, || {
                estimate_statistical_dimension(&signal, samples, seed, inner_tol)
            })?
            .map_err(|e| e.to_string())?;
            println!(
                "delta_hat={} standard_error={} num_samples={} discarded={}",
                fixed(estimate.delta_hat),
                sci(estimate.standard_error),
                estimate.num_samples,
                estimate.discarded
            );
            if let Some(path) = csv {
                append_width_csv(&path, &signal, &estimate)?;
            }
            Ok(())
        }
        Command::Bound { n, s, delta, u, c } => {
            let bound = theoretical_rate(n, s, delta, u, c).map_err(|e| e.to_string())?;
            println!(
                "m={} hypothesis_ok={}",
                fixed(bound.measurements),
                bound.hypothesis_ok
            );
            Ok(())
        }
        Command::Phase { spec, out, workers } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| format!("cannot read {}: {e}", spec.display()))?;
            let spec = ExperimentSpec::parse(&text).map_err(|e| e.to_string())?;
            let grid = with_workers(workers, || run_phase_grid(&spec))?
                .map_err(|e| e.to_string())?;
            std::fs::write(&out, grid_to_csv_string(&grid))
                .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
            let mut transitions = String::new();
            for n in grid.n_values() {
                if let Ok(loc) = transition_location(&grid, n) {
                    if let Some(m) = loc.value() {
                        let _ = write!(transitions, " m50_n{n}={}", fixed(m));
                    }
                }
            }
            println!(
                "written={} cells={} trials={} numerical_failures={}{transitions}",
                out.display(),
                grid.cells().len(),
                grid.total_trials(),
                grid.numerical_failures()
            );
            Ok(())
        }
        Command::Plot {
            grid,
            out,
            overlay_width,
            overlay_bound,
            samples,
            seed,
            u,
            c,
        } => {
            let grid = read_grid_csv(&grid).map_err(|e| e.to_string())?;
            let mut overlays = HeatmapOverlays::default();
            if overlay_width || overlay_bound {
                let spec = ExperimentSpec::parse(grid.spec_echo()).map_err(|e| {
                    format!("grid carries no usable spec echo for overlays: {e}")
                })?;
                let mut widths = Vec::new();
                let mut bounds = Vec::new();
                for n in grid.n_values() {
                    let signal = spec
                        .build_signal(n, derive_seed(spec.master_seed, &[n as u64]))
                        .map_err(|e| e.to_string())?;
                    if overlay_width {
                        let est = estimate_statistical_dimension(
                            &signal,
                            samples,
                            seed,
                            DEFAULT_INNER_TOLERANCE,
                        )
                        .map_err(|e| e.to_string())?;
                        widths.push((n, est.delta_hat));
                    }
                    if overlay_bound {
                        let rate = theoretical_rate(
                            n,
                            signal.jump_count().max(1),
                            signal.delta_max(),
                            u,
                            c,
                        )
                        .map_err(|e| e.to_string())?;
                        bounds.push((n, rate.measurements));
                    }
                }
                overlays.width_curve = overlay_width.then_some(widths);
                overlays.bound_curve = overlay_bound.then_some(bounds);
            }
            render_heatmap_svg(&grid, &overlays, &out).map_err(|e| e.to_string())?;
            println!("written={}", out.display());
            Ok(())
        }
    }
}

fn load_signal(path: &PathBuf) -> Result<(Signal, u64), String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    read_signal_text(&text).map_err(|e| e.to_string())
}

fn append_width_csv(
    path: &PathBuf,
    signal: &Signal,
    estimate: &tvmin::ConeWidthEstimate,
) -> Result<(), String> {
    let mut text = if path.exists() {
        std::fs::read_to_string(path).map_err(|e| e.to_string())?
    } else {
        "n,s,delta_hat,standard_error,num_samples,seed\n".to_string()
    };
    let _ = writeln!(
        text,
        "{},{},{},{},{},{}",
        signal.n(),
        signal.jump_count(),
        fixed(estimate.delta_hat),
        sci(estimate.standard_error),
        estimate.num_samples,
        estimate.seed
    );
    std::fs::write(path, text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
