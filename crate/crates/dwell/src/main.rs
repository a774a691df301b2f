//! Command-line front end: run, sweep, plot, steady, validate.

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::Ordering;

use clap::{Parser, Subcommand};

use dwell::cache::PropagatorCache;
use dwell::config::{ExperimentConfig, SweepSpec};
use dwell::experiment::{
    execute, read_run, run_stem, run_sweep, solve_steady, write_run, write_sweep, ResultRecord,
};
use dwell::plots::{emit, Figure};
use dwell::{Error, Result};

/// Like `println!` but tolerates a closed stdout (e.g. piping into `head`).
macro_rules! emit {
    ($($arg:tt)*) => {
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    };
}

#[derive(Parser)]
#[command(
    name = "dwell",
    version,
    about = "Fluctuation dynamics of interacting bosons in a dephasing double well"
)]
struct Cli {
    /// Worker threads for sweeps (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Propagator cache directory (falls back to $DWELL_CACHE_DIR; unset = no cache).
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,

    /// Where to write results (overrides the config's output directory).
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    /// Assert that the command consumed no randomness.
    #[arg(long, global = true)]
    seedless: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run from a configuration file.
    Run { config: PathBuf },
    /// Execute a parameter sweep from a sweep file.
    Sweep {
        spec: PathBuf,
        /// Lift the sweep's run-count cap.
        #[arg(long)]
        uncapped: bool,
    },
    /// Build figure artifacts (data CSV, plot script, SVG) from result records.
    Plot {
        /// One of fig1, fig2, fig3, fig4.
        figure: String,
        /// Result-record JSON files.
        records: Vec<PathBuf>,
    },
    /// Solve for the steady state of a configuration.
    Steady { config: PathBuf },
    /// Validate a run configuration or sweep file.
    Validate { config: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if cli.seedless {
        let draws = dwell::RNG_DRAWS.load(Ordering::Relaxed);
        if draws != 0 {
            eprintln!("error: --seedless violated: {draws} RNG draws were consumed");
            std::process::exit(3);
        }
    }
    std::process::exit(code);
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run { config } => {
            let config = ExperimentConfig::from_path(config)?;
            let cache = PropagatorCache::resolve(cli.cache_dir.as_deref())?;
            let output = execute(&config, cache.as_ref(), None)?;
            let dir = cli
                .output_dir
                .clone()
                .unwrap_or_else(|| config.output.directory.clone());
            let written = write_run(&output, &dir, &run_stem(&output.record))?;
            let record = &output.record;
            emit!(
                "run {}: {} points, alpha = {:.4} ({}), steady kappa/N^2 = {}",
                &record.config_hash[..12],
                record.trajectory.len(),
                record.fit_time.alpha,
                if record.fit_time.accepted {
                    "accepted"
                } else {
                    "no algebraic window"
                },
                match record.steady.kappa_over_n2 {
                    Some(v) => format!("{v:.8}"),
                    None => "unsolved".into(),
                },
            );
            for path in [written.csv, written.json].into_iter().flatten() {
                emit!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Sweep { spec, uncapped } => {
            let spec = SweepSpec::from_path(spec)?;
            let cache = PropagatorCache::resolve(cli.cache_dir.as_deref())?;
            let outcome = run_sweep(&spec, *uncapped, cli.jobs, cache.as_ref())?;
            let dir = cli
                .output_dir
                .clone()
                .unwrap_or_else(|| spec.base().output.directory.clone());
            write_sweep(&outcome, &dir)?;
            for cell in &outcome.cells {
                match &cell.outcome {
                    Ok(output) => emit!(
                        "cell {}: ok, alpha = {:.4}",
                        cell.label, output.record.fit_time.alpha
                    ),
                    Err(e) => emit!("cell {}: FAILED: {e}", cell.label),
                }
            }
            if let Some(table) = &outcome.exponents {
                for (cutoff, monotone) in &table.monotone_by_cutoff {
                    emit!(
                        "alpha(T) at wc = {cutoff}: {}",
                        if *monotone {
                            "nondecreasing"
                        } else {
                            "not monotone"
                        }
                    );
                }
            }
            if let Some(v) = outcome.collapse.tau {
                emit!("collapse (tau rescaling): {v:.6}");
            }
            if let Some(v) = outcome.collapse.tau_tilde {
                emit!("collapse (tau~ rescaling): {v:.6}");
            }
            emit!(
                "sweep finished: {} cells, {} failed; results in {}",
                outcome.cells.len(),
                outcome.failed,
                dir.display()
            );
            Ok(if outcome.failed > 0 { 1 } else { 0 })
        }
        Command::Plot { figure, records } => {
            let figure: Figure = figure.parse()?;
            let mut loaded: Vec<ResultRecord> = Vec::with_capacity(records.len());
            for path in records {
                loaded.push(read_run(path)?.record);
            }
            let dir = cli
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("results"));
            let arts = emit(figure, &loaded, &dir)?;
            for path in [arts.data, arts.script, arts.image] {
                emit!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Steady { config } => {
            let config = ExperimentConfig::from_path(config)?;
            let report = solve_steady(&config)?;
            emit!("solver: {}", report.solver);
            emit!("steady kappa/N^2: {:.12}", report.kappa_over_n2);
            emit!("relative residual: {:.3e}", report.relative_residual);
            emit!("kernel gap: {:.3e}", report.kernel_gap);
            Ok(0)
        }
        Command::Validate { config } => {
            let text = std::fs::read_to_string(config)?;
            let value: toml::Value = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("configuration parse error: {e}")))?;
            if value.get("axes").is_some() {
                let spec = SweepSpec::from_toml_str(&text)?;
                emit!(
                    "ok: sweep file, {} runs (cap {})",
                    spec.len(),
                    spec.cap()
                );
            } else {
                let config = ExperimentConfig::from_toml_str(&text)?;
                emit!("ok: run config, hash {}", config.hash());
            }
            Ok(0)
        }
    }
}
