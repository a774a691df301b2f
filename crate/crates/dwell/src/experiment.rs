//! Run pipeline: validated configuration in, result record out.
//!
//! A run builds the generator, propagates the initial state across the log
//! grid (through the propagator cache when one is configured), extracts the
//! fluctuation trajectory, fits the algebraic regime in raw and rescaled
//! time, and solves for the steady state.  A sweep executes its expanded
//! cells on a worker pool, keeps their deterministic order, and condenses
//! exponent tables and collapse metrics from the per-cell records.
//!
//! Determinism contract: everything that lands in a CSV body or in the
//! `record` object of a JSON file is a pure function of the configuration.
//! Wall-clock facts (timestamps, runtimes, cache temperature) live only in
//! the `metadata` object.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    exponent_table, extract_trajectory, fit_power_law, fluctuation, rescale_time, ExponentRow,
    ExponentTable, PowerLawFit, Provenance, RescaleMeta, RescaleMode, RescaledCurve, Trajectory,
    WindowPolicy,
};
use crate::cache::{propagator_key, PropagatorCache};
use crate::config::{ExperimentConfig, InitialState, SolverSpec, SweepSpec};
use crate::fock::{self, Basis, Spectrum};
use crate::liouville::{
    build_propagator, evolve_with_base, steady_state, DensityMatrix, Liouvillian,
};
use crate::{Error, Result};

/// Version of the result-record schema.
pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Fixed trajectory CSV header; column order is part of the output contract.
pub const CSV_HEADER: &str = "t,t_over_tau,t_over_tau_tilde,kappa,kappa_over_N2,trace_dev,eps";

/// Deterministic payload of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub code_version: String,
    /// Sweep-cell label; absent for standalone runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub trajectory: Trajectory,
    /// Fit against raw time.
    pub fit_time: PowerLawFit,
    /// Fit against `t / tau`, ordinate `kappa / N^2`.
    pub fit_rescaled: PowerLawFit,
    pub steady: SteadySummary,
    pub diagnostics: Diagnostics,
    /// Canonical TOML of the resolved configuration; re-running it
    /// reproduces this record's deterministic payload bit for bit.
    pub config_toml: String,
}

/// Steady-state observables, absent (with a note) when the kernel solve
/// does not certify a unique fixed point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadySummary {
    pub kappa_over_n2: Option<f64>,
    pub relative_residual: Option<f64>,
    pub kernel_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Numerical health of the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_trace_dev: f64,
    pub max_eps: f64,
    pub tau: f64,
    pub w01: f64,
    pub tau_tilde: Option<f64>,
    pub base_step: f64,
    pub propagator_applications: u64,
}

/// Wall-clock facts, quarantined away from the deterministic record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub created_unix: u64,
    pub runtime_seconds: f64,
    /// "off", "cold" (built and stored) or "warm" (loaded).
    pub cache: String,
}

/// One finished run: deterministic record plus its metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub metadata: RunMetadata,
    pub record: ResultRecord,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Build the generator, its spectrum and the bookkeeping shared by every
/// downstream consumer.
fn build_generator(
    config: &ExperimentConfig,
) -> Result<(Liouvillian, Spectrum, RescaleMeta, Provenance)> {
    let system = &config.system;
    match &config.solver {
        SolverSpec::Redfield { bath } => {
            let (generator, spectrum) = Liouvillian::redfield_for_system(system, bath)?;
            let rescale = RescaleMeta::for_redfield(system, bath, &spectrum)?;
            let provenance = Provenance {
                particles: system.particles(),
                tunneling: system.tunneling(),
                interaction: system.interaction(),
                solver: "redfield".into(),
                coupling: Some(bath.coupling()),
                temperature: Some(bath.temperature().value()),
                cutoff: Some(bath.cutoff()),
                lamb_shift: Some(bath.include_lamb_shift()),
                dephasing_rate: None,
            };
            Ok((generator, spectrum, rescale, provenance))
        }
        SolverSpec::Lindblad { rate } => {
            let generator = Liouvillian::lindblad(system, *rate)?;
            let basis = fock::build_basis(system);
            let h = fock::build_hamiltonian(system, &basis)?;
            let spectrum = fock::diagonalize(&h)?;
            let rescale = RescaleMeta::for_dephasing(system, *rate)?;
            let provenance = Provenance {
                particles: system.particles(),
                tunneling: system.tunneling(),
                interaction: system.interaction(),
                solver: "lindblad".into(),
                coupling: None,
                temperature: None,
                cutoff: None,
                lamb_shift: None,
                dephasing_rate: Some(*rate),
            };
            Ok((generator, spectrum, rescale, provenance))
        }
    }
}

/// Initial density matrix in the generator's basis.
fn build_initial(
    config: &ExperimentConfig,
    spectrum: &Spectrum,
    target: Basis,
) -> Result<DensityMatrix> {
    let fock_state = match &config.initial {
        InitialState::Ground => fock::ground_state(spectrum)?,
        InitialState::Occupation(weights) => {
            let dim = weights.len();
            let mut m = ndarray::Array2::zeros((dim, dim));
            for (i, w) in weights.iter().enumerate() {
                m[[i, i]] = num_complex::Complex64::new(*w, 0.0);
            }
            DensityMatrix::new(m, Basis::Fock)?
        }
    };
    match target {
        Basis::Fock => Ok(fock_state),
        Basis::Energy(_) => fock_state.to_energy_basis(spectrum),
    }
}

/// Fit helper that folds "the data cannot support a fit at all" into a
/// flagged, unaccepted result instead of failing the run.
fn fit_or_flag(times: &[f64], kappa: &[f64], policy: &WindowPolicy) -> PowerLawFit {
    match fit_power_law(times, kappa, policy) {
        Ok(fit) => fit,
        Err(e) => PowerLawFit {
            alpha: 0.0,
            window: None,
            r2: 0.0,
            n_points: 0,
            method_tag: "sliding-log-window-v1".into(),
            accepted: false,
            note: e.to_string(),
        },
    }
}

/// Execute one run end to end.
pub fn execute(
    config: &ExperimentConfig,
    cache: Option<&PropagatorCache>,
    label: Option<&str>,
) -> Result<RunOutput> {
    let started = Instant::now();
    let created_unix = now_unix();

    let (generator, spectrum, rescale, provenance) = build_generator(config)?;
    let initial = build_initial(config, &spectrum, generator.basis())?;
    let basis = fock::build_basis(&config.system);
    let mut number_op = fock::number_operator(&basis, 1)?;
    if let Basis::Energy(_) = generator.basis() {
        number_op = number_op.to_energy_basis(&spectrum)?;
    }

    let dt = generator.base_step(config.grid.t_min())?;
    let mut cache_state = "off";
    let base = match cache {
        None => build_propagator(&generator, dt)?,
        Some(store) => {
            let key = propagator_key(&config.system, &config.solver, dt);
            match store.load(&key, &generator, dt) {
                Some(found) => {
                    cache_state = "warm";
                    found
                }
                None => {
                    cache_state = "cold";
                    let built = build_propagator(&generator, dt)?;
                    store.store(&key, &built)?;
                    built
                }
            }
        }
    };
    let evolution = evolve_with_base(&generator, &initial, &config.grid, base)?;
    let trajectory = extract_trajectory(&evolution, &number_op, rescale, provenance)?;

    let policy = config
        .overrides
        .apply(WindowPolicy::for_trajectory(&trajectory));
    let fit_time = fit_or_flag(&trajectory.times, &trajectory.kappa, &policy);

    let n2 = (config.system.particles() as f64).powi(2);
    let mut policy_rescaled = policy;
    policy_rescaled.guard_time = policy.guard_time / rescale.tau;
    policy_rescaled.kappa0 = policy.kappa0 / n2;
    let rescaled = rescale_time(&trajectory, RescaleMode::Tau)?;
    let fit_rescaled = fit_or_flag(&rescaled.abscissa, &rescaled.ordinate, &policy_rescaled);

    let steady = match steady_state(&generator) {
        Ok(ss) => {
            let state = ss.state;
            let kappa_ss = fluctuation(&state, &number_op)?;
            SteadySummary {
                kappa_over_n2: Some(kappa_ss / n2),
                relative_residual: Some(ss.relative_residual),
                kernel_gap: Some(ss.kernel_gap),
                note: None,
            }
        }
        Err(e) => SteadySummary {
            kappa_over_n2: None,
            relative_residual: None,
            kernel_gap: None,
            note: Some(e.to_string()),
        },
    };

    let diagnostics = Diagnostics {
        max_trace_dev: trajectory.max_trace_dev(),
        max_eps: trajectory.max_eps(),
        tau: rescale.tau,
        w01: rescale.w01,
        tau_tilde: rescale.tau_tilde,
        base_step: evolution.base_step,
        propagator_applications: evolution.applications,
    };

    let record = ResultRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        config_hash: config.hash().to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        label: label.map(str::to_string),
        trajectory,
        fit_time,
        fit_rescaled,
        steady,
        diagnostics,
        config_toml: config.canonical_toml().to_string(),
    };
    Ok(RunOutput {
        metadata: RunMetadata {
            created_unix,
            runtime_seconds: started.elapsed().as_secs_f64(),
            cache: cache_state.into(),
        },
        record,
    })
}

/// Steady-state observables of a configuration, without propagating.
#[derive(Debug, Clone, Serialize)]
pub struct SteadyReport {
    pub solver: String,
    pub kappa_over_n2: f64,
    pub relative_residual: f64,
    pub kernel_gap: f64,
}

/// Solve only for the steady state (the `steady` subcommand).
pub fn solve_steady(config: &ExperimentConfig) -> Result<SteadyReport> {
    let (generator, spectrum, _, _) = build_generator(config)?;
    let basis = fock::build_basis(&config.system);
    let mut number_op = fock::number_operator(&basis, 1)?;
    if let Basis::Energy(_) = generator.basis() {
        number_op = number_op.to_energy_basis(&spectrum)?;
    }
    let ss = steady_state(&generator)?;
    let kappa = fluctuation(&ss.state, &number_op)?;
    let n2 = (config.system.particles() as f64).powi(2);
    Ok(SteadyReport {
        solver: config.solver.kind_name().into(),
        kappa_over_n2: kappa / n2,
        relative_residual: ss.relative_residual,
        kernel_gap: ss.kernel_gap,
    })
}

// ---------------------------------------------------------------------------
// Serialization of runs to disk.
// ---------------------------------------------------------------------------

/// 17 significant digits: enough to round-trip any f64 exactly.
fn fmt17(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

/// Render the trajectory CSV body (header + rows, one row per sample).
pub fn trajectory_csv(record: &ResultRecord) -> String {
    let traj = &record.trajectory;
    let tau = traj.rescale.tau;
    let tau_tilde = traj.rescale.tau_tilde;
    let mut out = String::with_capacity(128 * (traj.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for i in 0..traj.len() {
        let t = traj.times[i];
        let over_tilde = match tau_tilde {
            Some(tt) => fmt17(t / tt),
            None => "nan".into(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt17(t),
            fmt17(t / tau),
            over_tilde,
            fmt17(traj.kappa[i]),
            fmt17(traj.kappa_rescaled[i]),
            fmt17(traj.trace_dev[i]),
            fmt17(traj.eps[i]),
        ));
    }
    out
}

/// Paths written for one run.
#[derive(Debug, Clone)]
pub struct WrittenFiles {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

/// Write the run's CSV and/or JSON under `dir` with the given file stem.
pub fn write_run(output: &RunOutput, dir: &Path, stem: &str) -> Result<WrittenFiles> {
    std::fs::create_dir_all(dir)?;
    let config = ExperimentConfig::from_toml_str(&output.record.config_toml)?;
    let mut written = WrittenFiles {
        csv: None,
        json: None,
    };
    if config.output.csv {
        let path = dir.join(format!("{stem}.csv"));
        std::fs::write(&path, trajectory_csv(&output.record))?;
        written.csv = Some(path);
    }
    if config.output.json {
        let path = dir.join(format!("{stem}.json"));
        let mut text = serde_json::to_string_pretty(output)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        written.json = Some(path);
    }
    Ok(written)
}

/// Read a run back from its JSON file.
pub fn read_run(path: &Path) -> Result<RunOutput> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::PlotInput(format!("{} is not a result record: {e}", path.display()))
    })
}

/// File stem for a run: the cell label when sweeping, else a hash prefix.
pub fn run_stem(record: &ResultRecord) -> String {
    match &record.label {
        Some(label) => format!("cell_{label}"),
        None => format!("run_{}", &record.config_hash[..12]),
    }
}

// ---------------------------------------------------------------------------
// Sweeps.
// ---------------------------------------------------------------------------

/// Outcome of one sweep cell, keeping its deterministic position.
#[derive(Debug)]
pub struct CellOutcome {
    pub label: String,
    pub assignments: BTreeMap<String, f64>,
    pub outcome: Result<RunOutput>,
}

/// Collapse quality of the sweep's trajectories under the two rescalings.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct CollapseSummary {
    pub tau: Option<f64>,
    pub tau_tilde: Option<f64>,
    pub curves: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

/// A finished sweep.
#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellOutcome>,
    pub exponents: Option<ExponentTable>,
    pub collapse: CollapseSummary,
    pub failed: usize,
}

/// Execute every cell of the sweep on a worker pool of `jobs` threads
/// (`None` = one per core), preserving the deterministic cell order.  Cell
/// failures are collected, not propagated: the sweep always reports every
/// cell.
pub fn run_sweep(
    spec: &SweepSpec,
    uncapped: bool,
    jobs: Option<usize>,
    cache: Option<&PropagatorCache>,
) -> Result<SweepOutcome> {
    let cells = spec.expand(uncapped)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;

    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| CellOutcome {
                label: cell.label.clone(),
                assignments: cell.assignments.clone(),
                outcome: execute(&cell.config, cache, Some(&cell.label)),
            })
            .collect()
    });

    let failed = outcomes.iter().filter(|c| c.outcome.is_err()).count();
    let exponents = build_exponent_table(&outcomes);
    let collapse = build_collapse(&outcomes);

    Ok(SweepOutcome {
        cells: outcomes,
        exponents,
        collapse,
        failed,
    })
}

/// Exponent rows from the successful bath-driven cells.
fn build_exponent_table(cells: &[CellOutcome]) -> Option<ExponentTable> {
    let mut rows = Vec::new();
    for cell in cells {
        let Ok(output) = &cell.outcome else { continue };
        let record = &output.record;
        let prov = &record.trajectory.provenance;
        let (Some(temperature), Some(cutoff)) = (prov.temperature, prov.cutoff) else {
            continue;
        };
        rows.push(ExponentRow {
            temperature,
            cutoff,
            alpha: record.fit_time.alpha,
            window: record.fit_time.window,
            r2: record.fit_time.r2,
            w01: record.diagnostics.w01,
            accepted: record.fit_time.accepted,
        });
    }
    if rows.is_empty() {
        None
    } else {
        Some(exponent_table(rows))
    }
}

/// Rescaled curve of one record with its fitted window mapped onto the
/// rescaled axis; `None` when the cell has no accepted window or the
/// rescaling is undefined.
fn rescaled_with_window(record: &ResultRecord, mode: RescaleMode) -> Option<RescaledCurve> {
    let (lo, hi) = record.fit_time.window?;
    let mut curve = rescale_time(&record.trajectory, mode).ok()?;
    let scale = match mode {
        RescaleMode::Tau => record.trajectory.rescale.tau,
        RescaleMode::TauTilde => record.trajectory.rescale.tau_tilde?,
    };
    curve.window = Some((lo / scale, hi / scale));
    Some(curve)
}

fn build_collapse(cells: &[CellOutcome]) -> CollapseSummary {
    let records: Vec<&ResultRecord> = cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().ok())
        .map(|o| &o.record)
        .collect();
    let mut summary = CollapseSummary {
        curves: records.len(),
        ..CollapseSummary::default()
    };
    if records.len() < 2 {
        summary
            .notes
            .push("collapse metrics need at least two successful cells".into());
        return summary;
    }
    for (mode, slot, name) in [
        (RescaleMode::Tau, 0usize, "tau"),
        (RescaleMode::TauTilde, 1, "tau_tilde"),
    ] {
        let curves: Vec<RescaledCurve> = records
            .iter()
            .filter_map(|r| rescaled_with_window(r, mode))
            .collect();
        if curves.len() < 2 {
            summary
                .notes
                .push(format!("{name}: fewer than two curves carry fitted windows"));
            continue;
        }
        match crate::analysis::collapse_metric(&curves) {
            Ok(value) => {
                if slot == 0 {
                    summary.tau = Some(value);
                } else {
                    summary.tau_tilde = Some(value);
                }
            }
            Err(e) => summary.notes.push(format!("{name}: {e}")),
        }
    }
    summary
}

/// Deterministic all-cells summary written next to the per-cell files.
#[derive(Debug, Serialize)]
struct SweepSummaryFile<'a> {
    metadata: SweepMetadata,
    cells: Vec<CellSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exponents: &'a Option<ExponentTable>,
    collapse: &'a CollapseSummary,
    failed: usize,
}

#[derive(Debug, Serialize)]
struct SweepMetadata {
    created_unix: u64,
}

#[derive(Debug, Serialize)]
struct CellSummary {
    label: String,
    assignments: BTreeMap<String, f64>,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Render the exponent table as CSV.
pub fn exponents_csv(table: &ExponentTable) -> String {
    let mut out = String::new();
    out.push_str("temperature,cutoff,alpha,window_lo,window_hi,r2,w01,accepted\n");
    for row in &table.rows {
        let (wlo, whi) = match row.window {
            Some((lo, hi)) => (fmt17(lo), fmt17(hi)),
            None => ("nan".into(), "nan".into()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt17(row.temperature),
            fmt17(row.cutoff),
            fmt17(row.alpha),
            wlo,
            whi,
            fmt17(row.r2),
            fmt17(row.w01),
            row.accepted,
        ));
    }
    out
}

/// Write per-cell files plus `exponents.csv` and `sweep_summary.json`.
pub fn write_sweep(outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut cells = Vec::with_capacity(outcome.cells.len());
    for cell in &outcome.cells {
        match &cell.outcome {
            Ok(output) => {
                write_run(output, dir, &run_stem(&output.record))?;
                cells.push(CellSummary {
                    label: cell.label.clone(),
                    assignments: cell.assignments.clone(),
                    status: "ok".into(),
                    config_hash: Some(output.record.config_hash.clone()),
                    alpha: Some(output.record.fit_time.alpha),
                    error: None,
                });
            }
            Err(e) => cells.push(CellSummary {
                label: cell.label.clone(),
                assignments: cell.assignments.clone(),
                status: "failed".into(),
                config_hash: None,
                alpha: None,
                error: Some(e.to_string()),
            }),
        }
    }
    if let Some(table) = &outcome.exponents {
        std::fs::write(dir.join("exponents.csv"), exponents_csv(table))?;
    }
    let summary = SweepSummaryFile {
        metadata: SweepMetadata {
            created_unix: now_unix(),
        },
        cells,
        exponents: &outcome.exponents,
        collapse: &outcome.collapse,
        failed: outcome.failed,
    };
    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    text.push('\n');
    std::fs::write(dir.join("sweep_summary.json"), text)?;
    Ok(())
}
