//! Experiment configuration: a single TOML file describes one run, a second
//! flavor describes a parameter sweep built from a base run plus named axes.
//!
//! Parsing is strict by design: unknown keys are errors, the schema carries a
//! version number, and every file is re-serialized into a canonical form whose
//! SHA-256 digest identifies the run in result records and cache keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::WindowPolicy;
use crate::bath::{BathSpec, Temperature};
use crate::fock::SystemSpec;
use crate::liouville::TimeGrid;
use crate::{Error, Result};

/// Version of the on-disk configuration schema.
pub const SCHEMA_VERSION: u32 = 1;

/// Default bound on the number of runs a sweep may expand into.
pub const DEFAULT_SWEEP_CAP: usize = 512;

// ---------------------------------------------------------------------------
// Raw (on-disk) schema.  These mirror the TOML exactly; validation happens in
// a second pass so error messages can talk about physics, not serde.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    system: RawSystem,
    solver: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    bath: Option<RawBath>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lindblad: Option<RawLindblad>,
    grid: RawGrid,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_state: Option<RawInitialState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    analysis: Option<RawAnalysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<RawOutput>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    particles: u32,
    tunneling: f64,
    interaction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBath {
    coupling: f64,
    temperature: f64,
    cutoff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lamb_shift: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLindblad {
    rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    t_min: f64,
    t_max: f64,
    ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitialState {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    #[serde(skip_serializing_if = "Option::is_none")]
    min_decades: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_decades: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_slope_variation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r2_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    guard_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    guard_growth: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    directory: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    formats: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    schema_version: u32,
    mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cap: Option<usize>,
    axes: RawAxes,
    base: RawConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAxes {
    #[serde(skip_serializing_if = "Option::is_none")]
    particles: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    interaction: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cutoff: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coupling: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Validated configuration.
// ---------------------------------------------------------------------------

/// Which generator drives the evolution, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverSpec {
    /// Finite-temperature Redfield generator built from an ohmic bath.
    Redfield { bath: BathSpec },
    /// Infinite-temperature dephasing (Lindblad) generator with a flat rate.
    Lindblad { rate: f64 },
}

impl SolverSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SolverSpec::Redfield { .. } => "redfield",
            SolverSpec::Lindblad { .. } => "lindblad",
        }
    }
}

/// Initial density matrix selector.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Ground state of the isolated Hamiltonian.
    Ground,
    /// Diagonal mixture over left-well occupation states; weights are
    /// normalized to unit trace at validation time.
    Occupation(Vec<f64>),
}

/// Optional overrides for the power-law window policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyOverrides {
    pub min_decades: Option<f64>,
    pub step_decades: Option<f64>,
    pub max_slope_variation: Option<f64>,
    pub r2_min: Option<f64>,
    pub min_points: Option<usize>,
    pub guard_time: Option<f64>,
    pub guard_growth: Option<f64>,
}

impl PolicyOverrides {
    /// Apply the overrides on top of a baseline policy.
    pub fn apply(&self, mut policy: WindowPolicy) -> WindowPolicy {
        if let Some(v) = self.min_decades {
            policy.min_decades = v;
        }
        if let Some(v) = self.step_decades {
            policy.step_decades = v;
        }
        if let Some(v) = self.max_slope_variation {
            policy.max_slope_variation = v;
        }
        if let Some(v) = self.r2_min {
            policy.r2_min = v;
        }
        if let Some(v) = self.min_points {
            policy.min_points = v;
        }
        if let Some(v) = self.guard_time {
            policy.guard_time = v;
        }
        if let Some(v) = self.guard_growth {
            policy.guard_growth = v;
        }
        policy
    }
}

/// Output destination and formats for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub csv: bool,
    pub json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("results"),
            csv: true,
            json: true,
        }
    }
}

/// A fully validated single-run configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub solver: SolverSpec,
    pub grid: TimeGrid,
    pub initial: InitialState,
    pub overrides: PolicyOverrides,
    pub output: OutputConfig,
    canonical: String,
    hash: String,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("configuration parse error: {e}")))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        if raw.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported; this build reads version {SCHEMA_VERSION}",
                raw.schema_version
            )));
        }

        let system = SystemSpec::new(
            raw.system.particles,
            raw.system.tunneling,
            raw.system.interaction,
        )?;

        let solver = match raw.solver.as_str() {
            "redfield" => {
                if raw.lindblad.is_some() {
                    return Err(Error::Config(
                        "both [bath] and [lindblad] are set; solver = \"redfield\" takes \
                         [bath] only — remove the [lindblad] table"
                            .into(),
                    ));
                }
                let b = raw.bath.as_ref().ok_or_else(|| {
                    Error::Config("solver = \"redfield\" requires a [bath] table".into())
                })?;
                let bath = BathSpec::new(
                    b.coupling,
                    Temperature::new(b.temperature)?,
                    b.cutoff,
                    b.lamb_shift.unwrap_or(false),
                )?;
                SolverSpec::Redfield { bath }
            }
            "lindblad" => {
                if raw.bath.is_some() {
                    return Err(Error::Config(
                        "both [bath] and [lindblad] are set; solver = \"lindblad\" takes \
                         [lindblad] only — remove the [bath] table"
                            .into(),
                    ));
                }
                let l = raw.lindblad.as_ref().ok_or_else(|| {
                    Error::Config("solver = \"lindblad\" requires a [lindblad] table".into())
                })?;
                if !l.rate.is_finite() || l.rate <= 0.0 {
                    return Err(Error::Config(format!(
                        "lindblad.rate must be positive, got {}",
                        l.rate
                    )));
                }
                SolverSpec::Lindblad { rate: l.rate }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown solver \"{other}\"; expected \"redfield\" or \"lindblad\""
                )));
            }
        };

        if raw.grid.t_max < 10.0 * raw.grid.t_min {
            return Err(Error::Config(format!(
                "grid must span at least one decade: t_max/t_min = {:.3}",
                raw.grid.t_max / raw.grid.t_min
            )));
        }
        let grid = TimeGrid::new(raw.grid.t_min, raw.grid.t_max, raw.grid.ratio)?;

        let initial = match &raw.initial_state {
            None => InitialState::Ground,
            Some(st) => match st.kind.as_str() {
                "ground" => {
                    if st.weights.is_some() {
                        return Err(Error::Config(
                            "initial_state.weights is only valid with kind = \"occupation\""
                                .into(),
                        ));
                    }
                    InitialState::Ground
                }
                "occupation" => {
                    let weights = st.weights.clone().ok_or_else(|| {
                        Error::Config(
                            "initial_state kind = \"occupation\" requires a weights list".into(),
                        )
                    })?;
                    let dim = system.particles() as usize + 1;
                    if weights.len() != dim {
                        return Err(Error::Config(format!(
                            "initial_state.weights needs one entry per occupation state: \
                             expected {dim}, got {}",
                            weights.len()
                        )));
                    }
                    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                        return Err(Error::Config(
                            "initial_state.weights must be finite and non-negative".into(),
                        ));
                    }
                    let total: f64 = weights.iter().sum();
                    if total <= 0.0 {
                        return Err(Error::Config(
                            "initial_state.weights must not all vanish".into(),
                        ));
                    }
                    InitialState::Occupation(weights.iter().map(|w| w / total).collect())
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown initial_state kind \"{other}\"; expected \"ground\" or \
                         \"occupation\""
                    )));
                }
            },
        };

        let overrides = match &raw.analysis {
            None => PolicyOverrides::default(),
            Some(a) => PolicyOverrides {
                min_decades: a.min_decades,
                step_decades: a.step_decades,
                max_slope_variation: a.max_slope_variation,
                r2_min: a.r2_min,
                min_points: a.min_points,
                guard_time: a.guard_time,
                guard_growth: a.guard_growth,
            },
        };

        let output = match &raw.output {
            None => OutputConfig::default(),
            Some(o) => {
                let mut csv = false;
                let mut json = false;
                match &o.formats {
                    None => {
                        csv = true;
                        json = true;
                    }
                    Some(list) => {
                        if list.is_empty() {
                            return Err(Error::Config(
                                "output.formats must not be empty; list \"csv\", \"json\", or both"
                                    .into(),
                            ));
                        }
                        for f in list {
                            match f.as_str() {
                                "csv" => csv = true,
                                "json" => json = true,
                                other => {
                                    return Err(Error::Config(format!(
                                        "unknown output format \"{other}\"; expected \"csv\" or \
                                         \"json\""
                                    )));
                                }
                            }
                        }
                    }
                }
                OutputConfig {
                    directory: PathBuf::from(
                        o.directory.clone().unwrap_or_else(|| "results".into()),
                    ),
                    csv,
                    json,
                }
            }
        };

        let canonical = toml::to_string(&raw)
            .map_err(|e| Error::Config(format!("canonical serialization failed: {e}")))?;
        let hash = sha256_hex(canonical.as_bytes());

        Ok(ExperimentConfig {
            system,
            solver,
            grid,
            initial,
            overrides,
            output,
            canonical,
            hash,
        })
    }

    /// Canonical TOML text (fixed key order) this config round-trips to.
    pub fn canonical_toml(&self) -> &str {
        &self.canonical
    }

    /// SHA-256 digest of the canonical TOML, hex-encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

// ---------------------------------------------------------------------------
// Sweeps.
// ---------------------------------------------------------------------------

/// How axis values combine into runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Cartesian product of all present axes.
    Product,
    /// Element-wise pairing; all present axes must share one length.
    Zip,
}

/// One expanded sweep cell: a label built from the swept axis values plus a
/// fully validated configuration.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub label: String,
    pub assignments: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

/// A validated sweep: base configuration plus named axes.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    mode: SweepMode,
    cap: usize,
    axes: Vec<(&'static str, Vec<f64>)>,
    base: RawConfig,
    base_config: ExperimentConfig,
}

/// Axis order is fixed and documented: it defines both the expansion order of
/// a product sweep and the ordering of emitted results.
const AXIS_ORDER: [&str; 5] = [
    "particles",
    "interaction",
    "temperature",
    "cutoff",
    "coupling",
];

impl SweepSpec {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawSweep = toml::from_str(text)
            .map_err(|e| Error::Config(format!("sweep parse error: {e}")))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported; this build reads version {SCHEMA_VERSION}",
                raw.schema_version
            )));
        }
        let mode = match raw.mode.as_str() {
            "product" => SweepMode::Product,
            "zip" => SweepMode::Zip,
            other => {
                return Err(Error::Config(format!(
                    "unknown sweep mode \"{other}\"; expected \"product\" or \"zip\""
                )));
            }
        };

        // Base must itself be a valid single-run config before any overrides.
        let base_config = ExperimentConfig::from_raw(raw.base.clone())?;

        let mut axes: Vec<(&'static str, Vec<f64>)> = Vec::new();
        let particles = raw
            .axes
            .particles
            .as_ref()
            .map(|v| v.iter().map(|n| *n as f64).collect::<Vec<f64>>());
        for (name, values) in [
            ("particles", particles),
            ("interaction", raw.axes.interaction.clone()),
            ("temperature", raw.axes.temperature.clone()),
            ("cutoff", raw.axes.cutoff.clone()),
            ("coupling", raw.axes.coupling.clone()),
        ] {
            if let Some(values) = values {
                if values.is_empty() {
                    return Err(Error::Config(format!("sweep axis \"{name}\" is empty")));
                }
                let name = AXIS_ORDER.iter().find(|a| **a == name).unwrap();
                axes.push((name, values));
            }
        }
        if axes.is_empty() {
            return Err(Error::Config("sweep declares no axes".into()));
        }
        if mode == SweepMode::Zip {
            let len = axes[0].1.len();
            if axes.iter().any(|(_, v)| v.len() != len) {
                let lens: Vec<String> = axes
                    .iter()
                    .map(|(n, v)| format!("{n}={}", v.len()))
                    .collect();
                return Err(Error::Config(format!(
                    "zip mode needs equal-length axes, got {}",
                    lens.join(", ")
                )));
            }
        }

        let bath_axis = axes
            .iter()
            .find(|(n, _)| matches!(*n, "temperature" | "cutoff"));
        if raw.base.solver == "lindblad" {
            if let Some((name, _)) = bath_axis {
                return Err(Error::Config(format!(
                    "axis \"{name}\" needs a redfield base; the lindblad generator has no bath"
                )));
            }
        }

        Ok(SweepSpec {
            mode,
            cap: raw.cap.unwrap_or(DEFAULT_SWEEP_CAP),
            axes,
            base: raw.base,
            base_config,
        })
    }

    pub fn mode(&self) -> SweepMode {
        self.mode
    }

    /// The validated base configuration the axes override.
    pub fn base(&self) -> &ExperimentConfig {
        &self.base_config
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Number of runs the sweep expands into.
    pub fn len(&self) -> usize {
        match self.mode {
            SweepMode::Product => self.axes.iter().map(|(_, v)| v.len()).product(),
            SweepMode::Zip => self.axes[0].1.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Expand into validated per-run configurations, in deterministic axis
    /// order (first axis outermost for products).  The run-count cap rejects
    /// oversized sweeps unless explicitly lifted.
    pub fn expand(&self, uncapped: bool) -> Result<Vec<SweepCell>> {
        let total = self.len();
        if total > self.cap && !uncapped {
            return Err(Error::Config(format!(
                "sweep expands to {total} runs, above the cap of {}; pass --uncapped to proceed",
                self.cap
            )));
        }

        let combos: Vec<Vec<(usize, f64)>> = match self.mode {
            SweepMode::Zip => (0..total)
                .map(|i| {
                    self.axes
                        .iter()
                        .enumerate()
                        .map(|(ax, (_, vals))| (ax, vals[i]))
                        .collect()
                })
                .collect(),
            SweepMode::Product => {
                let mut combos = vec![Vec::new()];
                for (ax, (_, vals)) in self.axes.iter().enumerate() {
                    let mut next = Vec::with_capacity(combos.len() * vals.len());
                    for prefix in &combos {
                        for v in vals {
                            let mut row = prefix.clone();
                            row.push((ax, *v));
                            next.push(row);
                        }
                    }
                    combos = next;
                }
                combos
            }
        };

        combos
            .into_iter()
            .map(|assignment| self.cell(&assignment))
            .collect()
    }

    fn cell(&self, assignment: &[(usize, f64)]) -> Result<SweepCell> {
        let mut raw = self.base.clone();
        let mut label_parts = Vec::with_capacity(assignment.len());
        let mut assignments = BTreeMap::new();
        for (ax, value) in assignment {
            let name = self.axes[*ax].0;
            assignments.insert(name.to_string(), *value);
            label_parts.push(format!("{}{}", axis_tag(name), compact(*value)));
            apply_axis(&mut raw, name, *value)?;
        }
        let config = ExperimentConfig::from_raw(raw)?;
        Ok(SweepCell {
            label: label_parts.join("_"),
            assignments,
            config,
        })
    }
}

fn axis_tag(name: &str) -> &'static str {
    match name {
        "particles" => "N",
        "interaction" => "U",
        "temperature" => "T",
        "cutoff" => "wc",
        "coupling" => "g",
        _ => unreachable!("axis names are fixed"),
    }
}

/// Compact value formatting for labels and file stems: `10`, `2.5`, `1e6`.
fn compact(value: f64) -> String {
    if value == value.trunc() && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}

fn apply_axis(raw: &mut RawConfig, name: &str, value: f64) -> Result<()> {
    match name {
        "particles" => raw.system.particles = value as u32,
        "interaction" => raw.system.interaction = value,
        "temperature" | "cutoff" => {
            let bath = raw.bath.as_mut().ok_or_else(|| {
                Error::Config(format!(
                    "axis \"{name}\" needs a redfield base; the lindblad generator has no bath"
                ))
            })?;
            if name == "temperature" {
                bath.temperature = value;
            } else {
                bath.cutoff = value;
            }
        }
        // The coupling axis drives whichever dissipator the base declares.
        "coupling" => match (&mut raw.bath, &mut raw.lindblad) {
            (Some(bath), _) => bath.coupling = value,
            (None, Some(lb)) => lb.rate = value,
            (None, None) => {
                return Err(Error::Config(
                    "axis \"coupling\" found neither [bath] nor [lindblad] in the base".into(),
                ));
            }
        },
        _ => unreachable!("axis names are fixed"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_redfield() -> String {
        r#"
            schema_version = 1
            solver = "redfield"

            [system]
            particles = 14
            tunneling = 1.0
            interaction = 10.0

            [bath]
            coupling = 0.01
            temperature = 500.0
            cutoff = 500.0

            [grid]
            t_min = 0.1
            t_max = 1000.0
            ratio = 1.3
        "#
        .to_string()
    }

    fn minimal_lindblad() -> String {
        r#"
            schema_version = 1
            solver = "lindblad"

            [system]
            particles = 10
            tunneling = 1.0
            interaction = 10.0

            [lindblad]
            rate = 0.1

            [grid]
            t_min = 0.1
            t_max = 100.0
            ratio = 1.3
        "#
        .to_string()
    }

    #[test]
    fn parses_minimal_redfield_config() {
        let cfg = ExperimentConfig::from_toml_str(&minimal_redfield()).unwrap();
        assert_eq!(cfg.system.particles(), 14);
        match &cfg.solver {
            SolverSpec::Redfield { bath } => {
                assert_eq!(bath.coupling(), 0.01);
                assert_eq!(bath.temperature().value(), 500.0);
                assert!(!bath.include_lamb_shift());
            }
            _ => panic!("expected redfield"),
        }
        assert_eq!(cfg.initial, InitialState::Ground);
        assert!(cfg.output.csv && cfg.output.json);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn rejects_both_dissipators_naming_the_keys() {
        let text = minimal_redfield() + "\n[lindblad]\nrate = 0.1\n";
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bath") && msg.contains("lindblad"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_missing_bath_for_redfield() {
        let text = minimal_redfield().replace(
            "[bath]\n            coupling = 0.01\n            temperature = 500.0\n            cutoff = 500.0",
            "",
        );
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("[bath]"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = minimal_redfield() + "\nmystery_knob = 3\n";
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("mystery_knob"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let text = minimal_redfield().replace("schema_version = 1", "schema_version = 99");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn rejects_sub_decade_grid() {
        let text = minimal_redfield().replace("t_max = 1000.0", "t_max = 0.9");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("decade"), "{err}");
    }

    #[test]
    fn occupation_weights_are_validated_and_normalized() {
        let base = minimal_lindblad();
        let bad_len = base.clone()
            + "\n[initial_state]\nkind = \"occupation\"\nweights = [1.0, 1.0]\n";
        let err = ExperimentConfig::from_toml_str(&bad_len).unwrap_err();
        assert!(err.to_string().contains("expected 11"), "{err}");

        let ok = base + "\n[initial_state]\nkind = \"occupation\"\nweights = [0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]\n";
        let cfg = ExperimentConfig::from_toml_str(&ok).unwrap();
        match cfg.initial {
            InitialState::Occupation(w) => {
                assert_eq!(w.len(), 11);
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
                assert_eq!(w[5], 0.5);
            }
            _ => panic!("expected occupation mixture"),
        }
    }

    #[test]
    fn analysis_overrides_reach_the_policy() {
        let text = minimal_redfield()
            + "\n[analysis]\nmin_decades = 2.0\nr2_min = 0.99\nmin_points = 25\n";
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let policy = cfg.overrides.apply(WindowPolicy::default());
        assert_eq!(policy.min_decades, 2.0);
        assert_eq!(policy.r2_min, 0.99);
        assert_eq!(policy.min_points, 25);
        assert_eq!(policy.step_decades, WindowPolicy::default().step_decades);
    }

    #[test]
    fn hash_is_stable_across_reordering_and_sensitive_to_values() {
        let a = ExperimentConfig::from_toml_str(&minimal_redfield()).unwrap();
        // Same content, different key order within [system].
        let reordered = minimal_redfield().replace(
            "particles = 14\n            tunneling = 1.0",
            "tunneling = 1.0\n            particles = 14",
        );
        let b = ExperimentConfig::from_toml_str(&reordered).unwrap();
        assert_eq!(a.hash(), b.hash());

        let changed = minimal_redfield().replace("temperature = 500.0", "temperature = 501.0");
        let c = ExperimentConfig::from_toml_str(&changed).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    fn sweep_text(mode: &str, axes: &str, cap: Option<usize>) -> String {
        let cap_line = cap.map(|c| format!("cap = {c}\n")).unwrap_or_default();
        format!(
            r#"
                schema_version = 1
                mode = "{mode}"
                {cap_line}
                [axes]
                {axes}

                [base]
                schema_version = 1
                solver = "redfield"

                [base.system]
                particles = 8
                tunneling = 1.0
                interaction = 10.0

                [base.bath]
                coupling = 0.01
                temperature = 100.0
                cutoff = 500.0

                [base.grid]
                t_min = 0.1
                t_max = 100.0
                ratio = 1.3
            "#
        )
    }

    #[test]
    fn product_sweep_expands_in_axis_order() {
        let text = sweep_text(
            "product",
            "particles = [8, 10]\ntemperature = [10.0, 100.0, 1000.0]",
            None,
        );
        let sweep = SweepSpec::from_toml_str(&text).unwrap();
        assert_eq!(sweep.len(), 6);
        let cells = sweep.expand(false).unwrap();
        let labels: Vec<&str> = cells.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "N8_T10", "N8_T100", "N8_T1000", "N10_T10", "N10_T100", "N10_T1000"
            ]
        );
        assert_eq!(cells[4].config.system.particles(), 10);
        match &cells[4].config.solver {
            SolverSpec::Redfield { bath } => assert_eq!(bath.temperature().value(), 100.0),
            _ => panic!("expected redfield"),
        }
    }

    #[test]
    fn zip_sweep_requires_equal_lengths() {
        let text = sweep_text(
            "zip",
            "temperature = [10.0, 100.0]\ncutoff = [500.0]",
            None,
        );
        let err = SweepSpec::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("equal-length"), "{err}");

        let ok = sweep_text(
            "zip",
            "temperature = [10.0, 100.0]\ncutoff = [100.0, 500.0]",
            None,
        );
        let cells = SweepSpec::from_toml_str(&ok).unwrap().expand(false).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].label, "T100_wc500");
    }

    #[test]
    fn empty_axis_is_a_config_error() {
        let text = sweep_text("product", "temperature = []", None);
        let err = SweepSpec::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cap_blocks_oversized_sweeps_unless_lifted() {
        let text = sweep_text(
            "product",
            "temperature = [1.0, 2.0, 3.0]\ncutoff = [1.0, 2.0]",
            Some(4),
        );
        let sweep = SweepSpec::from_toml_str(&text).unwrap();
        let err = sweep.expand(false).unwrap_err();
        assert!(err.to_string().contains("cap"), "{err}");
        assert_eq!(sweep.expand(true).unwrap().len(), 6);
    }

    #[test]
    fn bath_axes_demand_a_redfield_base() {
        let text = sweep_text("product", "temperature = [10.0]", None)
            .replace("solver = \"redfield\"", "solver = \"lindblad\"")
            .replace(
                "[base.bath]\n                coupling = 0.01\n                temperature = 100.0\n                cutoff = 500.0",
                "[base.lindblad]\n                rate = 0.1",
            );
        let err = SweepSpec::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("redfield base"), "{err}");
    }

    #[test]
    fn coupling_axis_drives_the_lindblad_rate() {
        let text = sweep_text("product", "coupling = [0.1, 0.2]", None)
            .replace("solver = \"redfield\"", "solver = \"lindblad\"")
            .replace(
                "[base.bath]\n                coupling = 0.01\n                temperature = 100.0\n                cutoff = 500.0",
                "[base.lindblad]\n                rate = 0.05",
            );
        let cells = SweepSpec::from_toml_str(&text).unwrap().expand(false).unwrap();
        assert_eq!(cells.len(), 2);
        match cells[1].config.solver {
            SolverSpec::Lindblad { rate } => assert_eq!(rate, 0.2),
            _ => panic!("expected lindblad"),
        }
    }
}
