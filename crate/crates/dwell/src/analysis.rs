//! Observable extraction and trajectory analysis: occupation-number
//! fluctuations, rescaled time axes, power-law exponent fitting, scaling
//! collapses and exponent tables.
//!
//! The central observable is the on-site fluctuation
//! `kappa = <n1^2> - <n1>^2`.  Relaxation curves are compared on rescaled
//! abscissas `t / tau` with `tau = U^2 N^2 / (gamma J^2)` and the
//! finite-temperature refinement `tau~ = tau / W01`, where `W01` is the
//! golden-rule rate at the lowest level gap (absorption branch, recorded
//! with every output).  Power-law regimes are detected by a documented
//! sliding-window policy rather than by eye.

use serde::{Deserialize, Serialize};

use crate::fock::{HermitianOperator, Spectrum, SystemSpec};
use crate::bath::{rate_w, BathSpec};
use crate::liouville::Evolution;
use crate::{Error, Result};

/// `tr(rho n^2) - tr(rho n)^2`; bases must match.
pub fn fluctuation(
    rho: &crate::liouville::DensityMatrix,
    number_op: &HermitianOperator,
) -> Result<f64> {
    if number_op.basis() != rho.basis() {
        return Err(Error::BasisMismatch(format!(
            "fluctuation of operator in basis {} against state in basis {}",
            number_op.basis(),
            rho.basis()
        )));
    }
    if number_op.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "operator dim {} vs state dim {}",
            number_op.dim(),
            rho.dim()
        )));
    }
    let n = number_op.matrix();
    let rho_n = rho.matrix().dot(n);
    let mean: f64 = rho_n.diag().iter().map(|z| z.re).sum();
    let second: f64 = rho_n.dot(n).diag().iter().map(|z| z.re).sum();
    Ok(second - mean * mean)
}

/// Time-rescaling metadata attached to every trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleMeta {
    /// `U^2 N^2 / (coupling J^2)`.
    pub tau: f64,
    /// Rate at the lowest level gap (absorption branch); for the
    /// dephasing solver this is the uniform rate itself.
    pub w01: f64,
    /// `tau / w01`; absent when the rate underflows to zero (cold bath).
    pub tau_tilde: Option<f64>,
}

/// `tau = U^2 N^2 / (coupling J^2)`.  The coupling is the bath coupling
/// for the weak-coupling solver and the dephasing rate for the
/// infinite-temperature one.
pub fn heating_timescale(system: &SystemSpec, coupling: f64) -> Result<f64> {
    if !(coupling.is_finite() && coupling > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rescaling needs a positive coupling, got {coupling}"
        )));
    }
    let j = system.tunneling();
    if j == 0.0 {
        return Err(Error::InvalidParameter(
            "rescaling undefined without tunneling (J = 0)".into(),
        ));
    }
    let u = system.interaction();
    let n = system.particles() as f64;
    Ok(u * u * n * n / (coupling * j * j))
}

impl RescaleMeta {
    pub fn for_redfield(
        system: &SystemSpec,
        bath: &BathSpec,
        spectrum: &Spectrum,
    ) -> Result<RescaleMeta> {
        let tau = heating_timescale(system, bath.coupling())?;
        let w01 = rate_w(bath, spectrum.gap(1, 0))?;
        let tau_tilde = if w01 > 0.0 { Some(tau / w01) } else { None };
        Ok(RescaleMeta {
            tau,
            w01,
            tau_tilde,
        })
    }

    pub fn for_dephasing(system: &SystemSpec, rate: f64) -> Result<RescaleMeta> {
        let tau = heating_timescale(system, rate)?;
        Ok(RescaleMeta {
            tau,
            w01: rate,
            tau_tilde: Some(tau / rate),
        })
    }
}

/// Where a trajectory came from; enough to re-run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub particles: u32,
    pub tunneling: f64,
    pub interaction: f64,
    /// "redfield" or "lindblad".
    pub solver: String,
    pub coupling: Option<f64>,
    pub temperature: Option<f64>,
    pub cutoff: Option<f64>,
    pub lamb_shift: Option<bool>,
    pub dephasing_rate: Option<f64>,
}

/// A fluctuation trajectory with per-point diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub kappa: Vec<f64>,
    /// `kappa / N^2`.
    pub kappa_rescaled: Vec<f64>,
    pub trace_dev: Vec<f64>,
    pub eps: Vec<f64>,
    /// Fluctuation of the initial state.
    pub kappa0: f64,
    /// Base step of the propagator ladder that produced the samples.
    pub base_step: f64,
    pub rescale: RescaleMeta,
    pub provenance: Provenance,
}

impl Trajectory {
    /// Validates ascending times, variance positivity and the two-point
    /// mixture bound `kappa / N^2 <= 1/4`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        times: Vec<f64>,
        kappa: Vec<f64>,
        trace_dev: Vec<f64>,
        eps: Vec<f64>,
        kappa0: f64,
        base_step: f64,
        rescale: RescaleMeta,
        provenance: Provenance,
    ) -> Result<Self> {
        let len = times.len();
        if kappa.len() != len || trace_dev.len() != len || eps.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "trajectory columns disagree: {len} times, {} kappa, {} trace_dev, {} eps",
                kappa.len(),
                trace_dev.len(),
                eps.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "trajectory times must be strictly ascending".into(),
            ));
        }
        let n2 = (provenance.particles as f64).powi(2);
        for (&t, &k) in times.iter().zip(&kappa) {
            if k < -1e-10 * n2 {
                return Err(Error::InvalidParameter(format!(
                    "negative fluctuation {k} at t = {t}"
                )));
            }
            if k / n2 > 0.25 + 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "fluctuation {k} at t = {t} exceeds the two-point bound N^2/4"
                )));
            }
        }
        let kappa_rescaled = kappa.iter().map(|k| k / n2).collect();
        Ok(Trajectory {
            times,
            kappa,
            kappa_rescaled,
            trace_dev,
            eps,
            kappa0,
            base_step,
            rescale,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_trace_dev(&self) -> f64 {
        self.trace_dev.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_eps(&self) -> f64 {
        self.eps.iter().cloned().fold(0.0, f64::max)
    }
}

/// Reads the fluctuation observable off a propagated evolution.
pub fn extract_trajectory(
    evolution: &Evolution,
    number_op: &HermitianOperator,
    rescale: RescaleMeta,
    provenance: Provenance,
) -> Result<Trajectory> {
    let kappa0 = fluctuation(&evolution.initial, number_op)?;
    let mut times = Vec::with_capacity(evolution.samples.len());
    let mut kappa = Vec::with_capacity(evolution.samples.len());
    let mut trace_dev = Vec::with_capacity(evolution.samples.len());
    let mut eps = Vec::with_capacity(evolution.samples.len());
    for sample in &evolution.samples {
        times.push(sample.time);
        kappa.push(fluctuation(&sample.state, number_op)?);
        trace_dev.push(sample.trace_deviation);
        eps.push(sample.negativity);
    }
    Trajectory::new(
        times,
        kappa,
        trace_dev,
        eps,
        kappa0,
        evolution.base_step,
        rescale,
        provenance,
    )
}

/// Which rescaled abscissa to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RescaleMode {
    Tau,
    TauTilde,
}

/// A rescaled curve: `kappa / N^2` against `t / tau` (or `t / tau~`),
/// optionally carrying its fitted algebraic window on the same axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescaledCurve {
    pub abscissa: Vec<f64>,
    pub ordinate: Vec<f64>,
    pub window: Option<(f64, f64)>,
}

/// Divide the time axis by `tau` or `tau~`.
pub fn rescale_time(trajectory: &Trajectory, mode: RescaleMode) -> Result<RescaledCurve> {
    let scale = match mode {
        RescaleMode::Tau => {
            if !(trajectory.rescale.tau > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "tau = {} does not define a rescaling",
                    trajectory.rescale.tau
                )));
            }
            trajectory.rescale.tau
        }
        RescaleMode::TauTilde => match trajectory.rescale.tau_tilde {
            Some(tt) if tt > 0.0 => tt,
            _ => {
                return Err(Error::InvalidParameter(
                    "tau~ undefined: the rate at the lowest gap is zero (cold bath)".into(),
                ))
            }
        },
    };
    Ok(RescaledCurve {
        abscissa: trajectory.times.iter().map(|t| t / scale).collect(),
        ordinate: trajectory.kappa_rescaled.clone(),
        window: None,
    })
}

/// Sliding-window regime detection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    /// Minimum window width in decades.
    pub min_decades: f64,
    /// Window boundary step in decades.
    pub step_decades: f64,
    /// Maximum spread of the slopes of the window's thirds.
    pub max_slope_variation: f64,
    /// Minimum coefficient of determination.
    pub r2_min: f64,
    /// Minimum points per window.
    pub min_points: usize,
    /// Windows may not start before this time (early transient).
    pub guard_time: f64,
    /// ... nor before kappa has grown by this factor over kappa(0).
    pub guard_growth: f64,
    /// kappa(0) for the growth guard; 0 disables it.
    pub kappa0: f64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy {
            min_decades: 1.5,
            step_decades: 0.1,
            max_slope_variation: 0.05,
            r2_min: 0.995,
            min_points: 10,
            guard_time: 0.0,
            guard_growth: 1.1,
            kappa0: 0.0,
        }
    }
}

impl WindowPolicy {
    /// Standard guards for a propagated trajectory: skip the first few
    /// base steps and wait for 10% growth above the initial fluctuation.
    pub fn for_trajectory(trajectory: &Trajectory) -> WindowPolicy {
        WindowPolicy {
            guard_time: 5.0 * trajectory.base_step,
            kappa0: trajectory.kappa0,
            ..WindowPolicy::default()
        }
    }
}

/// Result of power-law regime detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Fitted exponent; 0 when no algebraic regime was found.
    pub alpha: f64,
    /// Accepted window in abscissa units, absent when rejected.
    pub window: Option<(f64, f64)>,
    pub r2: f64,
    pub n_points: usize,
    pub method_tag: String,
    pub accepted: bool,
    pub note: String,
}

const METHOD_TAG: &str = "sliding-log-window-v1";

fn rejected(note: &str) -> PowerLawFit {
    PowerLawFit {
        alpha: 0.0,
        window: None,
        r2: 0.0,
        n_points: 0,
        method_tag: METHOD_TAG.into(),
        accepted: false,
        note: note.into(),
    }
}

/// Least squares of y on x; returns (slope, r^2).  A flat response
/// (vanishing variance in y) reports r^2 = 0: a constant is not evidence
/// of a power law.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    if syy <= 1e-28 * n {
        return (slope, 0.0);
    }
    let ss_res = syy - sxy * sxy / sxx;
    (slope, 1.0 - (ss_res / syy).max(0.0))
}

/// Detect an algebraic regime `kappa ~ t^alpha` with sliding log-log
/// windows.  Needs at least 20 points spanning 1.5 decades; "no regime"
/// is a valid, flagged outcome.
pub fn fit_power_law(times: &[f64], kappa: &[f64], policy: &WindowPolicy) -> Result<PowerLawFit> {
    if times.len() != kappa.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} times vs {} ordinates",
            times.len(),
            kappa.len()
        )));
    }
    if times.len() < 20 {
        return Err(Error::InvalidParameter(format!(
            "power-law fit needs at least 20 points, got {}",
            times.len()
        )));
    }
    let first = *times.first().expect("nonempty");
    let last = *times.last().expect("nonempty");
    if !(first > 0.0) || last / first < 10f64.powf(1.5) * (1.0 - 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "power-law fit needs 1.5 decades of positive time, got [{first}, {last}]"
        )));
    }

    // Early-transient guards, plus log-domain sanity.
    let growth_floor = if policy.kappa0 > 0.0 {
        policy.guard_growth * policy.kappa0
    } else {
        0.0
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &k) in times.iter().zip(kappa) {
        if t >= policy.guard_time && t > 0.0 && k > 0.0 && k >= growth_floor {
            xs.push(t.log10());
            ys.push(k.ln());
        }
    }
    if xs.len() < policy.min_points {
        return Ok(rejected("fewer than min_points survive the guards"));
    }
    let lo_min = xs[0];
    let hi_max = *xs.last().expect("nonempty");
    if hi_max - lo_min < policy.min_decades {
        return Ok(rejected("guarded range narrower than the minimum window"));
    }

    let ln10 = std::f64::consts::LN_10;
    let step = policy.step_decades;
    let mut best: Option<(f64, f64, f64, f64, usize)> = None; // (width, lo, alpha, r2, n)
    let mut lo = lo_min;
    while lo + policy.min_decades <= hi_max + 1e-12 {
        let mut hi = lo + policy.min_decades;
        loop {
            let hi_clamped = hi.min(hi_max);
            let i0 = xs.partition_point(|&x| x < lo - 1e-12);
            let i1 = xs.partition_point(|&x| x <= hi_clamped + 1e-12);
            let wx = &xs[i0..i1];
            let wy = &ys[i0..i1];
            if wx.len() >= policy.min_points {
                let (slope_dec, r2) = linear_fit(wx, wy);
                let alpha = slope_dec / ln10;
                // Slope stability across the window's thirds.
                let third = wx.len() / 3;
                let s1 = linear_fit(&wx[..third], &wy[..third]).0 / ln10;
                let s2 = linear_fit(&wx[third..2 * third], &wy[third..2 * third]).0 / ln10;
                let s3 = linear_fit(&wx[2 * third..], &wy[2 * third..]).0 / ln10;
                let spread = s1.max(s2).max(s3) - s1.min(s2).min(s3);
                let in_bounds = (-1e-9..=1.0 + 1e-9).contains(&alpha);
                if r2 >= policy.r2_min && spread < policy.max_slope_variation && in_bounds {
                    let width = hi_clamped - lo;
                    let candidate = (width, lo, alpha, r2, wx.len());
                    best = match best {
                        None => Some(candidate),
                        Some(b) => {
                            // Widest window wins; ties go to later times.
                            if width > b.0 + 1e-9 || (width > b.0 - 1e-9 && lo > b.1 + 1e-9) {
                                Some(candidate)
                            } else {
                                Some(b)
                            }
                        }
                    };
                }
            }
            if hi >= hi_max {
                break;
            }
            hi += step;
        }
        lo += step;
    }

    match best {
        None => Ok(rejected("no window meets the r2 and slope-stability bars")),
        Some((_, lo, alpha, r2, n)) => {
            let hi = best.expect("present").0 + lo;
            Ok(PowerLawFit {
                alpha,
                window: Some((10f64.powf(lo), 10f64.powf(hi))),
                r2,
                n_points: n,
                method_tag: METHOD_TAG.into(),
                accepted: true,
                note: String::new(),
            })
        }
    }
}

/// RMS of pairwise log-ordinate differences on a common log grid
/// restricted to the curves' common algebraic window.  Zero means perfect
/// collapse; a uniform factor-2 offset between two curves gives ln 2.
pub fn collapse_metric(curves: &[RescaledCurve]) -> Result<f64> {
    if curves.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "collapse metric needs at least 2 curves, got {}",
            curves.len()
        )));
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (i, c) in curves.iter().enumerate() {
        let (wlo, whi) = c.window.ok_or_else(|| {
            Error::InvalidParameter(format!("curve {i} has no fitted algebraic window"))
        })?;
        if !(wlo > 0.0 && whi > wlo) {
            return Err(Error::InvalidParameter(format!(
                "curve {i} window [{wlo}, {whi}] is not a positive interval"
            )));
        }
        lo = lo.max(wlo);
        hi = hi.min(whi);
    }
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "algebraic windows do not overlap (common range [{lo}, {hi}])"
        )));
    }

    const GRID: usize = 50;
    let llo = lo.log10();
    let lhi = hi.log10();
    let mut interpolated = Vec::with_capacity(curves.len());
    for c in curves {
        let mut values = Vec::with_capacity(GRID);
        for k in 0..GRID {
            let x = llo + (lhi - llo) * k as f64 / (GRID - 1) as f64;
            values.push(log_interpolate(c, x)?);
        }
        interpolated.push(values);
    }

    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..interpolated.len() {
        for j in i + 1..interpolated.len() {
            for k in 0..GRID {
                let d = interpolated[i][k] - interpolated[j][k];
                sum += d * d;
                count += 1;
            }
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// ln(ordinate) at abscissa 10^x by linear interpolation in log-log space.
fn log_interpolate(curve: &RescaledCurve, x: f64) -> Result<f64> {
    let xs: Vec<f64> = curve.abscissa.iter().map(|t| t.log10()).collect();
    let idx = xs.partition_point(|&v| v < x);
    let (i0, i1) = if idx == 0 {
        (0, 1)
    } else if idx >= xs.len() {
        (xs.len() - 2, xs.len() - 1)
    } else {
        (idx - 1, idx)
    };
    if xs.len() < 2 || x < xs[0] - 1e-9 || x > xs[xs.len() - 1] + 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "abscissa 10^{x} outside curve range"
        )));
    }
    let y0 = curve.ordinate[i0];
    let y1 = curve.ordinate[i1];
    if !(y0 > 0.0 && y1 > 0.0) {
        return Err(Error::InvalidParameter(
            "collapse metric needs positive ordinates".into(),
        ));
    }
    let w = if xs[i1] == xs[i0] {
        0.0
    } else {
        (x - xs[i0]) / (xs[i1] - xs[i0])
    };
    Ok(y0.ln() * (1.0 - w) + y1.ln() * w)
}

/// One row of an exponent table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentRow {
    pub temperature: f64,
    pub cutoff: f64,
    pub alpha: f64,
    pub window: Option<(f64, f64)>,
    pub r2: f64,
    pub w01: f64,
    pub accepted: bool,
}

/// Exponent-vs-temperature table with monotonicity diagnostics per cutoff.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentTable {
    pub rows: Vec<ExponentRow>,
    /// For each cutoff value: is alpha nondecreasing in T?
    pub monotone_by_cutoff: Vec<(f64, bool)>,
}

/// Sorts rows by (cutoff, temperature) and diagnoses the alpha(T) trend
/// within each cutoff group.  Groups with fewer than two distinct
/// temperatures carry no trend and get no diagnostic.
pub fn exponent_table(mut rows: Vec<ExponentRow>) -> ExponentTable {
    rows.sort_by(|a, b| {
        a.cutoff
            .total_cmp(&b.cutoff)
            .then(a.temperature.total_cmp(&b.temperature))
    });
    let mut monotone = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let cutoff = rows[i].cutoff;
        let mut ok = true;
        let mut distinct = 1usize;
        let mut j = i;
        while j + 1 < rows.len() && rows[j + 1].cutoff == cutoff {
            if rows[j + 1].temperature > rows[j].temperature {
                distinct += 1;
                if rows[j + 1].alpha < rows[j].alpha - 1e-12 {
                    ok = false;
                }
            }
            j += 1;
        }
        if distinct >= 2 {
            monotone.push((cutoff, ok));
        }
        i = j + 1;
    }
    ExponentTable {
        rows,
        monotone_by_cutoff: monotone,
    }
}
