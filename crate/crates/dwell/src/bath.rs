//! Ohmic dephasing baths: spectral density, occupation factors,
//! golden-rule rates, the bath correlation function and the transition
//! operators entering the weak-coupling master equation.
//!
//! Each mode couples through its occupation to an independent bath with
//! spectral density `J(w) = gamma w exp(-w / w_c)` held at temperature `T`.
//! The correlation function is
//!
//! ```text
//! C(tau) = int_0^inf dw/pi J(w) [coth(w/2T) cos(w tau) - i sin(w tau)]
//! ```
//!
//! and the asymptotic transition operator in the energy eigenbasis has
//! entries `S_nm (W_nm + i L_nm)` where `S` is the coupling operator,
//! `W_nm` the golden-rule rate at the level gap, and `L` the optional
//! principal-value (Lamb) part.  The rate carries emission or absorption
//! occupation factors depending on the sign of the gap and is continuous
//! at zero gap with value `gamma T`, which is the uniform-rate limit that
//! turns the master equation into pure dephasing at high temperature.

use std::collections::HashMap;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::fock::{Basis, HermitianOperator, Spectrum};
use crate::linalg::RMat;
use crate::quad;
use crate::{Error, Result};

/// Relative tolerance for all bath quadratures.
const QUAD_RTOL: f64 = 1e-8;

/// Above this value of (oscillation frequency) x (integration span), plain
/// Gauss-Kronrod panels chase oscillations and the Filon path takes over.
const OSCILLATION_SWITCH: f64 = 10.0;

/// Below `|gap| / T` of this size the rate uses its Taylor series around
/// zero gap; the exact expression starts losing digits to cancellation.
const RATE_SERIES_SWITCH: f64 = 1e-6;

/// Bath temperature.  The infinite variant is a symbolic flag: occupation
/// factors diverge there and solvers must switch to the dephasing
/// (Lindblad) generator instead of evaluating rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    Finite(f64),
    Infinite,
}

impl Temperature {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_infinite() && value > 0.0 {
            return Ok(Temperature::Infinite);
        }
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive (or infinite), got {value}"
            )));
        }
        Ok(Temperature::Finite(value))
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Temperature::Finite(_))
    }

    /// Numeric value; infinite temperature maps to `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match self {
            Temperature::Finite(t) => *t,
            Temperature::Infinite => f64::INFINITY,
        }
    }

    fn finite_or_err(&self, what: &str) -> Result<f64> {
        match self {
            Temperature::Finite(t) => Ok(*t),
            Temperature::Infinite => Err(Error::InvalidParameter(format!(
                "{what} is undefined at infinite temperature; use the dephasing generator"
            ))),
        }
    }
}

impl Serialize for Temperature {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Temperature::Finite(t) => s.serialize_f64(*t),
            Temperature::Infinite => s.serialize_str("infinite"),
        }
    }
}

/// Ohmic bath parameters shared by both modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BathSpec {
    coupling: f64,
    temperature: Temperature,
    cutoff: f64,
    include_lamb_shift: bool,
}

impl BathSpec {
    pub fn new(
        coupling: f64,
        temperature: Temperature,
        cutoff: f64,
        include_lamb_shift: bool,
    ) -> Result<Self> {
        if !coupling.is_finite() || coupling <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "bath coupling must be positive, got {coupling}"
            )));
        }
        if !cutoff.is_finite() || cutoff <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "bath cutoff must be positive, got {cutoff}"
            )));
        }
        Ok(BathSpec {
            coupling,
            temperature,
            cutoff,
            include_lamb_shift,
        })
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn include_lamb_shift(&self) -> bool {
        self.include_lamb_shift
    }

    /// `gamma T`, the uniform dephasing rate of the high-temperature limit.
    pub fn thermal_rate(&self) -> f64 {
        self.coupling * self.temperature.value()
    }

    /// Frequency beyond which the correlation integrand is below 1e-15 of
    /// its peak: the exponential cutoff has killed it even against the
    /// thermal enhancement `coth ~ 2T/w`.
    pub fn omega_max(&self) -> Result<f64> {
        let t = self.temperature.finite_or_err("correlation quadrature")?;
        Ok(self.cutoff * (35.0 + (2.0 * t / self.cutoff).ln_1p()))
    }

    /// Support radius of the full-line rate profile `gamma_full`; beyond it
    /// both the emission wing (killed by the cutoff) and the absorption
    /// wing (killed by cutoff and occupation) are below 1e-16 of the peak.
    fn gamma_full_support(&self) -> Result<f64> {
        let t = self.temperature.finite_or_err("rate profile support")?;
        Ok(self.cutoff * (40.0 + (2.0 * t / self.cutoff).ln_1p()))
    }
}

/// `J(w) = gamma w exp(-w / w_c)` for `w >= 0`.
pub fn spectral_density(bath: &BathSpec, omega: f64) -> Result<f64> {
    if !omega.is_finite() || omega < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "spectral density needs omega >= 0, got {omega}"
        )));
    }
    Ok(bath.coupling * omega * (-omega / bath.cutoff).exp())
}

/// Bose occupation `1 / (exp(w/T) - 1)` for `w > 0`.  At infinite
/// temperature returns `f64::INFINITY`, the flag that routes callers to the
/// dephasing limit.
pub fn bose_occupation(omega: f64, temperature: Temperature) -> Result<f64> {
    if !omega.is_finite() || omega <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "occupation factor needs omega > 0, got {omega}"
        )));
    }
    match temperature {
        Temperature::Infinite => Ok(f64::INFINITY),
        Temperature::Finite(t) => Ok(1.0 / (omega / t).exp_m1()),
    }
}

/// Golden-rule rate at level gap `delta = E_n - E_m`:
/// absorption `J(delta) n_B(delta)` for positive gaps, emission
/// `J(|delta|) (1 + n_B(|delta|))` for negative ones, continuous at zero
/// with value `gamma T`.  Requires finite temperature.
pub fn rate_w(bath: &BathSpec, delta: f64) -> Result<f64> {
    let t = bath.temperature.finite_or_err("golden-rule rate")?;
    if !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rate needs a finite gap, got {delta}"
        )));
    }
    let x = delta / t;
    let cutoff_factor = (-delta.abs() / bath.cutoff).exp();
    if x.abs() < RATE_SERIES_SWITCH {
        // Both branches share the expansion T (1 - x/2 + x^2/12 + ...).
        let series = 1.0 - 0.5 * x + x * x / 12.0;
        return Ok(bath.coupling * t * cutoff_factor * series);
    }
    let value = if delta > 0.0 {
        let n_b = 1.0 / x.exp_m1();
        bath.coupling * delta * cutoff_factor * n_b
    } else {
        let n_b = 1.0 / (-x).exp_m1();
        bath.coupling * (-delta) * cutoff_factor * (1.0 + n_b)
    };
    Ok(value)
}

/// Thermal envelope `J(w) coth(w / 2T)`, finite at `w = 0` where it takes
/// the value `2 gamma T`.
fn thermal_envelope(bath: &BathSpec, t: f64, omega: f64) -> f64 {
    if omega == 0.0 {
        return 2.0 * bath.coupling * t;
    }
    let j = bath.coupling * omega * (-omega / bath.cutoff).exp();
    j * (1.0 + 2.0 / (omega / t).exp_m1())
}

/// Bath correlation function `C(tau)`.  Stationarity supplies negative
/// arguments through `C(-tau) = conj(C(tau))`.
pub fn correlation_function(bath: &BathSpec, tau: f64) -> Result<Complex64> {
    let t = bath.temperature.finite_or_err("correlation function")?;
    if !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "correlation function needs finite tau, got {tau}"
        )));
    }
    if tau < 0.0 {
        return Ok(correlation_function(bath, -tau)?.conj());
    }
    let omega_max = bath.omega_max()?;
    // Scale of C(0); anchors the absolute tolerance.  Kept well below the
    // relative target so the 1/tau^2 tail stays resolved at large tau.
    let scale = bath.coupling * (bath.cutoff * bath.cutoff + 2.0 * t * bath.cutoff)
        / std::f64::consts::PI;
    let atol = 1e-15 * scale;

    let inv_pi = 1.0 / std::f64::consts::PI;
    if omega_max * tau <= OSCILLATION_SWITCH {
        let integrand = |w: f64| {
            let th = thermal_envelope(bath, t, w);
            let j = if w == 0.0 {
                0.0
            } else {
                bath.coupling * w * (-w / bath.cutoff).exp()
            };
            let (s, c) = (w * tau).sin_cos();
            Complex64::new(th * c, -j * s)
        };
        let r = quad::adaptive_gk(integrand, 0.0, omega_max, QUAD_RTOL, atol, "correlation")?;
        return Ok(r.value * inv_pi);
    }
    // Strongly oscillatory: Filon panels against e^{i w tau} with the two
    // smooth envelopes J coth and J.
    let thermal = quad::filon_oscillatory(
        |w: f64| Complex64::new(thermal_envelope(bath, t, w), 0.0),
        0.0,
        omega_max,
        tau,
        1e-9,
        atol,
        "correlation thermal part",
    )?;
    // The bare envelope carries no occupation factor, so its range and
    // tolerances never see the temperature: the imaginary part comes out
    // identical for any T, as it must.  Its natural scale is gamma w_c^2.
    let bare_range = 40.0 * bath.cutoff;
    let bare_atol = 1e-16 * bath.coupling * bath.cutoff * bath.cutoff;
    let bare = quad::filon_oscillatory(
        |w: f64| Complex64::new(bath.coupling * w * (-w / bath.cutoff).exp(), 0.0),
        0.0,
        bare_range,
        tau,
        1e-11,
        bare_atol,
        "correlation bare part",
    )?;
    Ok(Complex64::new(
        thermal.value.re * inv_pi,
        -bare.value.im * inv_pi,
    ))
}

/// Full-line Fourier transform of the correlation function,
/// `gamma_full(w) = 2 W(-w)`: the emission wing for positive `w`, the
/// absorption wing for negative, continuous through zero at `2 gamma T`
/// with a derivative kink there.
fn gamma_full(bath: &BathSpec, omega: f64) -> f64 {
    2.0 * rate_w(bath, -omega).expect("finite T checked by caller")
}

/// Lamb (principal-value) part of the half-line Fourier transform of
/// `C` at frequency `w0`, i.e. the imaginary part accompanying the rate.
fn lamb_shift(bath: &BathSpec, omega0: f64) -> Result<f64> {
    let omega_max = bath.omega_max()?;
    let g = |w: f64| gamma_full(bath, w);
    let window = 1e-3 * omega0.abs().max(bath.cutoff * 1e-3);
    let r = quad::principal_value(
        g,
        omega0,
        -omega_max,
        omega_max,
        window,
        QUAD_RTOL,
        1e-13 * bath.thermal_rate(),
        "lamb shift",
    )?;
    Ok(r.value.re / (2.0 * std::f64::consts::PI))
}

/// When the transition operator was cut off in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TimeTag {
    Asymptotic,
    Finite(f64),
}

/// Bath transition operator in the energy eigenbasis.  For the asymptotic
/// operator the real part factorizes exactly as `S_nm W_nm`; `rates`
/// stores the `W` factor actually used, entry by entry.
#[derive(Debug, Clone)]
pub struct TransitionOperator {
    matrix: Array2<Complex64>,
    rates: RMat,
    basis_tag: u64,
    time: TimeTag,
}

impl TransitionOperator {
    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    pub fn rates(&self) -> &RMat {
        &self.rates
    }

    pub fn basis_tag(&self) -> u64 {
        self.basis_tag
    }

    pub fn time(&self) -> TimeTag {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_coupling_basis(coupling: &HermitianOperator, spectrum: &Spectrum) -> Result<()> {
    match coupling.basis() {
        Basis::Energy(tag) if tag == spectrum.tag() => Ok(()),
        other => Err(Error::BasisMismatch(format!(
            "coupling operator in basis {other}, expected energy basis of spectrum {:016x}",
            spectrum.tag()
        ))),
    }
}

/// Asymptotic transition operator: entries `S_nm (W(D_nm) + i L(D_nm))`
/// with `D_nm = E_n - E_m`.  The Lamb part is evaluated only when the bath
/// asks for it.
pub fn transition_operator_asymptotic(
    bath: &BathSpec,
    spectrum: &Spectrum,
    coupling: &HermitianOperator,
) -> Result<TransitionOperator> {
    check_coupling_basis(coupling, spectrum)?;
    let d = spectrum.dim();
    if coupling.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "coupling dim {} vs spectrum dim {d}",
            coupling.dim()
        )));
    }
    let s = coupling.matrix();
    let mut rates = RMat::zeros((d, d));
    let mut matrix = Array2::<Complex64>::zeros((d, d));
    // The Lamb part depends on the gap only; cache it per distinct gap.
    let mut lamb_cache: HashMap<u64, f64> = HashMap::new();
    for n in 0..d {
        for m in 0..d {
            let gap = spectrum.gap(n, m);
            let w = rate_w(bath, gap)?;
            rates[[n, m]] = w;
            let lamb = if bath.include_lamb_shift() {
                let key = (-gap).to_bits();
                match lamb_cache.get(&key) {
                    Some(v) => *v,
                    None => {
                        let v = lamb_shift(bath, -gap)?;
                        lamb_cache.insert(key, v);
                        v
                    }
                }
            } else {
                0.0
            };
            let snm = s[[n, m]];
            matrix[[n, m]] = Complex64::new(snm.re * w - snm.im * lamb, snm.re * lamb + snm.im * w);
        }
    }
    Ok(TransitionOperator {
        matrix,
        rates,
        basis_tag: spectrum.tag(),
        time: TimeTag::Asymptotic,
    })
}

/// Segments of [a, b] split at zero when it lies strictly inside.
/// `gamma_full` has a derivative kink there; quadratures converge faster on
/// the halves.
fn split_at_zero(a: f64, b: f64) -> Vec<(f64, f64)> {
    if a < 0.0 && 0.0 < b {
        vec![(a, 0.0), (0.0, b)]
    } else {
        vec![(a, b)]
    }
}

/// `G(delta, t) = int_0^t C(tau) e^{-i delta tau} d tau`, the factor that
/// multiplies a coupling entry with level gap `delta` when the memory
/// integral is cut off at time `t`.
///
/// Swapping the time integral inside the spectral one gives
///
/// ```text
/// G = (1/2pi) int dw gamma_full(w) phi(w + delta),
///     phi(u) = (1 - e^{-i u t}) / (i u),
/// ```
///
/// so the cost is set by the smoothness of `gamma_full`, not by `t`.  The
/// kernel `phi` is entire (the apparent pole cancels).  For short times one
/// direct pass suffices.  For long times the kernel oscillates and the
/// range splits into a window of a few cycles around the stationary point
/// `w = -delta`, integrated directly, plus tails where `phi` separates into
/// a smooth `1/(iu)` part and an oscillatory one handled by Filon panels.
/// As `t -> inf` the window piece tends to the golden-rule rate and the
/// `1/(iu)` tails to the principal-value (Lamb) part.
fn finite_time_factor(bath: &BathSpec, delta: f64, time: f64) -> Result<Complex64> {
    let support = bath.gamma_full_support()?;
    // Entries matter on the thermal-rate scale; pieces get a slice of it.
    let atol = 1e-13 * bath.thermal_rate();
    // The smooth pieces partially cancel against the window, so they are
    // integrated tighter than the headline tolerance.
    let rtol = 1e-10;
    let two_pi = 2.0 * std::f64::consts::PI;

    let phi = |u: f64| -> Complex64 {
        let x = u * time;
        if x.abs() < 1e-3 {
            // (1 - e^{-ix})/(ix) = 1 - ix/2 - x^2/6 + ix^3/24 + x^4/120 ...
            let re = 1.0 - x * x / 6.0 + x * x * x * x / 120.0;
            let im = -0.5 * x + x * x * x / 24.0;
            Complex64::new(re, im) * time
        } else {
            (1.0 - Complex64::new(0.0, -x).exp()) / Complex64::new(0.0, u)
        }
    };
    let full_kernel = |w: f64| phi(w + delta) * gamma_full(bath, w);

    let phase_span = time * (support + delta.abs());
    if phase_span <= 6.0 * OSCILLATION_SWITCH {
        let mut total = Complex64::new(0.0, 0.0);
        for (a, b) in split_at_zero(-support, support) {
            total += quad::adaptive_gk(full_kernel, a, b, rtol, atol, "finite-time factor")?.value;
        }
        return Ok(total / two_pi);
    }

    let pole = -delta;
    let window = OSCILLATION_SWITCH * two_pi / time;
    let win_lo = (pole - window).max(-support);
    let win_hi = (pole + window).min(support);
    let mut total = Complex64::new(0.0, 0.0);
    if win_lo < win_hi {
        for (a, b) in split_at_zero(win_lo, win_hi) {
            total +=
                quad::adaptive_gk(full_kernel, a, b, rtol, atol, "finite-time window")?.value;
        }
    }
    // On the tails |u| t > 2 pi OSCILLATION_SWITCH, so split the kernel.
    let envelope = |w: f64| Complex64::new(gamma_full(bath, w) / (w + delta), 0.0);
    let carrier = Complex64::new(0.0, -delta * time).exp();
    let tails = [(-support, win_lo.max(-support)), (win_hi.min(support), support)];
    for (lo, hi) in tails {
        if hi - lo <= 1e-12 * support {
            continue;
        }
        for (a, b) in split_at_zero(lo, hi) {
            let smooth =
                quad::adaptive_gk(envelope, a, b, rtol, atol, "finite-time smooth tail")?;
            total += Complex64::new(0.0, -1.0) * smooth.value;
            let osc = quad::filon_oscillatory(
                envelope,
                a,
                b,
                -time,
                QUAD_RTOL,
                atol,
                "finite-time oscillatory tail",
            )?;
            total += Complex64::new(0.0, 1.0) * carrier * osc.value;
        }
    }
    Ok(total / two_pi)
}

/// Finite-time transition operator: entries
/// `S_nm int_0^t C(tau) e^{-i D_nm tau} d tau` with `D_nm = E_n - E_m`.
///
/// The factor is shared between entries with the same gap.  It always
/// carries its principal-value imaginary part; the asymptotic operator adds
/// that only when the bath asks for the Lamb shift.
pub fn transition_operator_finite_time(
    bath: &BathSpec,
    spectrum: &Spectrum,
    coupling: &HermitianOperator,
    time: f64,
) -> Result<TransitionOperator> {
    check_coupling_basis(coupling, spectrum)?;
    bath.temperature().finite_or_err("finite-time transition operator")?;
    if !time.is_finite() || time < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "finite-time transition operator needs t >= 0, got {time}"
        )));
    }
    let d = spectrum.dim();
    if coupling.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "coupling dim {} vs spectrum dim {d}",
            coupling.dim()
        )));
    }
    let s = coupling.matrix();
    let mut matrix = Array2::<Complex64>::zeros((d, d));
    let mut rates = RMat::zeros((d, d));
    if time == 0.0 {
        return Ok(TransitionOperator {
            matrix,
            rates,
            basis_tag: spectrum.tag(),
            time: TimeTag::Finite(0.0),
        });
    }
    // One factor per distinct gap; entries then reuse it.
    let mut factors: HashMap<u64, Complex64> = HashMap::new();
    for n in 0..d {
        for m in 0..d {
            let gap = spectrum.gap(n, m);
            let key = gap.to_bits();
            let factor = match factors.get(&key) {
                Some(v) => *v,
                None => {
                    let v = finite_time_factor(bath, gap, time)?;
                    factors.insert(key, v);
                    v
                }
            };
            matrix[[n, m]] = s[[n, m]] * factor;
            rates[[n, m]] = factor.re;
        }
    }
    Ok(TransitionOperator {
        matrix,
        rates,
        basis_tag: spectrum.tag(),
        time: TimeTag::Finite(time),
    })
}
