//! Shared helpers for the integration suites: an independent adaptive
//! Runge-Kutta propagation oracle, closed-form bath quantities, and the
//! two cross-checks both the oracle and acceptance targets assert.
#![allow(dead_code)]

use ndarray::Array2;
use num_complex::Complex64;

use dwell::bath::{self, BathSpec, Temperature};
use dwell::fock::{self, SystemSpec};
use dwell::liouville::{evolve, Liouvillian, TimeGrid};

pub type CMat = Array2<Complex64>;

// ---------------------------------------------------------------------
// Dormand-Prince 5(4) on d rho / dt = L(rho): an integrator that shares
// nothing with the propagator-squaring ladder under test.
// ---------------------------------------------------------------------

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the generator's flow from `t0` to `t1` with embedded 5(4)
/// error control.  Panics on solver trouble: this is a test oracle.
pub fn rk45_evolve(
    generator: &Liouvillian,
    rho0: &CMat,
    t0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
) -> CMat {
    assert!(t1 > t0);
    let rhs = |m: &CMat| generator.apply(m).expect("generator application");
    let mut y = rho0.clone();
    let mut t = t0;
    let mut k1 = rhs(&y);
    // Initial step from the RHS magnitude.
    let scale0 = norm_inf(&y).max(atol);
    let mut h = (0.01 * scale0 / norm_inf(&k1).max(1e-300)).min(t1 - t0);
    let mut steps = 0u64;
    while t < t1 {
        steps += 1;
        assert!(steps < 50_000_000, "direct integrator stalled at t = {t}");
        if t + h > t1 {
            h = t1 - t;
        }
        let mut k = Vec::with_capacity(7);
        k.push(k1.clone());
        for (i, row) in A.iter().enumerate() {
            let mut stage = y.clone();
            for (j, &aij) in row.iter().enumerate().take(i + 1) {
                if aij != 0.0 {
                    stage = stage + k[j].mapv(|v| v * (aij * h));
                }
            }
            k.push(rhs(&stage));
        }
        let mut y5 = y.clone();
        let mut y4 = y.clone();
        for i in 0..7 {
            if B5[i] != 0.0 {
                y5 = y5 + k[i].mapv(|v| v * (B5[i] * h));
            }
            if B4[i] != 0.0 {
                y4 = y4 + k[i].mapv(|v| v * (B4[i] * h));
            }
        }
        // Weighted max-norm of the embedded error estimate.
        let mut err: f64 = 0.0;
        for (e, (a, b)) in y5.iter().zip(y4.iter()).map(|(a, b)| (a - b, (a, b))) {
            let w = atol + rtol * a.norm().max(b.norm());
            err = err.max(e.norm() / w);
        }
        if err <= 1.0 {
            t += h;
            y = y5;
            k1 = k.pop().expect("seven stages"); // FSAL: k7 = f(y5)
        }
        let factor = if err > 0.0 {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
    }
    y
}

fn norm_inf(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------
// Closed-form bath correlation function: occupation expansion summed mode
// by mode, no quadrature anywhere.
// ---------------------------------------------------------------------

pub fn trigamma(mut z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    while z.norm() < 30.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let bernoulli = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
    ];
    let mut series = Complex64::new(0.0, 0.0);
    let mut zp = inv * inv2;
    for &c in &bernoulli {
        series += c * zp;
        zp *= inv2;
    }
    inv + 0.5 * inv2 + series + acc
}

/// `C(tau) = (gamma/pi) [ (a + i tau)^{-2} + 2 T^2 Re psi'(1 + T(a - i tau)) ]`
/// with `a = 1/w_c`.
pub fn correlation_series(b: &BathSpec, tau: f64) -> Complex64 {
    let a = 1.0 / b.cutoff();
    let t = b.temperature().value();
    let z = Complex64::new(a, tau);
    let bare = 1.0 / (z * z);
    let thermal = 2.0 * t * t * trigamma(Complex64::new(1.0 + t * a, -t * tau)).re;
    Complex64::new(bare.re + thermal, bare.im) * (b.coupling() / std::f64::consts::PI)
}

// ---------------------------------------------------------------------
// Plain adaptive Simpson for complex integrands.
// ---------------------------------------------------------------------

pub fn adaptive_simpson<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, tol: f64) -> Complex64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    fa: Complex64,
    fm: Complex64,
    fb: Complex64,
    whole: Complex64,
    tol: f64,
    depth: u32,
) -> Complex64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integrates an oscillatory integrand by pre-splitting into panels short
/// enough that each holds a few cycles, then adapting within each.
pub fn oscillatory_integral<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    omega: f64,
    tol: f64,
) -> Complex64 {
    let cycles = (omega.abs() * (b - a) / (2.0 * std::f64::consts::PI)).ceil();
    let panels = (cycles as usize).max(16).min(400_000);
    let h = (b - a) / panels as f64;
    let per_panel = tol / panels as f64;
    let mut total = Complex64::new(0.0, 0.0);
    for i in 0..panels {
        let lo = a + i as f64 * h;
        let hi = if i + 1 == panels { b } else { lo + h };
        total += adaptive_simpson(f, lo, hi, per_panel);
    }
    total
}

// ---------------------------------------------------------------------
// The two oracle-equivalence drivers.
// ---------------------------------------------------------------------

/// Worst entrywise |rho_squaring - rho_direct| over three decades of time
/// for a small dephasing-bath system.
pub fn squaring_vs_direct_worst() -> f64 {
    let spec = SystemSpec::new(4, 1.0, 10.0).expect("system");
    let bath = BathSpec::new(0.05, Temperature::new(10.0).expect("T"), 50.0, false).expect("bath");
    let (generator, spectrum) = Liouvillian::redfield_for_system(&spec, &bath).expect("generator");
    let rho0 = fock::ground_state(&spectrum)
        .expect("ground state")
        .to_energy_basis(&spectrum)
        .expect("basis change");
    let grid = TimeGrid::per_decade(0.1, 100.0, 8).expect("grid");
    let ladder = evolve(&generator, &rho0, &grid).expect("squaring evolution");

    let mut worst: f64 = 0.0;
    let mut direct = rho0.matrix().clone();
    let mut t_prev = 0.0;
    for sample in &ladder.samples {
        direct = rk45_evolve(&generator, &direct, t_prev, sample.time, 1e-11, 1e-13);
        t_prev = sample.time;
        for (a, b) in sample.state.matrix().iter().zip(direct.iter()) {
            worst = worst.max((a - b).norm());
        }
    }
    worst
}

/// Worst entrywise |Re S_infinity - S .* W_oracle| where the oracle rate is
/// the time-domain quadrature of the closed-form correlation function:
/// `W(delta) = Re int_0^t* C(tau) e^{-i delta tau} d tau`, with the exact
/// `2 gamma T / (pi w_c)` tail correction applied at the upper cut.
pub fn asymptotic_vs_time_domain_worst() -> f64 {
    let spec = SystemSpec::new(6, 1.0, 10.0).expect("system");
    let bath = BathSpec::new(0.02, Temperature::new(5.0).expect("T"), 500.0, false).expect("bath");
    let basis = fock::build_basis(&spec);
    let h = fock::build_hamiltonian(&spec, &basis).expect("hamiltonian");
    let spectrum = fock::diagonalize(&h).expect("spectrum");
    let coupling = fock::number_operator(&basis, 1)
        .expect("number operator")
        .to_energy_basis(&spectrum)
        .expect("basis change");
    let s_inf = bath::transition_operator_asymptotic(&bath, &spectrum, &coupling)
        .expect("asymptotic operator");

    // Truncation point: the residual tail obeys |C| <= c2 / tau^2 with
    // c2 = 2 gamma T / (pi w_c), so cutting at t* leaves at most c2/t*.
    let c2 = 2.0 * bath.coupling() * bath.temperature().value()
        / (std::f64::consts::PI * bath.cutoff());
    let t_star = 2500.0;
    debug_assert!(c2 / t_star < 1e-7);

    let d = spectrum.dim();
    let mut worst: f64 = 0.0;
    let mut rate_cache: std::collections::HashMap<u64, f64> = std::collections::HashMap::new();
    for n in 0..d {
        for m in 0..d {
            let delta = spectrum.gap(n, m);
            let w_oracle = *rate_cache.entry(delta.to_bits()).or_insert_with(|| {
                let f = |tau: f64| {
                    let (s, c) = (delta * tau).sin_cos();
                    correlation_series(&bath, tau) * Complex64::new(c, -s)
                };
                let integral = oscillatory_integral(&f, 0.0, t_star, delta, 1e-9);
                let tail = if delta == 0.0 { c2 / t_star } else { 0.0 };
                integral.re + tail
            });
            let s_nm = coupling.matrix()[[n, m]];
            let expected = s_nm.re * w_oracle;
            worst = worst.max((s_inf.matrix()[[n, m]].re - expected).abs());
        }
    }
    worst
}
