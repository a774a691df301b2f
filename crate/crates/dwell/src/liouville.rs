//! Vectorized generators, propagators and steady states.
//!
//! Density matrices are stored against an explicit basis tag.  Generators
//! come in two flavors: the weak-coupling (Redfield-type) generator built
//! from bath transition operators in the energy eigenbasis,
//!
//! ```text
//! d rho / dt = -i [H, rho] + sum_i ( [SS_i rho, S_i] + [S_i, rho SS_i^dag] )
//! ```
//!
//! and its infinite-temperature limit, the dephasing (Lindblad) generator
//! in the occupation basis,
//!
//! ```text
//! d rho / dt = -i [H, rho] - G sum_i [n_i, [n_i, rho]] .
//! ```
//!
//! Everything acts on column-stacked matrices: `vec(A X B) =
//! (B^T (x) A) vec(X)`.  Time evolution exponentiates the generator once at
//! a base step and reaches a logarithmic grid through repeated squaring,
//! so a decade of time costs a handful of matrix products.

use ndarray::Array1;
use num_complex::Complex64;

use crate::fock::{self, Basis, HermitianOperator, Spectrum, SystemSpec};
use crate::linalg::{
    self, dagger, identity_c, kron, max_abs, max_abs_diff, max_row_sum, one_norm, trace_c, CMat,
    CVec,
};
use crate::bath::{BathSpec, TransitionOperator};
use crate::{Error, Result};

/// Validation tolerance for user-supplied density matrices.
const HERMITICITY_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-8;

/// Trace drift at which propagation aborts.
const TRACE_ABORT: f64 = 1e-6;

/// Minimum number of base steps to the first grid point; together with
/// rounding this keeps every grid time within 1% of the requested one.
const MIN_STEPS_TO_FIRST_POINT: u64 = 50;

/// A density matrix tagged with the basis its entries refer to.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    matrix: CMat,
    basis: Basis,
}

impl DensityMatrix {
    /// Validates Hermiticity and unit trace.
    pub fn new(matrix: CMat, basis: Basis) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "density matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = max_abs(&matrix).max(1.0);
        let herm_dev = max_abs_diff(&matrix, &dagger(&matrix));
        if herm_dev > HERMITICITY_TOL * scale {
            return Err(Error::InvalidParameter(format!(
                "density matrix not Hermitian: deviation {herm_dev:.3e}"
            )));
        }
        let tr = trace_c(&matrix);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace {tr} differs from one"
            )));
        }
        Ok(DensityMatrix { matrix, basis })
    }

    /// Internal constructor for states produced by the propagator, whose
    /// trace drift is monitored separately.
    pub(crate) fn unchecked(matrix: CMat, basis: Basis) -> Self {
        DensityMatrix { matrix, basis }
    }

    pub fn from_pure(state: &CVec, basis: Basis) -> Result<Self> {
        let norm2: f64 = state.iter().map(|z| z.norm_sqr()).sum();
        if norm2 <= 0.0 || !norm2.is_finite() {
            return Err(Error::InvalidParameter(
                "pure state must have positive finite norm".into(),
            ));
        }
        let d = state.len();
        let mut m = CMat::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                m[[i, j]] = state[i] * state[j].conj() / norm2;
            }
        }
        Ok(DensityMatrix { matrix: m, basis })
    }

    pub fn maximally_mixed(dim: usize, basis: Basis) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("empty basis".into()));
        }
        let mut m = CMat::zeros((dim, dim));
        let p = Complex64::new(1.0 / dim as f64, 0.0);
        for i in 0..dim {
            m[[i, i]] = p;
        }
        Ok(DensityMatrix { matrix: m, basis })
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace_deviation(&self) -> f64 {
        let tr = trace_c(&self.matrix);
        ((tr.re - 1.0).powi(2) + tr.im.powi(2)).sqrt()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.dot(&self.matrix).diag().iter().map(|z| z.re).sum()
    }

    /// `tr(rho A)`; bases must match.
    pub fn expectation(&self, op: &HermitianOperator) -> Result<f64> {
        if op.basis() != self.basis {
            return Err(Error::BasisMismatch(format!(
                "expectation of operator in basis {} against state in basis {}",
                op.basis(),
                self.basis
            )));
        }
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "operator dim {} vs state dim {}",
                op.dim(),
                self.dim()
            )));
        }
        Ok(self.matrix.dot(op.matrix()).diag().iter().map(|z| z.re).sum())
    }

    /// Sum of the magnitudes of negative eigenvalues; zero for a proper
    /// state, and a direct measure of positivity loss along a trajectory.
    pub fn negativity(&self) -> Result<f64> {
        let herm = (&self.matrix + &dagger(&self.matrix)).mapv(|z| z * 0.5);
        let (eigenvalues, _) = linalg::jacobi_hermitian(&herm)?;
        Ok(eigenvalues.iter().filter(|&&e| e < 0.0).map(|e| -e).sum())
    }

    /// Rotate from the occupation basis to the energy eigenbasis.
    pub fn to_energy_basis(&self, spectrum: &Spectrum) -> Result<DensityMatrix> {
        if self.basis != Basis::Fock {
            return Err(Error::BasisMismatch(format!(
                "state already in basis {}",
                self.basis
            )));
        }
        if spectrum.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "spectrum dim {} vs state dim {}",
                spectrum.dim(),
                self.dim()
            )));
        }
        let v = spectrum.states();
        let rotated = dagger(v).dot(&self.matrix).dot(v);
        Ok(DensityMatrix {
            matrix: rotated,
            basis: Basis::Energy(spectrum.tag()),
        })
    }

    /// Rotate from the energy eigenbasis back to the occupation basis.
    pub fn to_fock_basis(&self, spectrum: &Spectrum) -> Result<DensityMatrix> {
        match self.basis {
            Basis::Energy(tag) if tag == spectrum.tag() => {}
            other => {
                return Err(Error::BasisMismatch(format!(
                    "state in basis {other} does not belong to spectrum {:016x}",
                    spectrum.tag()
                )))
            }
        }
        let v = spectrum.states();
        let rotated = v.dot(&self.matrix).dot(&dagger(v));
        Ok(DensityMatrix {
            matrix: rotated,
            basis: Basis::Fock,
        })
    }
}

/// Which physical generator a Liouvillian encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Redfield,
    Dephasing,
}

/// A vectorized generator acting on column-stacked density matrices.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    matrix: CMat,
    dim: usize,
    basis: Basis,
    kind: GeneratorKind,
    /// Magnitude scale of the dissipator (gamma T or the dephasing rate).
    rate_scale: f64,
    /// Max-row-sum norm of the Hamiltonian, for step-size heuristics.
    hamiltonian_norm: f64,
    particles: u32,
}

impl Liouvillian {
    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn rate_scale(&self) -> f64 {
        self.rate_scale
    }

    pub fn particles(&self) -> u32 {
        self.particles
    }

    /// Apply the generator to a density matrix (matrix form in, matrix
    /// form out); used for residuals and right-hand-side checks.
    pub fn apply(&self, state: &CMat) -> Result<CMat> {
        if state.nrows() != self.dim || state.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "state {}x{} vs generator dim {}",
                state.nrows(),
                state.ncols(),
                self.dim
            )));
        }
        let v = to_vec(state);
        let w = self.matrix.dot(&v);
        Ok(from_vec(&w, self.dim))
    }

    /// Weak-coupling generator in the energy eigenbasis from per-site
    /// coupling operators and their bath transition operators.
    pub fn redfield(
        spectrum: &Spectrum,
        couplings: &[HermitianOperator],
        transitions: &[TransitionOperator],
        rate_scale: f64,
        particles: u32,
    ) -> Result<Liouvillian> {
        if couplings.len() != transitions.len() || couplings.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "need matching non-empty coupling/transition lists, got {} and {}",
                couplings.len(),
                transitions.len()
            )));
        }
        let d = spectrum.dim();
        let basis = Basis::Energy(spectrum.tag());
        let eye = identity_c(d);

        // Unitary part: H is diagonal in its own eigenbasis.
        let mut h = CMat::zeros((d, d));
        for (i, &e) in spectrum.energies().iter().enumerate() {
            h[[i, i]] = Complex64::new(e, 0.0);
        }
        let minus_i = Complex64::new(0.0, -1.0);
        let mut total = (kron(&eye, &h) - kron(&h.t().to_owned(), &eye)).mapv(|z| z * minus_i);

        for (s_op, trans) in couplings.iter().zip(transitions) {
            if s_op.basis() != basis {
                return Err(Error::BasisMismatch(format!(
                    "coupling operator in basis {}, generator in {basis}",
                    s_op.basis()
                )));
            }
            if trans.basis_tag() != spectrum.tag() {
                return Err(Error::BasisMismatch(
                    "transition operator built from a different spectrum".into(),
                ));
            }
            if s_op.dim() != d || trans.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "coupling dim {} / transition dim {} vs spectrum dim {d}",
                    s_op.dim(),
                    trans.dim()
                )));
            }
            let s = s_op.matrix();
            let ss = trans.matrix();
            let ss_dag = dagger(ss);
            let s_t = s.t().to_owned();
            // [SS rho, S] + [S, rho SS^dag] vectorized.
            total = total + kron(&s_t, ss) - kron(&eye, &s.dot(ss))
                + kron(&ss.mapv(|z| z.conj()), s)
                - kron(&ss_dag.dot(s).t().to_owned(), &eye);
        }

        Ok(Liouvillian {
            matrix: total,
            dim: d,
            basis,
            kind: GeneratorKind::Redfield,
            rate_scale,
            hamiltonian_norm: max_row_sum(&h),
            particles,
        })
    }

    /// Convenience builder: diagonalizes the system, rotates both site
    /// occupation operators, forms the asymptotic transition operators and
    /// assembles the generator.  Returns the spectrum alongside so callers
    /// can rotate states and observables consistently.
    pub fn redfield_for_system(
        system: &SystemSpec,
        bath: &BathSpec,
    ) -> Result<(Liouvillian, Spectrum)> {
        let basis = fock::build_basis(system);
        let h = fock::build_hamiltonian(system, &basis)?;
        let spectrum = fock::diagonalize(&h)?;
        let mut couplings = Vec::with_capacity(2);
        let mut transitions = Vec::with_capacity(2);
        for site in [1u8, 2u8] {
            let n_op = fock::number_operator(&basis, site)?.to_energy_basis(&spectrum)?;
            let trans = crate::bath::transition_operator_asymptotic(bath, &spectrum, &n_op)?;
            couplings.push(n_op);
            transitions.push(trans);
        }
        let generator = Liouvillian::redfield(
            &spectrum,
            &couplings,
            &transitions,
            bath.thermal_rate(),
            system.particles(),
        )?;
        Ok((generator, spectrum))
    }

    /// Infinite-temperature dephasing generator in the occupation basis:
    /// `-i[H, .] - rate * sum_i [n_i, [n_i, .]]`.
    pub fn lindblad(system: &SystemSpec, rate: f64) -> Result<Liouvillian> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "dephasing rate must be finite and nonnegative, got {rate}"
            )));
        }
        let basis = fock::build_basis(system);
        let h_op = fock::build_hamiltonian(system, &basis)?;
        let d = h_op.dim();
        let eye = identity_c(d);
        let h = h_op.matrix().clone();
        let minus_i = Complex64::new(0.0, -1.0);
        let mut total = (kron(&eye, &h) - kron(&h.t().to_owned(), &eye)).mapv(|z| z * minus_i);

        let rate_c = Complex64::new(rate, 0.0);
        for site in [1u8, 2u8] {
            let n_op = fock::number_operator(&basis, site)?;
            let n = n_op.matrix();
            let n2 = n.dot(n);
            // rate * (2 n rho n - n^2 rho - rho n^2); n is real diagonal.
            let part = (kron(&n.t().to_owned(), n).mapv(|z| z * 2.0)
                - kron(&eye, &n2)
                - kron(&n2.t().to_owned(), &eye))
            .mapv(|z| z * rate_c);
            total = total + part;
        }

        Ok(Liouvillian {
            matrix: total,
            dim: d,
            basis: Basis::Fock,
            kind: GeneratorKind::Dephasing,
            rate_scale: rate,
            hamiltonian_norm: max_row_sum(&h),
            particles: system.particles(),
        })
    }

    /// Base step of the time-evolution ladder: resolves both the fastest
    /// coherent phase and the largest dissipative rate `rate * N^2`.
    pub fn base_step(&self, t_min: f64) -> Result<f64> {
        if !t_min.is_finite() || t_min <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "first grid time must be positive, got {t_min}"
            )));
        }
        let n2 = (self.particles as f64).powi(2);
        let scale = self.hamiltonian_norm.max(self.rate_scale * n2);
        let mut dt = if scale > 0.0 {
            0.05 / scale
        } else {
            t_min / MIN_STEPS_TO_FIRST_POINT as f64
        };
        while (t_min / dt).round() < MIN_STEPS_TO_FIRST_POINT as f64 {
            dt *= 0.5;
        }
        Ok(dt)
    }
}

fn to_vec(m: &CMat) -> CVec {
    let d = m.nrows();
    let mut v = Array1::<Complex64>::zeros(d * d);
    for j in 0..d {
        for i in 0..d {
            v[j * d + i] = m[[i, j]];
        }
    }
    v
}

fn from_vec(v: &CVec, d: usize) -> CMat {
    let mut m = CMat::zeros((d, d));
    for j in 0..d {
        for i in 0..d {
            m[[i, j]] = v[j * d + i];
        }
    }
    m
}

/// Matrix exponential of the generator over a fixed base step, plus the
/// squaring level reached so far: `matrix = exp(L dt)^(2^level)`.
#[derive(Debug, Clone)]
pub struct Propagator {
    matrix: CMat,
    base_step: f64,
    level: u32,
    dim: usize,
    basis: Basis,
}

impl Propagator {
    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn base_step(&self) -> f64 {
        self.base_step
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Effective time advanced by one application.
    pub fn step(&self) -> f64 {
        self.base_step * (1u64 << self.level) as f64
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub(crate) fn from_parts(matrix: CMat, base_step: f64, level: u32, basis: Basis) -> Self {
        let dim = (matrix.nrows() as f64).sqrt().round() as usize;
        Propagator {
            matrix,
            base_step,
            level,
            dim,
            basis,
        }
    }

    /// One squaring step of the ladder: doubles the time advanced.
    pub fn squared(&self) -> Result<Propagator> {
        if self.level >= 63 {
            return Err(Error::ExponentialBudget(
                "propagator squaring ladder exceeded 63 levels".into(),
            ));
        }
        let mut matrix = self.matrix.dot(&self.matrix);
        enforce_trace_rows(&mut matrix, self.dim);
        Ok(Propagator {
            matrix,
            base_step: self.base_step,
            level: self.level + 1,
            dim: self.dim,
            basis: self.basis,
        })
    }

    pub fn apply(&self, state: &DensityMatrix) -> Result<DensityMatrix> {
        if state.basis() != self.basis {
            return Err(Error::BasisMismatch(format!(
                "propagator in basis {}, state in {}",
                self.basis,
                state.basis()
            )));
        }
        if state.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "state dim {} vs propagator dim {}",
                state.dim(),
                self.dim
            )));
        }
        let v = to_vec(state.matrix());
        let w = self.matrix.dot(&v);
        Ok(DensityMatrix::unchecked(from_vec(&w, self.dim), self.basis))
    }
}

/// The exact flow obeys vec(I)ᵀ·P = vec(I)ᵀ; squaring doubles any defect, so
/// re-project the trace rows after every multiply to keep long ladders from
/// amplifying roundoff into visible trace drift.
fn enforce_trace_rows(matrix: &mut CMat, dim: usize) {
    let n = dim * dim;
    let stride = dim + 1;
    let inv_d = 1.0 / dim as f64;
    for c in 0..n {
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..dim {
            s += matrix[[i * stride, c]];
        }
        let target = if c % stride == 0 { 1.0 } else { 0.0 };
        let defect = (s - target) * inv_d;
        if defect != Complex64::new(0.0, 0.0) {
            for i in 0..dim {
                matrix[[i * stride, c]] -= defect;
            }
        }
    }
}

/// Exponentiates `L * dt` with the scaling-and-squaring Pade scheme.
pub fn build_propagator(generator: &Liouvillian, dt: f64) -> Result<Propagator> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "propagator step must be positive, got {dt}"
        )));
    }
    let scaled = generator.matrix().mapv(|z| z * dt);
    let e = linalg::expm(&scaled)?;
    if e.backward_error > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "matrix exponential backward error {:.3e} above 1e-12",
            e.backward_error
        )));
    }
    let mut matrix = e.matrix;
    enforce_trace_rows(&mut matrix, generator.dim());
    Ok(Propagator::from_parts(matrix, dt, 0, generator.basis()))
}

/// Logarithmic time grid with ratio in (1, 2]: every point is reachable
/// from the previous one with at most one extra squaring level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TimeGrid {
    t_min: f64,
    t_max: f64,
    ratio: f64,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, ratio: f64) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite()) || t_min <= 0.0 || t_max <= t_min {
            return Err(Error::InvalidParameter(format!(
                "need 0 < t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if !(ratio > 1.0 && ratio <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "grid ratio must lie in (1, 2], got {ratio}"
            )));
        }
        Ok(TimeGrid {
            t_min,
            t_max,
            ratio,
        })
    }

    /// Grid with a fixed number of points per decade of time.
    pub fn per_decade(t_min: f64, t_max: f64, points: u32) -> Result<Self> {
        if points < 4 {
            return Err(Error::InvalidParameter(format!(
                "need at least 4 points per decade (ratio <= 2), got {points}"
            )));
        }
        TimeGrid::new(t_min, t_max, 10f64.powf(1.0 / points as f64))
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn times(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut t = self.t_min;
        let limit = self.t_max * (1.0 + 1e-9);
        while t <= limit {
            out.push(t);
            t *= self.ratio;
        }
        out
    }
}

/// One recorded point of an evolution.
#[derive(Debug, Clone)]
pub struct EvolutionSample {
    pub time: f64,
    pub state: DensityMatrix,
    pub trace_deviation: f64,
    pub negativity: f64,
}

/// A propagated trajectory with its bookkeeping.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub initial: DensityMatrix,
    pub samples: Vec<EvolutionSample>,
    pub base_step: f64,
    pub applications: u64,
}

/// Propagate `initial` across a logarithmic grid.  The generator is
/// exponentiated once at the base step; binary squaring then reaches each
/// grid point in `O(log)` matrix applications.  Trace drift beyond 1e-6
/// aborts; positivity loss is recorded per sample.
pub fn evolve(
    generator: &Liouvillian,
    initial: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<Evolution> {
    if initial.basis() != generator.basis() {
        return Err(Error::BasisMismatch(format!(
            "initial state in basis {}, generator in {}",
            initial.basis(),
            generator.basis()
        )));
    }
    if initial.dim() != generator.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state dim {} vs generator dim {}",
            initial.dim(),
            generator.dim()
        )));
    }
    let dt = generator.base_step(grid.t_min())?;
    let base = build_propagator(generator, dt)?;
    evolve_with_base(generator, initial, grid, base)
}

/// Same as [`evolve`] but with a caller-supplied base propagator (e.g. one
/// restored from the on-disk cache).  The base step must satisfy the grid
/// accuracy rule for `grid.t_min()`.
pub fn evolve_with_base(
    generator: &Liouvillian,
    initial: &DensityMatrix,
    grid: &TimeGrid,
    base: Propagator,
) -> Result<Evolution> {
    if base.basis() != generator.basis() || base.dim() != generator.dim() {
        return Err(Error::BasisMismatch(
            "base propagator does not match generator".into(),
        ));
    }
    if base.level() != 0 {
        return Err(Error::InvalidParameter(
            "evolution must start from a level-0 propagator".into(),
        ));
    }
    let dt = base.base_step();
    if (grid.t_min() / dt).round() < MIN_STEPS_TO_FIRST_POINT as f64 {
        return Err(Error::InvalidParameter(format!(
            "base step {dt} too coarse for first grid time {}",
            grid.t_min()
        )));
    }

    let mut ladder: Vec<Propagator> = vec![base];
    let mut state = initial.clone();
    let mut steps_done: u64 = 0;
    let mut applications: u64 = 0;
    let mut samples = Vec::new();

    for t in grid.times() {
        let target = (t / dt).round() as u64;
        let target = target.max(steps_done);
        let mut remaining = target - steps_done;
        let mut bit = 0usize;
        while remaining > 0 {
            if remaining & 1 == 1 {
                while ladder.len() <= bit {
                    let next = ladder.last().expect("ladder non-empty").squared()?;
                    ladder.push(next);
                }
                state = ladder[bit].apply(&state)?;
                applications += 1;
            }
            remaining >>= 1;
            bit += 1;
        }
        steps_done = target;

        let time = steps_done as f64 * dt;
        let trace_deviation = state.trace_deviation();
        if trace_deviation > TRACE_ABORT {
            return Err(Error::TraceDiverged {
                time,
                deviation: trace_deviation,
            });
        }
        let negativity = state.negativity()?;
        samples.push(EvolutionSample {
            time,
            state: state.clone(),
            trace_deviation,
            negativity,
        });
    }

    Ok(Evolution {
        initial: initial.clone(),
        samples,
        base_step: dt,
        applications,
    })
}

/// A steady state with its convergence evidence.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub state: DensityMatrix,
    /// `max |L vec(rho)|` over entries, relative to the generator norm.
    pub relative_residual: f64,
    /// Second-smallest singular value of the generator, relative to its
    /// norm; certifies the kernel is one-dimensional.
    pub kernel_gap: f64,
}

const STEADY_RESIDUAL_TOL: f64 = 1e-10;
const KERNEL_GAP_TOL: f64 = 1e-8;

/// Kernel vector of the generator by shifted inverse iteration, normalized
/// to a unit-trace Hermitian state, with a uniqueness certificate from the
/// second-smallest singular value.
pub fn steady_state(generator: &Liouvillian) -> Result<SteadyState> {
    let d = generator.dim();
    let n = d * d;
    let l = generator.matrix();
    let norm = one_norm(l).max(f64::MIN_POSITIVE);

    // Inverse iteration on (L - sigma I) with a tiny shift to keep the
    // factorization regular.
    let sigma = Complex64::new(1e-12 * norm, 0.0);
    let mut shifted = l.clone();
    for i in 0..n {
        shifted[[i, i]] -= sigma;
    }
    let lu = linalg::lu_factor(shifted)?;

    let mixed = DensityMatrix::maximally_mixed(d, generator.basis())?;
    let mut x = to_vec(mixed.matrix());
    let mut converged = false;
    for _ in 0..60 {
        let mut y = x.clone();
        lu.solve_vec(&mut y);
        let scale = y.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::NonConvergence {
                dim: n,
                iterations: 60,
            });
        }
        y.mapv_inplace(|z| z / scale);
        let residual = {
            let r = l.dot(&y);
            r.iter().map(|z| z.norm()).fold(0.0f64, f64::max) / norm
        };
        let delta = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        x = y;
        if residual <= 0.1 * STEADY_RESIDUAL_TOL || delta <= 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            dim: n,
            iterations: 60,
        });
    }

    // Hermitize and normalize the trace.
    let raw = from_vec(&x, d);
    let herm = (&raw + &dagger(&raw)).mapv(|z| z * 0.5);
    let tr = trace_c(&herm);
    if tr.norm() < 1e-300 {
        return Err(Error::DegenerateKernel(
            "kernel vector has vanishing trace".into(),
        ));
    }
    let rho = herm.mapv(|z| z / tr);
    let residual_vec = l.dot(&to_vec(&rho));
    let relative_residual =
        residual_vec.iter().map(|z| z.norm()).fold(0.0f64, f64::max) / norm;
    if relative_residual > STEADY_RESIDUAL_TOL {
        return Err(Error::NonConvergence {
            dim: n,
            iterations: 60,
        });
    }

    let kernel_gap = kernel_gap(generator, &to_vec(&rho))? / norm;
    if kernel_gap <= KERNEL_GAP_TOL {
        return Err(Error::DegenerateKernel(format!(
            "second singular value {kernel_gap:.3e} of the generator (relative) \
             is below {KERNEL_GAP_TOL:.0e}; steady state is not unique"
        )));
    }

    Ok(SteadyState {
        state: DensityMatrix::unchecked(rho, generator.basis()),
        relative_residual,
        kernel_gap,
    })
}

/// Second-smallest singular value of the generator: inverse iteration on
/// `L^H L` with the known kernel direction deflated.
fn kernel_gap(generator: &Liouvillian, kernel: &CVec) -> Result<f64> {
    let l = generator.matrix();
    let n = l.nrows();
    let lhl = dagger(l).dot(l);
    let norm = one_norm(l).max(f64::MIN_POSITIVE);
    let eps = (1e-14 * norm).powi(2);
    let mut reg = lhl.clone();
    for i in 0..n {
        reg[[i, i]] += Complex64::new(eps, 0.0);
    }
    let lu = linalg::lu_factor(reg)?;

    let knorm = kernel.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let kdir = kernel.mapv(|z| z / knorm);
    let project = |v: &CVec| -> CVec {
        let overlap: Complex64 = kdir.iter().zip(v.iter()).map(|(k, x)| k.conj() * x).sum();
        v - &kdir.mapv(|z| z * overlap)
    };

    // Deterministic start orthogonal to the kernel direction.
    let mut x = Array1::<Complex64>::zeros(n);
    for i in 0..n {
        let phase = (i as f64 * 0.7).sin();
        x[i] = Complex64::new(1.0 + phase, 0.3 * (i as f64 * 0.3).cos());
    }
    x = project(&x);
    let mut value = f64::INFINITY;
    for _ in 0..40 {
        let mut solved = x.clone();
        lu.solve_vec(&mut solved);
        let y = project(&solved);
        let scale = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::NonConvergence {
                dim: n,
                iterations: 40,
            });
        }
        let y = y.mapv(|z| z / scale);
        // Rayleigh quotient against the unregularized matrix.
        let ay = lhl.dot(&y);
        let quotient: f64 = y
            .iter()
            .zip(ay.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        let new_value = quotient.max(0.0).sqrt();
        let done = (new_value - value).abs() <= 1e-10 * value.max(1e-300);
        x = y;
        value = new_value;
        if done {
            break;
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::Temperature;
    use crate::fock;

    fn system(n: u32, j: f64, u: f64) -> SystemSpec {
        SystemSpec::new(n, j, u).unwrap()
    }

    fn uniform_superposition(d: usize) -> DensityMatrix {
        let amp = Complex64::new(1.0 / (d as f64).sqrt(), 0.0);
        let v = Array1::from_elem(d, amp);
        DensityMatrix::from_pure(&v, Basis::Fock).unwrap()
    }

    #[test]
    fn density_matrix_validation() {
        let mut bad = identity_c(3);
        bad[[0, 1]] = Complex64::new(0.0, 0.5);
        assert!(DensityMatrix::new(bad, Basis::Fock).is_err());
        let not_normalized = identity_c(3);
        assert!(DensityMatrix::new(not_normalized, Basis::Fock).is_err());
        let ok = identity_c(4).mapv(|z| z * 0.25);
        assert!(DensityMatrix::new(ok, Basis::Fock).is_ok());
    }

    #[test]
    fn basis_round_trip_is_identity() {
        let spec = system(6, 1.0, 7.0);
        let basis = fock::build_basis(&spec);
        let h = fock::build_hamiltonian(&spec, &basis).unwrap();
        let spectrum = fock::diagonalize(&h).unwrap();
        let rho = uniform_superposition(spectrum.dim());
        let back = rho
            .to_energy_basis(&spectrum)
            .unwrap()
            .to_fock_basis(&spectrum)
            .unwrap();
        assert!(max_abs_diff(rho.matrix(), back.matrix()) < 1e-12);
    }

    #[test]
    fn expectation_requires_matching_basis() {
        let spec = system(4, 1.0, 2.0);
        let basis = fock::build_basis(&spec);
        let h = fock::build_hamiltonian(&spec, &basis).unwrap();
        let spectrum = fock::diagonalize(&h).unwrap();
        let n1 = fock::number_operator(&basis, 1).unwrap();
        let rho = uniform_superposition(5).to_energy_basis(&spectrum).unwrap();
        assert!(matches!(
            rho.expectation(&n1),
            Err(Error::BasisMismatch(_))
        ));
    }

    #[test]
    fn negativity_of_synthetic_matrix() {
        let mut m = CMat::zeros((2, 2));
        m[[0, 0]] = Complex64::new(1.1, 0.0);
        m[[1, 1]] = Complex64::new(-0.1, 0.0);
        let rho = DensityMatrix::unchecked(m, Basis::Fock);
        assert!((rho.negativity().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn generator_preserves_trace_and_hermiticity_structurally() {
        // Trace functional annihilates every column; Hermitian inputs map
        // to Hermitian outputs.
        let spec = system(5, 1.0, 8.0);
        let bath = BathSpec::new(0.01, Temperature::new(300.0).unwrap(), 400.0, false).unwrap();
        let (gen, _) = Liouvillian::redfield_for_system(&spec, &bath).unwrap();
        let d = gen.dim();
        let l = gen.matrix();
        let scale = max_abs(l);
        for col in 0..d * d {
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..d {
                s += l[[i * d + i, col]];
            }
            assert!(s.norm() < 1e-12 * scale, "column {col}: {s}");
        }

        let mut m = CMat::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                let re = ((i * 7 + j * 3) as f64 * 0.11).sin();
                let im = ((i + 2 * j) as f64 * 0.07).cos();
                m[[i, j]] = Complex64::new(re, if i == j { 0.0 } else { im });
            }
        }
        let herm = (&m + &dagger(&m)).mapv(|z| z * 0.5);
        let image = gen.apply(&herm).unwrap();
        assert!(max_abs_diff(&image, &dagger(&image)) < 1e-11 * max_abs(&image).max(1.0));
    }

    #[test]
    fn zero_generator_yields_identity_propagator() {
        let spec = system(3, 0.0, 0.0);
        let gen = Liouvillian::lindblad(&spec, 0.0).unwrap();
        let p = build_propagator(&gen, 0.7).unwrap();
        assert!(max_abs_diff(p.matrix(), &identity_c(16)) < 1e-14);
    }

    #[test]
    fn dephasing_conserves_populations_without_tunneling() {
        let spec = system(6, 0.0, 4.0);
        let gen = Liouvillian::lindblad(&spec, 0.1).unwrap();
        let rho0 = uniform_superposition(7);
        let grid = TimeGrid::per_decade(0.5, 50.0, 6).unwrap();
        let ev = evolve(&gen, &rho0, &grid).unwrap();
        for sample in &ev.samples {
            for i in 0..7 {
                let p = sample.state.matrix()[[i, i]];
                assert!((p.re - 1.0 / 7.0).abs() < 1e-9, "t {}", sample.time);
                assert!(p.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coherence_decay_matches_closed_form_without_tunneling() {
        // With J = 0 the Hamiltonian is diagonal, so dephasing damps each
        // coherence as exp(-2 G (n - m)^2 t) while populations freeze.
        let spec = system(4, 0.0, 3.0);
        let rate = 0.05;
        let gen = Liouvillian::lindblad(&spec, rate).unwrap();
        let rho0 = uniform_superposition(5);
        let grid = TimeGrid::per_decade(1.0, 40.0, 5).unwrap();
        let ev = evolve(&gen, &rho0, &grid).unwrap();
        for sample in &ev.samples {
            for n in 0..5usize {
                for m in 0..5usize {
                    let dn = n as f64 - m as f64;
                    let expected = 0.2 * (-2.0 * rate * dn * dn * sample.time).exp();
                    let got = sample.state.matrix()[[n, m]].norm();
                    assert!(
                        (got - expected).abs() < 1e-8,
                        "({n},{m}) at t {}: {got} vs {expected}",
                        sample.time
                    );
                }
            }
        }
    }

    #[test]
    fn closed_system_preserves_purity() {
        let spec = system(5, 1.0, 6.0);
        let gen = Liouvillian::lindblad(&spec, 0.0).unwrap();
        let rho0 = uniform_superposition(6);
        let grid = TimeGrid::per_decade(0.5, 20.0, 5).unwrap();
        let ev = evolve(&gen, &rho0, &grid).unwrap();
        for sample in &ev.samples {
            assert!((sample.state.purity() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unitary_eigenphases_after_repeated_application() {
        // J = 0 and G = 0: coherences rotate as exp(-i (E_n - E_m) t).
        let spec = system(4, 0.0, 2.0);
        let basis = fock::build_basis(&spec);
        let h = fock::build_hamiltonian(&spec, &basis).unwrap();
        let gen = Liouvillian::lindblad(&spec, 0.0).unwrap();
        let dt = 0.013;
        let p = build_propagator(&gen, dt).unwrap();
        let rho0 = uniform_superposition(5);
        let mut state = rho0.clone();
        let reps = 25;
        for _ in 0..reps {
            state = p.apply(&state).unwrap();
        }
        let t = dt * reps as f64;
        for n in 0..5usize {
            for m in 0..5usize {
                let gap = h.matrix()[[n, n]].re - h.matrix()[[m, m]].re;
                let expected = rho0.matrix()[[n, m]] * Complex64::from_polar(1.0, -gap * t);
                let got = state.matrix()[[n, m]];
                assert!((got - expected).norm() < 1e-9, "({n},{m})");
            }
        }
    }

    #[test]
    fn squaring_matches_double_step() {
        let spec = system(5, 1.0, 8.0);
        let bath = BathSpec::new(0.01, Temperature::new(200.0).unwrap(), 300.0, false).unwrap();
        let (gen, _) = Liouvillian::redfield_for_system(&spec, &bath).unwrap();
        let p1 = build_propagator(&gen, 0.004).unwrap();
        let p2 = build_propagator(&gen, 0.008).unwrap();
        let squared = p1.squared().unwrap();
        assert_eq!(squared.level(), 1);
        assert!((squared.step() - 0.008).abs() < 1e-18);
        assert!(max_abs_diff(squared.matrix(), p2.matrix()) < 1e-9);
    }

    #[test]
    fn grid_times_follow_ratio() {
        let g = TimeGrid::new(1.0, 100.0, 2.0).unwrap();
        let times = g.times();
        assert_eq!(times[0], 1.0);
        assert!(times.windows(2).all(|w| (w[1] / w[0] - 2.0).abs() < 1e-12));
        assert!(*times.last().unwrap() <= 100.0 * (1.0 + 1e-9));
        assert!(TimeGrid::new(1.0, 100.0, 2.5).is_err());
        assert!(TimeGrid::new(1.0, 100.0, 1.0).is_err());
        assert!(TimeGrid::new(-1.0, 100.0, 1.5).is_err());
        assert!(TimeGrid::per_decade(1.0, 10.0, 3).is_err());
    }

    #[test]
    fn base_step_reaches_first_grid_point_in_fifty_steps() {
        let spec = system(10, 1.0, 10.0);
        let gen = Liouvillian::lindblad(&spec, 0.1).unwrap();
        for t_min in [1e-3, 0.1, 5.0] {
            let dt = gen.base_step(t_min).unwrap();
            assert!((t_min / dt).round() >= 50.0, "t_min {t_min}: dt {dt}");
            let m = (t_min / dt).round();
            assert!((m * dt - t_min).abs() <= 0.01 * t_min);
        }
    }

    #[test]
    fn dephasing_steady_state_is_maximally_mixed() {
        let spec = system(6, 1.0, 10.0);
        let gen = Liouvillian::lindblad(&spec, 0.1).unwrap();
        let ss = steady_state(&gen).unwrap();
        assert!(ss.relative_residual <= STEADY_RESIDUAL_TOL);
        assert!(ss.kernel_gap > KERNEL_GAP_TOL);
        let expected = DensityMatrix::maximally_mixed(7, Basis::Fock).unwrap();
        assert!(max_abs_diff(ss.state.matrix(), expected.matrix()) < 1e-9);
    }

    #[test]
    fn degenerate_kernel_is_rejected() {
        // Without tunneling every occupation population is conserved, so
        // the dephasing generator has a d-dimensional kernel.
        let spec = system(5, 0.0, 4.0);
        let gen = Liouvillian::lindblad(&spec, 0.2).unwrap();
        assert!(matches!(
            steady_state(&gen),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn weak_coupling_steady_state_approaches_gibbs() {
        let spec = system(8, 1.0, 10.0);
        let t = 5.0;
        let bath = BathSpec::new(1e-3, Temperature::new(t).unwrap(), 500.0, false).unwrap();
        let (gen, spectrum) = Liouvillian::redfield_for_system(&spec, &bath).unwrap();
        let ss = steady_state(&gen).unwrap();
        // Gibbs state in the energy basis.
        let e0 = spectrum.ground_energy();
        let weights: Vec<f64> = spectrum
            .energies()
            .iter()
            .map(|e| (-(e - e0) / t).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        let mut gibbs = CMat::zeros((9, 9));
        for (i, w) in weights.iter().enumerate() {
            gibbs[[i, i]] = Complex64::new(w / z, 0.0);
        }
        // Trace distance.
        let diff = ss.state.matrix() - &gibbs;
        let (eigs, _) = linalg::jacobi_hermitian(&diff).unwrap();
        let dist = 0.5 * eigs.iter().map(|e| e.abs()).sum::<f64>();
        assert!(dist <= 5e-2, "trace distance {dist}");
    }

    #[test]
    fn steady_state_distinguishes_interactions() {
        let t = 50.0;
        let bath = BathSpec::new(1e-3, Temperature::new(t).unwrap(), 500.0, false).unwrap();
        let kappa = |u: f64| {
            let spec = system(6, 1.0, u);
            let (gen, spectrum) = Liouvillian::redfield_for_system(&spec, &bath).unwrap();
            let ss = steady_state(&gen).unwrap();
            let basis = fock::build_basis(&spec);
            let n1 = fock::number_operator(&basis, 1)
                .unwrap()
                .to_energy_basis(&spectrum)
                .unwrap();
            let n1sq = {
                let m = n1.matrix().dot(n1.matrix());
                HermitianOperator::new(m, n1.basis()).unwrap()
            };
            let mean = ss.state.expectation(&n1).unwrap();
            ss.state.expectation(&n1sq).unwrap() - mean * mean
        };
        let low = kappa(5.0);
        let high = kappa(20.0);
        assert!(
            (low - high).abs() > 1e-3,
            "kappa(U=5) = {low}, kappa(U=20) = {high}"
        );
    }

    #[test]
    fn purity_never_increases_under_dephasing() {
        let spec = system(6, 1.0, 10.0);
        let gen = Liouvillian::lindblad(&spec, 0.1).unwrap();
        let rho0 = uniform_superposition(7);
        let grid = TimeGrid::per_decade(0.1, 100.0, 6).unwrap();
        let ev = evolve(&gen, &rho0, &grid).unwrap();
        let mut last = rho0.purity();
        for sample in &ev.samples {
            let p = sample.state.purity();
            assert!(p <= last + 1e-12, "t {}: {p} after {last}", sample.time);
            last = p;
        }
    }

    #[test]
    fn evolution_reports_applications_and_negativity() {
        let spec = system(4, 1.0, 6.0);
        let gen = Liouvillian::lindblad(&spec, 0.05).unwrap();
        let rho0 = uniform_superposition(5);
        let grid = TimeGrid::per_decade(0.2, 20.0, 5).unwrap();
        let ev = evolve(&gen, &rho0, &grid).unwrap();
        assert!(ev.applications > 0);
        // A proper Lindblad evolution keeps states positive.
        for sample in &ev.samples {
            assert!(sample.negativity < 1e-9);
        }
        assert!(ev.base_step > 0.0);
    }

    #[test]
    fn deep_squaring_ladder_keeps_trace_rows_exact() {
        let spec = system(6, 1.0, 10.0);
        let bath = BathSpec::new(0.01, Temperature::new(500.0).unwrap(), 500.0, false).unwrap();
        let (gen, _) = Liouvillian::redfield_for_system(&spec, &bath).unwrap();
        let mut p = build_propagator(&gen, 0.01).unwrap();
        for _ in 0..30 {
            p = p.squared().unwrap();
        }
        // vec(I)^T P must stay vec(I)^T even after 2^30-fold squaring.
        let d = gen.dim();
        let stride = d + 1;
        let mut worst = 0.0f64;
        for c in 0..d * d {
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..d {
                s += p.matrix()[[i * stride, c]];
            }
            let target = if c % stride == 0 { 1.0 } else { 0.0 };
            worst = worst.max((s - target).norm());
        }
        assert!(worst < 1e-13, "trace-row defect {worst:.3e} after 30 levels");
    }

    #[test]
    fn long_evolution_stays_within_trace_budget() {
        let spec = system(8, 1.0, 10.0);
        let bath = BathSpec::new(0.01, Temperature::new(500.0).unwrap(), 500.0, false).unwrap();
        let (gen, spectrum) = Liouvillian::redfield_for_system(&spec, &bath).unwrap();
        let rho0 = fock::ground_state(&spectrum)
            .unwrap()
            .to_energy_basis(&spectrum)
            .unwrap();
        let grid = TimeGrid::new(0.5, 1e6, 1.3).unwrap();
        let ev = evolve(&gen, &rho0, &grid).unwrap();
        let budget = 1e-9 * ev.applications as f64;
        for sample in &ev.samples {
            assert!(
                sample.trace_deviation <= budget,
                "t {}: deviation {:.3e} above budget {:.3e}",
                sample.time,
                sample.trace_deviation,
                budget
            );
        }
    }
}
