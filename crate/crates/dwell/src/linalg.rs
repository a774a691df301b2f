//! Dense linear algebra kernel: symmetric tridiagonal QL, Hermitian Jacobi,
//! complex LU, Kronecker products and the scaled Pade matrix exponential.
//!
//! Everything operates on `ndarray` containers with `Complex64` scalars where
//! complex arithmetic is unavoidable.  The solvers are written here rather
//! than pulled from a LAPACK binding so that results are bit-reproducible
//! across machines and the degenerate-subspace conventions below are under
//! our control.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::{Error, Result};

pub type RMat = Array2<f64>;
pub type CMat = Array2<Complex64>;
pub type CVec = Array1<Complex64>;

/// Iteration cap per eigenvalue in the QL sweep.
const QL_MAX_ITER: usize = 50;

/// Sweep cap for the Jacobi fallback.
const JACOBI_MAX_SWEEPS: usize = 100;

/// Relative threshold under which consecutive eigenvalues are treated as a
/// degenerate block and re-orthonormalized deterministically.
const DEGENERACY_RTOL: f64 = 1e-12;

pub fn identity_c(n: usize) -> CMat {
    Array2::from_diag_elem(n, Complex64::new(1.0, 0.0))
}

pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

pub fn trace_c(a: &CMat) -> Complex64 {
    a.diag().sum()
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
}

/// Maximum absolute column sum.
pub fn one_norm(a: &CMat) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

/// Maximum absolute row sum.
pub fn max_row_sum(a: &CMat) -> f64 {
    let mut best = 0.0f64;
    for i in 0..a.nrows() {
        let s: f64 = a.row(i).iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = CMat::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[[i, j]];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..rb {
                for l in 0..cb {
                    out[[i * rb + k, j * cb + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

// ═══════════════════════════════════════════════════════════════════════
// Symmetric tridiagonal eigensolver (implicit-shift QL with eigenvectors)
// ═══════════════════════════════════════════════════════════════════════

/// Eigendecomposition of a real symmetric tridiagonal matrix.
///
/// `diag` holds the n diagonal entries, `offdiag` the n-1 subdiagonal
/// entries.  Returns eigenvalues sorted ascending and the orthogonal matrix
/// whose columns are the matching eigenvectors, after the deterministic
/// sign and degenerate-block conventions of [`canonicalize_real`].
pub fn tridiag_eigen(diag: &[f64], offdiag: &[f64]) -> Result<(Vec<f64>, RMat)> {
    let n = diag.len();
    if n == 0 {
        return Err(Error::DimensionMismatch("empty tridiagonal matrix".into()));
    }
    if offdiag.len() + 1 != n {
        return Err(Error::DimensionMismatch(format!(
            "tridiagonal: {} diagonal vs {} off-diagonal entries",
            n,
            offdiag.len()
        )));
    }
    let mut d = diag.to_vec();
    // Working off-diagonal, padded so e[i] couples i and i+1.
    let mut e = vec![0.0f64; n];
    e[..n - 1].copy_from_slice(offdiag);
    let mut z = Array2::<f64>::eye(n);

    for l in 0..n {
        let mut iter = 0usize;
        loop {
            // Locate a negligible subdiagonal element; block [l, m].
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_ITER {
                return Err(Error::NonConvergence {
                    dim: n,
                    iterations: QL_MAX_ITER,
                });
            }
            // Implicit shift from the 2x2 at the block head.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Rotation underflow: split the block and retry.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut vals = d;
    let mut vecs = z;
    sort_real_pairs(&mut vals, &mut vecs);
    canonicalize_real(&vals, &mut vecs);
    Ok((vals, vecs))
}

fn sort_real_pairs(vals: &mut [f64], vecs: &mut RMat) {
    let n = vals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).expect("finite eigenvalues"));
    let old_vals = vals.to_vec();
    let old_vecs = vecs.clone();
    for (new, &old) in order.iter().enumerate() {
        vals[new] = old_vals[old];
        for k in 0..n {
            vecs[[k, new]] = old_vecs[[k, old]];
        }
    }
}

/// Deterministic eigenvector conventions for real orthogonal columns:
/// within each quasi-degenerate block (consecutive eigenvalue spacing below
/// `1e-12 * max|E|`) re-orthonormalize by modified Gram-Schmidt in column
/// order, then flip each column so its largest-magnitude component (first
/// such index on ties) is positive.
pub fn canonicalize_real(vals: &[f64], vecs: &mut RMat) {
    let n = vals.len();
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = DEGENERACY_RTOL * scale;
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && (vals[end + 1] - vals[end]).abs() <= tol {
            end += 1;
        }
        if end > start {
            for j in start..=end {
                for k in start..j {
                    let dot: f64 = (0..n).map(|r| vecs[[r, k]] * vecs[[r, j]]).sum();
                    for r in 0..n {
                        let vk = vecs[[r, k]];
                        vecs[[r, j]] -= dot * vk;
                    }
                }
                let norm: f64 = (0..n).map(|r| vecs[[r, j]] * vecs[[r, j]]).sum::<f64>().sqrt();
                for r in 0..n {
                    vecs[[r, j]] /= norm;
                }
            }
        }
        start = end + 1;
    }
    for j in 0..n {
        let mut idx = 0;
        let mut best = -1.0f64;
        for r in 0..n {
            let a = vecs[[r, j]].abs();
            if a > best {
                best = a;
                idx = r;
            }
        }
        if vecs[[idx, j]] < 0.0 {
            for r in 0..n {
                vecs[[r, j]] = -vecs[[r, j]];
            }
        }
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Cyclic Jacobi for dense Hermitian matrices
// ═══════════════════════════════════════════════════════════════════════

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations.  Eigenvalues ascend; each eigenvector column is phase-fixed
/// so its largest-magnitude component is real and positive.
pub fn jacobi_hermitian(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "jacobi: {}x{} is not square",
            n,
            a.ncols()
        )));
    }
    let mut m = a.clone();
    let mut v = identity_c(n);
    let norm = frobenius(&m).max(f64::MIN_POSITIVE);
    let stop = 1e-14 * norm;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]].norm_sqr();
            }
        }
        if (2.0 * off).sqrt() <= stop {
            let (vals, vecs) = extract_hermitian_eigen(&m, v);
            return Ok((vals, vecs));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let beta = m[[p, q]];
                let babs = beta.norm();
                if babs <= stop / (n as f64) {
                    continue;
                }
                let phase = beta / babs;
                let alpha = m[[p, p]].re;
                let delta = m[[q, q]].re;
                let tau = (delta - alpha) / (2.0 * babs);
                // Small-magnitude root of t^2 - 2 tau t - 1 = 0.
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Unitary on the (p, q) plane:
                //   R[pp] = c           R[pq] = -s e^{i phi}
                //   R[qp] = s e^{-i phi}  R[qq] = c
                let sp = s * phase;
                let spc = s * phase.conj();
                for k in 0..n {
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    m[[k, p]] = akp * c + akq * spc;
                    m[[k, q]] = -akp * sp + akq * c;
                }
                for k in 0..n {
                    let apk = m[[p, k]];
                    let aqk = m[[q, k]];
                    m[[p, k]] = apk * c + aqk * sp;
                    m[[q, k]] = -apk * spc + aqk * c;
                }
                m[[p, p]] = Complex64::new(alpha + t * babs, 0.0);
                m[[q, q]] = Complex64::new(delta - t * babs, 0.0);
                m[[p, q]] = Complex64::new(0.0, 0.0);
                m[[q, p]] = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c + vkq * spc;
                    v[[k, q]] = -vkp * sp + vkq * c;
                }
            }
        }
    }
    Err(Error::NonConvergence {
        dim: n,
        iterations: JACOBI_MAX_SWEEPS,
    })
}

fn extract_hermitian_eigen(m: &CMat, mut v: CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let mut vals: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).expect("finite eigenvalues"));
    let old_vals = vals.clone();
    let old_v = v.clone();
    for (new, &old) in order.iter().enumerate() {
        vals[new] = old_vals[old];
        for k in 0..n {
            v[[k, new]] = old_v[[k, old]];
        }
    }
    // Phase convention: rotate each column so its largest-magnitude
    // component lands on the positive real axis.
    for j in 0..n {
        let mut idx = 0;
        let mut best = -1.0f64;
        for r in 0..n {
            let a = v[[r, j]].norm();
            if a > best {
                best = a;
                idx = r;
            }
        }
        let pivot = v[[idx, j]];
        if pivot.norm() > 0.0 {
            let phase = pivot / pivot.norm();
            let rot = phase.conj();
            for r in 0..n {
                v[[r, j]] *= rot;
            }
        }
    }
    (vals, v)
}

// ═══════════════════════════════════════════════════════════════════════
// Complex LU with partial pivoting
// ═══════════════════════════════════════════════════════════════════════

/// LU factors of a square complex matrix, `P A = L U` with unit lower
/// triangle, stored packed in `lu` with LAPACK-style row swaps in `ipiv`.
pub struct LuFactors {
    lu: CMat,
    ipiv: Vec<usize>,
}

pub fn lu_factor(a: CMat) -> Result<LuFactors> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "lu: {}x{} is not square",
            n,
            a.ncols()
        )));
    }
    let mut lu = a;
    let mut ipiv = vec![0usize; n];
    for k in 0..n {
        let mut pmax = lu[[k, k]].norm_sqr();
        let mut prow = k;
        for i in (k + 1)..n {
            let m = lu[[i, k]].norm_sqr();
            if m > pmax {
                pmax = m;
                prow = i;
            }
        }
        if pmax == 0.0 {
            return Err(Error::SingularMatrix(format!("zero pivot at column {k}")));
        }
        ipiv[k] = prow;
        if prow != k {
            for j in 0..n {
                let tmp = lu[[k, j]];
                lu[[k, j]] = lu[[prow, j]];
                lu[[prow, j]] = tmp;
            }
        }
        let pivot = lu[[k, k]];
        for i in (k + 1)..n {
            let mult = lu[[i, k]] / pivot;
            lu[[i, k]] = mult;
            if mult != Complex64::new(0.0, 0.0) {
                for j in (k + 1)..n {
                    let lkj = lu[[k, j]];
                    lu[[i, j]] -= mult * lkj;
                }
            }
        }
    }
    Ok(LuFactors { lu, ipiv })
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    /// Solve `A x = b` in place.
    pub fn solve_vec(&self, b: &mut CVec) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.ipiv[k];
            if p != k {
                b.swap(k, p);
            }
        }
        for i in 1..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.lu[[i, j]] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in (i + 1)..n {
                acc -= self.lu[[i, j]] * b[j];
            }
            b[i] = acc / self.lu[[i, i]];
        }
    }

    /// Solve `A X = B` column by column.
    pub fn solve_mat(&self, b: &CMat) -> CMat {
        let n = self.dim();
        debug_assert_eq!(b.nrows(), n);
        let mut out = b.clone();
        for j in 0..b.ncols() {
            let mut col = out.column(j).to_owned();
            self.solve_vec(&mut col);
            out.column_mut(j).assign(&col);
        }
        out
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Matrix exponential: Pade(13) with scaling and squaring
// ═══════════════════════════════════════════════════════════════════════

/// Norm bound under which the order-13 Pade approximant has backward error
/// below double-precision unit roundoff.
const PADE13_THETA: f64 = 5.371_920_351_148_152;

/// Unit roundoff, reported as the backward-error bound whenever the input
/// was scaled under `PADE13_THETA`.
const UNIT_ROUNDOFF: f64 = 1.1e-16;

const PADE13_COEFFS: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Cap on the number of squarings; beyond this the caller should shrink the
/// time step instead.
const MAX_SQUARINGS: u32 = 64;

pub struct Expm {
    pub matrix: CMat,
    pub squarings: u32,
    /// A priori backward-error bound of the Pade core after scaling.
    pub backward_error: f64,
}

/// `exp(A)` for a square complex matrix.
pub fn expm(a: &CMat) -> Result<Expm> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expm: {}x{} is not square",
            n,
            a.ncols()
        )));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::InvalidParameter("expm: non-finite input".into()));
    }
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as i64
    } else {
        0
    };
    if s > MAX_SQUARINGS as i64 {
        return Err(Error::ExponentialBudget(format!(
            "norm {norm:.3e} needs {s} squarings (cap {MAX_SQUARINGS}); reduce the step"
        )));
    }
    let s = s as u32;
    let scaled = a.mapv(|z| z / 2f64.powi(s as i32));

    let b = &PADE13_COEFFS;
    let ident = identity_c(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let u_inner = a6.mapv(|z| z * b[13]) + a4.mapv(|z| z * b[11]) + a2.mapv(|z| z * b[9]);
    let u_poly = a6.dot(&u_inner)
        + a6.mapv(|z| z * b[7])
        + a4.mapv(|z| z * b[5])
        + a2.mapv(|z| z * b[3])
        + ident.mapv(|z| z * b[1]);
    let u = scaled.dot(&u_poly);

    let v_inner = a6.mapv(|z| z * b[12]) + a4.mapv(|z| z * b[10]) + a2.mapv(|z| z * b[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * b[6])
        + a4.mapv(|z| z * b[4])
        + a2.mapv(|z| z * b[2])
        + ident.mapv(|z| z * b[0]);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let factors = lu_factor(lhs)?;
    let mut result = factors.solve_mat(&rhs);
    for _ in 0..s {
        result = result.dot(&result);
    }
    Ok(Expm {
        matrix: result,
        squarings: s,
        backward_error: UNIT_ROUNDOFF,
    })
}
