//! Dense complex linear algebra shared by all modules: Hermitian
//! eigendecomposition, Hermitian matrix exponential, partial trace,
//! Haar-random unitaries and PSD projection.
//!
//! Conventions used throughout the crate:
//! * qubit sites are 1-based,
//! * amplitude layout is little-endian: site 1 is the fastest-varying index,
//! * eigenvalues are always sorted in decreasing order,
//! * every eigenvector is phase-fixed so its first component of magnitude
//!   above `Tolerances::phase_floor` is real and nonnegative.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub type C64 = num_complex::Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default numerical tolerances, exposed as one record so tests and callers
/// agree on what "within tolerance" means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max-norm bound on `H - H†` for a matrix accepted as Hermitian.
    pub hermiticity: f64,
    /// Max-norm bound on `U†U - I` for a matrix accepted as unitary.
    pub unitarity: f64,
    /// Bound on `|Tr rho - 1|` for density matrices.
    pub trace: f64,
    /// Most negative eigenvalue tolerated in a density matrix.
    pub psd: f64,
    /// Magnitude below which a component is skipped by the phase convention.
    pub phase_floor: f64,
    /// Acceptance probability below which post-selection is treated as failed.
    pub postselect_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-10,
            unitarity: 1e-10,
            trace: 1e-10,
            psd: 1e-10,
            phase_floor: 1e-8,
            postselect_floor: 1e-14,
        }
    }
}

pub type NumericsResult<T> = Result<T, NumericsError>;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not Hermitian: max |H - H†| = {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not unitary: max |U†U - I| = {deviation:.3e}")]
    NotUnitary { deviation: f64 },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension {dim} is not a power of two")]
    NotPowerOfTwoDim { dim: usize },

    #[error("invalid site set {sites:?} for {qubits} qubits")]
    InvalidSites { sites: Vec<usize>, qubits: usize },

    #[error("Haar sampling requires dim >= 2, got {dim}")]
    HaarDimTooSmall { dim: usize },

    #[error("Pauli basis order {k} outside supported range 1..=4")]
    PauliOrderOutOfRange { k: usize },

    #[error("matrix has no positive spectral weight left after clipping")]
    ZeroAfterClipping,
}

/// Largest entry magnitude of `m`.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Max-norm distance `max |a - b|`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn hermiticity_error(m: &CMatrix) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

pub fn unitarity_error(m: &CMatrix) -> f64 {
    let d = m.ncols();
    max_abs_diff(&(m.adjoint() * m), &CMatrix::identity(d, d))
}

fn check_finite(m: &CMatrix) -> NumericsResult<()> {
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            let c = m[(row, col)];
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(NumericsError::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

fn check_square(m: &CMatrix) -> NumericsResult<usize> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn check_hermitian(m: &CMatrix, tol: f64) -> NumericsResult<()> {
    check_finite(m)?;
    check_square(m)?;
    let deviation = hermiticity_error(m);
    if deviation > tol {
        return Err(NumericsError::NotHermitian { deviation });
    }
    Ok(())
}

pub fn check_unitary(m: &CMatrix, tol: f64) -> NumericsResult<()> {
    check_finite(m)?;
    check_square(m)?;
    let deviation = unitarity_error(m);
    if deviation > tol {
        return Err(NumericsError::NotUnitary { deviation });
    }
    Ok(())
}

/// Multiply a column vector by the phase that makes its first component of
/// magnitude above `floor` real and nonnegative.
fn phase_fix_column(col: &mut [C64], floor: f64) {
    for k in 0..col.len() {
        let c = col[k];
        if c.norm() > floor {
            let phase = c.conj() / c.norm();
            for v in col.iter_mut() {
                *v *= phase;
            }
            return;
        }
    }
}

/// Lexicographic comparison of two phase-fixed vectors by (re, im) pairs.
fn lex_cmp(a: &[C64], b: &[C64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.re.partial_cmp(&y.re).unwrap() {
            std::cmp::Ordering::Equal => {}
            ord => return ord,
        }
        match x.im.partial_cmp(&y.im).unwrap() {
            std::cmp::Ordering::Equal => {}
            ord => return ord,
        }
    }
    std::cmp::Ordering::Equal
}

/// Hermitian eigendecomposition with eigenvalues sorted in decreasing order.
///
/// Eigenvectors are returned as the columns of the second element,
/// orthonormal and phase-fixed. Exactly equal eigenvalues are ordered by the
/// lexicographically smaller phase-fixed eigenvector so repeated runs produce
/// identical output.
pub fn eig_hermitian(h: &CMatrix) -> NumericsResult<(Vec<f64>, CMatrix)> {
    let tols = Tolerances::default();
    check_hermitian(h, tols.hermiticity)?;
    let d = h.nrows();
    // Work on the exactly Hermitian part so tiny asymmetries cannot bias the
    // solver.
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();

    let mut cols: Vec<(f64, Vec<C64>)> = (0..d)
        .map(|k| {
            let mut col: Vec<C64> = eig.eigenvectors.column(k).iter().copied().collect();
            phase_fix_column(&mut col, tols.phase_floor);
            (eig.eigenvalues[k], col)
        })
        .collect();
    cols.sort_by(|(la, va), (lb, vb)| {
        lb.partial_cmp(la)
            .unwrap()
            .then_with(|| lex_cmp(va, vb))
    });

    let values: Vec<f64> = cols.iter().map(|(l, _)| *l).collect();
    let vectors = CMatrix::from_fn(d, d, |i, j| cols[j].1[i]);
    Ok((values, vectors))
}

/// Eigenvalues only, sorted in decreasing order. Cheaper than
/// [`eig_hermitian`]; used in the optimizer's inner loop.
pub fn eigvals_hermitian_desc(h: &CMatrix) -> Vec<f64> {
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals
}

/// `exp(-i t H)` for Hermitian `H`, computed through the eigendecomposition.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> NumericsResult<CMatrix> {
    let (values, vectors) = eig_hermitian(h)?;
    let d = h.nrows();
    let phases = CVector::from_fn(d, |k, _| {
        let angle = -t * values[k];
        C64::new(angle.cos(), angle.sin())
    });
    let mut scaled = vectors.clone();
    for k in 0..d {
        let mut col = scaled.column_mut(k);
        col *= phases[k];
    }
    Ok(scaled * vectors.adjoint())
}

/// Partial trace of a `2^q x 2^q` operator keeping the listed sites.
///
/// `keep` must be a nonempty strictly increasing list of 1-based sites; the
/// result is ordered with the smallest kept site as the fastest index.
pub fn partial_trace(rho: &CMatrix, qubit_count: usize, keep: &[usize]) -> NumericsResult<CMatrix> {
    check_finite(rho)?;
    let d = check_square(rho)?;
    if d != 1usize << qubit_count {
        return Err(NumericsError::NotPowerOfTwoDim { dim: d });
    }
    let valid = !keep.is_empty()
        && keep.windows(2).all(|w| w[0] < w[1])
        && keep.iter().all(|&s| s >= 1 && s <= qubit_count);
    if !valid {
        return Err(NumericsError::InvalidSites {
            sites: keep.to_vec(),
            qubits: qubit_count,
        });
    }

    let k = keep.len();
    let keep_bits: Vec<usize> = keep.iter().map(|&s| s - 1).collect();
    let env_bits: Vec<usize> = (0..qubit_count)
        .filter(|b| !keep_bits.contains(b))
        .collect();
    let expand = |kept: usize, env: usize| -> usize {
        let mut idx = 0usize;
        for (pos, &b) in keep_bits.iter().enumerate() {
            idx |= ((kept >> pos) & 1) << b;
        }
        for (pos, &b) in env_bits.iter().enumerate() {
            idx |= ((env >> pos) & 1) << b;
        }
        idx
    };

    let mut out = CMatrix::zeros(1 << k, 1 << k);
    for env in 0..(1usize << env_bits.len()) {
        for a in 0..(1usize << k) {
            let ra = expand(a, env);
            for b in 0..(1usize << k) {
                let rb = expand(b, env);
                out[(a, b)] += rho[(ra, rb)];
            }
        }
    }
    Ok(out)
}

/// Haar-random `dim x dim` unitary: Ginibre draw, QR orthonormalization and a
/// diagonal phase fix so the upper-triangular factor has a positive real
/// diagonal. Deterministic for a given generator state.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> NumericsResult<CMatrix> {
    if dim < 2 {
        return Err(NumericsError::HaarDimTooSmall { dim });
    }
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..dim {
        let rkk = r[(k, k)];
        let phase = if rkk.norm() > 0.0 {
            rkk / rkk.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let mut col = q.column_mut(k);
        col *= phase;
    }
    Ok(q)
}

/// Clip negative eigenvalues to zero and renormalize to unit trace.
///
/// Idempotent on valid density matrices; rejects input whose spectrum is
/// entirely non-positive (catastrophically noisy data).
pub fn psd_project(rho_hat: &CMatrix) -> NumericsResult<CMatrix> {
    let (values, vectors) = eig_hermitian(rho_hat)?;
    let clipped: Vec<f64> = values.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 1e-300 {
        return Err(NumericsError::ZeroAfterClipping);
    }
    let d = rho_hat.nrows();
    let mut out = CMatrix::zeros(d, d);
    for k in 0..d {
        let w = clipped[k] / total;
        if w == 0.0 {
            continue;
        }
        let v = vectors.column(k);
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] += v[i] * v[j].conj() * C64::new(w, 0.0);
            }
        }
    }
    Ok(out)
}

/// Embed `op` (acting on `sites.len()` qubits, first listed site fastest)
/// into the `2^qubits`-dimensional space, identity elsewhere.
///
/// `sites` are 1-based and need not be sorted: `sites[p]` is the physical
/// site carrying qubit `p+1` of `op`.
pub fn embed_on_sites(op: &CMatrix, qubits: usize, sites: &[usize]) -> CMatrix {
    let k = sites.len();
    debug_assert_eq!(op.nrows(), 1 << k);
    let bits: Vec<usize> = sites.iter().map(|&s| s - 1).collect();
    let mut site_mask = 0usize;
    for &b in &bits {
        site_mask |= 1 << b;
    }
    let d = 1usize << qubits;
    let mut out = CMatrix::zeros(d, d);
    let local = |idx: usize| -> usize {
        let mut l = 0usize;
        for (pos, &b) in bits.iter().enumerate() {
            l |= ((idx >> b) & 1) << pos;
        }
        l
    };
    for r in 0..d {
        let rest = r & !site_mask;
        let lr = local(r);
        for lc in 0..(1usize << k) {
            let mut c = rest;
            for (pos, &b) in bits.iter().enumerate() {
                c |= ((lc >> pos) & 1) << b;
            }
            out[(r, c)] = op[(lr, lc)];
        }
    }
    out
}
