//! Objective functions over candidate disentanglers and conjugate-gradient
//! minimisation over the two-qubit unitary manifold, plus isometry
//! extraction.
//!
//! The search works in the Hermitian parametrization `U = e^{iH}` with `H`
//! expanded in the two-qubit Pauli basis. Each iteration recenters the block
//! state at the current iterate, measures the 16 finite-difference gradient
//! components with the non-unitary test matrices `I + i eps sigma x sigma`,
//! combines them into a Polak-Ribiere conjugate direction, and line-searches
//! the one-parameter family `exp(-it sum G~ sigma x sigma)`.

use crate::numerics::{
    self, eig_hermitian, eigvals_hermitian_desc, embed_on_sites, CMatrix, CVector, C64,
};
use crate::pauli::pauli_basis;
use crate::sim::BlockDensityMatrix;
use rand::Rng;
use std::sync::OnceLock;
use thiserror::Error;

pub type OptimResult<T> = Result<T, OptimError>;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("objective expects a block on {expected} qubits, got dimension {got}")]
    BadBlockDimension { expected: usize, got: usize },

    #[error("epsilon_weight must be 0 unless the objective kind is `modified`")]
    StrayEpsilonWeight,

    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TracedSide {
    /// Unitary on block qubits (1, 2); qubit 1 is traced out.
    Left,
    /// Unitary on block qubits (2, 3); qubit 3 is traced out.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Sum of the two smallest eigenvalues of the disentangled pair state.
    RankTail,
    /// Cubic elementary symmetric coefficient b = (1 - 3 Tr A^2 + 2 Tr A^3)/6,
    /// evaluated without diagonalization.
    CharPolyB,
    /// RankTail plus a small multiple of the second eigenvalue.
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub traced_side: TracedSide,
    pub epsilon_weight: f64,
}

impl ObjectiveSpec {
    pub fn rank_tail(traced_side: TracedSide) -> Self {
        Self {
            kind: ObjectiveKind::RankTail,
            traced_side,
            epsilon_weight: 0.0,
        }
    }

    pub fn char_poly_b(traced_side: TracedSide) -> Self {
        Self {
            kind: ObjectiveKind::CharPolyB,
            traced_side,
            epsilon_weight: 0.0,
        }
    }

    pub fn modified(traced_side: TracedSide, epsilon_weight: f64) -> Self {
        Self {
            kind: ObjectiveKind::Modified,
            traced_side,
            epsilon_weight,
        }
    }

    pub fn validate(&self) -> OptimResult<()> {
        if self.kind != ObjectiveKind::Modified && self.epsilon_weight != 0.0 {
            return Err(OptimError::StrayEpsilonWeight);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOptions {
    /// Upper end of the search interval.
    pub t_max: f64,
    /// First bracketing step; expansion is geometric from here.
    pub bracket_init: f64,
    /// Relative width at which golden-section stops.
    pub rel_width: f64,
}

impl Default for LineSearchOptions {
    fn default() -> Self {
        Self {
            t_max: std::f64::consts::PI,
            bracket_init: 1e-3,
            rel_width: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    /// Finite-difference step for the gradient test matrices.
    pub fd_step: f64,
    pub max_iters: usize,
    /// Stop once the objective is at or below this value.
    pub f_tol: f64,
    /// Relative improvement below which progress counts as stalled.
    pub stall_tol: f64,
    /// Number of iterations over which the stall test is applied.
    pub stall_window: usize,
    /// Independent descents; the first uses the caller's initial guess when
    /// present, the rest start from Haar-random unitaries.
    pub restarts: usize,
    pub line_search: LineSearchOptions,
    /// Use the update-mixing beta exactly as printed in the source method
    /// description instead of standard Polak-Ribiere-plus.
    pub legacy_beta_form: bool,
    /// Final objective above this value marks the outcome as stalled.
    pub fail_threshold: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            fd_step: 1e-6,
            max_iters: 500,
            f_tol: 1e-12,
            stall_tol: 1e-9,
            stall_window: 5,
            restarts: 3,
            line_search: LineSearchOptions::default(),
            legacy_beta_form: false,
            fail_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IterationRecord {
    pub f: f64,
    pub grad_norm: f64,
    pub t_opt: f64,
}

#[derive(Debug, Clone, Default)]
pub struct OptimizationTrace {
    /// Per-iteration records of the winning restart.
    pub iterations: Vec<IterationRecord>,
    pub winner_restart: usize,
    pub objective_evals: usize,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub unitary: CMatrix,
    pub f_min: f64,
    pub trace: OptimizationTrace,
    /// True when every restart ended above `fail_threshold`.
    pub stalled: bool,
}

/// Two-qubit Pauli basis in gradient component order (mu, nu).
fn pauli2() -> &'static [CMatrix] {
    static BASIS: OnceLock<Vec<CMatrix>> = OnceLock::new();
    BASIS.get_or_init(|| pauli_basis(2).expect("two-qubit basis"))
}

/// A minimisation problem over a single two-qubit unitary.
pub trait UnitaryObjective {
    /// Qubit count of the data operator.
    fn qubits(&self) -> usize;
    /// Block-local qubits (1-based) the unitary acts on.
    fn pair(&self) -> (usize, usize);
    /// Objective for an arbitrary (possibly non-unitary) 4x4 test matrix
    /// against the given block operator.
    fn value(&self, test: &CMatrix, rho: &CMatrix) -> f64;
}

/// Conjugate the block operator with `test` embedded on `pair`, then keep
/// the listed qubits.
pub fn conjugate_and_keep(
    rho: &CMatrix,
    qubits: usize,
    pair: (usize, usize),
    test: &CMatrix,
    keep: &[usize],
) -> CMatrix {
    let embedded = embed_on_sites(test, qubits, &[pair.0, pair.1]);
    let conj = &embedded * rho * embedded.adjoint();
    numerics::partial_trace(&conj, qubits, keep).expect("valid partial trace")
}

fn spectrum_value(kind: ObjectiveKind, epsilon_weight: f64, a: &CMatrix) -> f64 {
    match kind {
        ObjectiveKind::RankTail => {
            let vals = eigvals_hermitian_desc(a);
            vals[2] + vals[3]
        }
        ObjectiveKind::CharPolyB => {
            let a2 = a * a;
            let a3 = &a2 * a;
            (1.0 - 3.0 * a2.trace().re + 2.0 * a3.trace().re) / 6.0
        }
        ObjectiveKind::Modified => {
            let vals = eigvals_hermitian_desc(a);
            vals[2] + vals[3] + epsilon_weight * vals[1]
        }
    }
}

/// The standard three-qubit block objective of the disentangler search.
#[derive(Debug, Clone)]
pub struct BlockObjective {
    pub spec: ObjectiveSpec,
}

impl UnitaryObjective for BlockObjective {
    fn qubits(&self) -> usize {
        3
    }

    fn pair(&self) -> (usize, usize) {
        match self.spec.traced_side {
            TracedSide::Right => (2, 3),
            TracedSide::Left => (1, 2),
        }
    }

    fn value(&self, test: &CMatrix, rho: &CMatrix) -> f64 {
        let keep: &[usize] = match self.spec.traced_side {
            TracedSide::Right => &[1, 2],
            TracedSide::Left => &[2, 3],
        };
        let a = conjugate_and_keep(rho, 3, self.pair(), test, keep);
        spectrum_value(self.spec.kind, self.spec.epsilon_weight, &a)
    }
}

/// Optional last-block mode: a single unitary on the middle pair of a
/// four-qubit block must make both outer pair states rank-2, so the
/// objective is the sum of both eigenvalue tails.
#[derive(Debug, Clone)]
pub struct JointLastBlockObjective;

impl UnitaryObjective for JointLastBlockObjective {
    fn qubits(&self) -> usize {
        4
    }

    fn pair(&self) -> (usize, usize) {
        (2, 3)
    }

    fn value(&self, test: &CMatrix, rho: &CMatrix) -> f64 {
        let embedded = embed_on_sites(test, 4, &[2, 3]);
        let conj = &embedded * rho * embedded.adjoint();
        let left = numerics::partial_trace(&conj, 4, &[1, 2]).expect("valid partial trace");
        let right = numerics::partial_trace(&conj, 4, &[3, 4]).expect("valid partial trace");
        spectrum_value(ObjectiveKind::RankTail, 0.0, &left)
            + spectrum_value(ObjectiveKind::RankTail, 0.0, &right)
    }
}

fn check_block(rho: &BlockDensityMatrix, qubits: usize) -> OptimResult<()> {
    if rho.matrix.nrows() != 1 << qubits {
        return Err(OptimError::BadBlockDimension {
            expected: qubits,
            got: rho.matrix.nrows(),
        });
    }
    Ok(())
}

fn check_candidate_unitary(u: &CMatrix) -> OptimResult<()> {
    numerics::check_unitary(u, 1e-8)?;
    Ok(())
}

/// Eigenvalue-tail objective `lambda_3 + lambda_4` of the pair state left
/// after applying the candidate disentangler.
pub fn objective_rank_tail(
    u: &CMatrix,
    rho123: &BlockDensityMatrix,
    traced_side: TracedSide,
) -> OptimResult<f64> {
    check_block(rho123, 3)?;
    check_candidate_unitary(u)?;
    let obj = BlockObjective {
        spec: ObjectiveSpec::rank_tail(traced_side),
    };
    Ok(obj.value(u, &rho123.matrix))
}

/// Characteristic-polynomial objective `b`, computed from trace powers alone.
pub fn objective_char_poly_b(
    u: &CMatrix,
    rho123: &BlockDensityMatrix,
    traced_side: TracedSide,
) -> OptimResult<f64> {
    check_block(rho123, 3)?;
    check_candidate_unitary(u)?;
    let obj = BlockObjective {
        spec: ObjectiveSpec::char_poly_b(traced_side),
    };
    Ok(obj.value(u, &rho123.matrix))
}

/// Rank-tail objective with the degeneracy-breaking `epsilon * lambda_2`
/// perturbation.
pub fn objective_modified(
    u: &CMatrix,
    rho123: &BlockDensityMatrix,
    traced_side: TracedSide,
    epsilon_weight: f64,
) -> OptimResult<f64> {
    check_block(rho123, 3)?;
    check_candidate_unitary(u)?;
    let spec = ObjectiveSpec::modified(traced_side, epsilon_weight);
    spec.validate()?;
    let obj = BlockObjective { spec };
    Ok(obj.value(u, &rho123.matrix))
}

/// Forward-difference gradient of the objective at the identity, in the 16
/// Pauli directions, using the test matrices `I + i eps sigma_mu x sigma_nu`.
/// The (I, I) component is a global phase and is pinned to zero.
pub fn gradient_fd<O: UnitaryObjective>(
    obj: &O,
    rho_centered: &CMatrix,
    fd_step: f64,
) -> [f64; 16] {
    let basis = pauli2();
    let f0 = obj.value(&CMatrix::identity(4, 4), rho_centered);
    let mut g = [0.0f64; 16];
    for (idx, sigma) in basis.iter().enumerate().skip(1) {
        let test = CMatrix::identity(4, 4) + sigma * C64::new(0.0, fd_step);
        g[idx] = (obj.value(&test, rho_centered) - f0) / fd_step;
    }
    g
}

/// `sum_(mu,nu) coeffs[mu,nu] sigma_mu x sigma_nu`.
pub fn direction_hamiltonian(coeffs: &[f64; 16]) -> CMatrix {
    let basis = pauli2();
    let mut h = CMatrix::zeros(4, 4);
    for (idx, sigma) in basis.iter().enumerate() {
        if coeffs[idx] != 0.0 {
            h += sigma * C64::new(coeffs[idx], 0.0);
        }
    }
    h
}

fn dot(a: &[f64; 16], b: &[f64; 16]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Bracketing plus golden-section line search over `t in [0, t_max]`.
///
/// Returns `(t_opt, f_opt, evals)` with `f_opt <= f0`; `t_opt = 0` when no
/// descent was found along the direction.
pub fn line_search<F: FnMut(f64) -> f64>(
    mut phi: F,
    f0: f64,
    opts: &LineSearchOptions,
) -> (f64, f64, usize) {
    let mut evals = 0usize;
    let mut best = (0.0f64, f0);
    let mut probe = |t: f64, evals: &mut usize, best: &mut (f64, f64)| -> f64 {
        let f = phi(t);
        *evals += 1;
        if f < best.1 {
            *best = (t, f);
        }
        f
    };

    // find an initial step that actually descends
    let mut t1 = opts.bracket_init.min(opts.t_max);
    let mut f1 = probe(t1, &mut evals, &mut best);
    let mut shrinks = 0;
    while f1 >= f0 && shrinks < 24 {
        t1 /= 4.0;
        f1 = probe(t1, &mut evals, &mut best);
        shrinks += 1;
    }
    if f1 >= f0 {
        return (0.0, f0, evals);
    }

    // geometric expansion until the objective turns back up
    let mut lo = 0.0f64;
    let mut mid = t1;
    let mut f_mid = f1;
    let mut hi = t1;
    loop {
        if hi >= opts.t_max {
            hi = opts.t_max;
            break;
        }
        let next = (hi * 2.0).min(opts.t_max);
        let f_next = probe(next, &mut evals, &mut best);
        if f_next >= f_mid {
            hi = next;
            break;
        }
        lo = mid;
        mid = next;
        f_mid = f_next;
        hi = next;
    }

    // golden-section on [lo, hi]
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut fx1 = probe(x1, &mut evals, &mut best);
    let mut fx2 = probe(x2, &mut evals, &mut best);
    while (b - a) > opts.rel_width * b.max(opts.bracket_init) {
        if fx1 <= fx2 {
            b = x2;
            x2 = x1;
            fx2 = fx1;
            x1 = b - inv_phi * (b - a);
            fx1 = probe(x1, &mut evals, &mut best);
        } else {
            a = x1;
            x1 = x2;
            fx1 = fx2;
            x2 = a + inv_phi * (b - a);
            fx2 = probe(x2, &mut evals, &mut best);
        }
    }
    best.1 = best.1.min(f0);
    (best.0, best.1, evals)
}

struct RestartOutcome {
    unitary: CMatrix,
    f_min: f64,
    iterations: Vec<IterationRecord>,
    evals: usize,
}

fn expm_from_eig(vals: &[f64], vecs: &CMatrix, t: f64) -> CMatrix {
    let d = vals.len();
    let phases = CVector::from_fn(d, |k, _| {
        let angle = -t * vals[k];
        C64::new(angle.cos(), angle.sin())
    });
    let mut scaled = vecs.clone();
    for k in 0..d {
        let mut col = scaled.column_mut(k);
        col *= phases[k];
    }
    scaled * vecs.adjoint()
}

fn run_restart<O: UnitaryObjective>(
    rho0: &CMatrix,
    obj: &O,
    opts: &OptimizerOptions,
    u0: CMatrix,
) -> RestartOutcome {
    let qubits = obj.qubits();
    let pair = [obj.pair().0, obj.pair().1];
    let identity = CMatrix::identity(4, 4);
    let recenter = |u: &CMatrix| -> CMatrix {
        let e = embed_on_sites(u, qubits, &pair);
        &e * rho0 * e.adjoint()
    };

    let mut u = u0;
    let mut rho_k = recenter(&u);
    let mut f_cur = obj.value(&identity, &rho_k);
    let mut evals = 1usize;
    let mut iterations = Vec::new();
    let mut g_prev: Option<[f64; 16]> = None;
    let mut dir_prev: Option<[f64; 16]> = None;
    let mut recent: Vec<f64> = vec![f_cur];
    let mut no_descent_streak = 0usize;

    for _ in 0..opts.max_iters {
        if f_cur <= opts.f_tol {
            break;
        }
        let g = gradient_fd(obj, &rho_k, opts.fd_step);
        evals += 16;
        let grad_norm = dot(&g, &g).sqrt();
        if grad_norm == 0.0 {
            break;
        }

        let beta = match (&g_prev, &dir_prev) {
            (Some(gp), Some(dp)) => {
                if opts.legacy_beta_form {
                    // literal printed form: memory of the previous conjugate
                    // direction in both products
                    let denom = dot(dp, dp);
                    if denom > 0.0 {
                        let mut diff = [0.0f64; 16];
                        for i in 0..16 {
                            diff[i] = dp[i] - g[i];
                        }
                        (dot(&g, &diff) / denom).max(0.0)
                    } else {
                        0.0
                    }
                } else {
                    // Polak-Ribiere-plus on raw gradients
                    let denom = dot(gp, gp);
                    if denom > 0.0 {
                        let mut diff = [0.0f64; 16];
                        for i in 0..16 {
                            diff[i] = g[i] - gp[i];
                        }
                        (dot(&g, &diff) / denom).max(0.0)
                    } else {
                        0.0
                    }
                }
            }
            _ => 0.0,
        };

        let mut dir = g;
        if let Some(dp) = &dir_prev {
            for i in 0..16 {
                dir[i] += beta * dp[i];
            }
        }
        // fall back to steepest descent when conjugation spoiled the slope
        if dot(&dir, &g) <= 0.0 {
            dir = g;
        }

        let h = direction_hamiltonian(&dir);
        let (hvals, hvecs) = eig_hermitian(&h).expect("direction Hamiltonian is Hermitian");
        let (t_opt, f_new, ls_evals) = line_search(
            |t| obj.value(&expm_from_eig(&hvals, &hvecs, t), &rho_k),
            f_cur,
            &opts.line_search,
        );
        evals += ls_evals;
        iterations.push(IterationRecord {
            f: f_new,
            grad_norm,
            t_opt,
        });

        if t_opt > 0.0 {
            u = expm_from_eig(&hvals, &hvecs, t_opt) * &u;
            rho_k = recenter(&u);
            f_cur = obj.value(&identity, &rho_k);
            evals += 1;
            no_descent_streak = 0;
        } else {
            no_descent_streak += 1;
            if no_descent_streak >= 2 {
                break;
            }
        }

        g_prev = Some(g);
        dir_prev = Some(dir);

        recent.push(f_cur);
        if recent.len() > opts.stall_window + 1 {
            recent.remove(0);
            let from = recent[0];
            let improvement = from - f_cur;
            if improvement < opts.stall_tol * from.abs().max(1e-300) {
                break;
            }
        }
    }

    RestartOutcome {
        unitary: u,
        f_min: f_cur,
        iterations,
        evals,
    }
}

/// Multi-restart conjugate-gradient minimisation over two-qubit unitaries.
///
/// The first restart starts from `init` when given; every other restart
/// draws a Haar-random start. Restarts stop early once one of them reaches
/// `f_tol`. The best restart wins, ties broken by the lowest index.
pub fn cg_minimize_with<O: UnitaryObjective, R: Rng + ?Sized>(
    rho0: &CMatrix,
    obj: &O,
    opts: &OptimizerOptions,
    init: Option<&CMatrix>,
    rng: &mut R,
) -> OptimResult<CgOutcome> {
    if let Some(u) = init {
        check_candidate_unitary(u)?;
    }
    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut total_evals = 0usize;
    for restart in 0..opts.restarts.max(1) {
        let u0 = match (restart, init) {
            (0, Some(u)) => u.clone(),
            _ => numerics::haar_unitary(4, rng)?,
        };
        let outcome = run_restart(rho0, obj, opts, u0);
        total_evals += outcome.evals;
        let better = match &best {
            None => true,
            Some((_, b)) => outcome.f_min < b.f_min,
        };
        if better {
            best = Some((restart, outcome));
        }
        if best.as_ref().unwrap().1.f_min <= opts.f_tol {
            break;
        }
    }
    let (winner, outcome) = best.expect("at least one restart ran");
    Ok(CgOutcome {
        stalled: outcome.f_min > opts.fail_threshold,
        unitary: outcome.unitary,
        f_min: outcome.f_min,
        trace: OptimizationTrace {
            iterations: outcome.iterations,
            winner_restart: winner,
            objective_evals: total_evals,
        },
    })
}

/// Conjugate-gradient search for the disentangler of a three-qubit block.
pub fn cg_minimize<R: Rng + ?Sized>(
    rho123: &BlockDensityMatrix,
    spec: &ObjectiveSpec,
    opts: &OptimizerOptions,
    init: Option<&CMatrix>,
    rng: &mut R,
) -> OptimResult<CgOutcome> {
    check_block(rho123, 3)?;
    spec.validate()?;
    let obj = BlockObjective { spec: *spec };
    cg_minimize_with(&rho123.matrix, &obj, opts, init, rng)
}

/// Unitary mapping the two dominant eigenvectors of a two-qubit state onto
/// the `|0> x C^2` subspace: `V psi_1 = |00>`, `V psi_2 = |01>`, remaining
/// rows completed orthonormally onto `|10>`, `|11>`.
pub fn extract_isometry(rho12: &BlockDensityMatrix) -> OptimResult<CMatrix> {
    check_block(rho12, 2)?;
    let (_, vecs) = eig_hermitian(&rho12.matrix)?;
    // eigenvector k (descending) is sent to these basis indices; qubit 1 of
    // the pair (the ancilla) is the fast index, so |01> = index 2
    let targets = [0usize, 2, 1, 3];
    let mut v = CMatrix::zeros(4, 4);
    for k in 0..4 {
        for c in 0..4 {
            v[(targets[k], c)] = vecs[(c, k)].conj();
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_mera;
    use crate::numerics::{haar_unitary, max_abs_diff, partial_trace};
    use crate::sim::{generate_state, StateVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_block3(rng: &mut ChaCha8Rng) -> BlockDensityMatrix {
        let dim = 8;
        let mut amps: Vec<C64> = (0..(dim * 4))
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        let state = StateVector::from_amplitudes(5, amps).unwrap();
        state.reduced_density(&[1, 2, 3]).unwrap()
    }

    fn basis_state_block(index: usize) -> BlockDensityMatrix {
        let mut m = CMatrix::zeros(8, 8);
        m[(index, index)] = C64::new(1.0, 0.0);
        BlockDensityMatrix::new(vec![1, 2, 3], m).unwrap()
    }

    #[test]
    fn rank_tail_trivial_cases() {
        let id = CMatrix::identity(4, 4);
        let zero_block = basis_state_block(0);
        let f = objective_rank_tail(&id, &zero_block, TracedSide::Right).unwrap();
        assert!(f.abs() <= 1e-12);

        // rho with maximally mixed pair state: f = 1/2
        let mixed = BlockDensityMatrix::new(
            vec![1, 2, 3],
            CMatrix::identity(8, 8) * C64::new(1.0 / 8.0, 0.0),
        )
        .unwrap();
        let f = objective_rank_tail(&id, &mixed, TracedSide::Right).unwrap();
        assert!((f - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn rank_tail_vanishes_for_true_disentangler() {
        // build rho123 from a known MERA block: isometry output entangled
        // with one extra qubit through a disentangler
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_mera(8, &mut rng).unwrap();
        let state = generate_state(&c).unwrap();
        let rho = state.reduced_density(&[1, 2, 3]).unwrap();
        let u_true = c.layers[0].disentanglers[0].matrix.adjoint();
        let f = objective_rank_tail(&u_true, &rho, TracedSide::Right).unwrap();
        assert!(f <= 1e-12, "f = {f}");
    }

    #[test]
    fn char_poly_matches_eigenvalue_oracle() {
        let id = CMatrix::identity(4, 4);
        let mixed = BlockDensityMatrix::new(
            vec![1, 2, 3],
            CMatrix::identity(8, 8) * C64::new(1.0 / 8.0, 0.0),
        )
        .unwrap();
        let b = objective_char_poly_b(&id, &mixed, TracedSide::Right).unwrap();
        assert!((b - 0.0625).abs() <= 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let rho = random_block3(&mut rng);
            let u = haar_unitary(4, &mut rng).unwrap();
            let b = objective_char_poly_b(&u, &rho, TracedSide::Right).unwrap();
            let a = conjugate_and_keep(&rho.matrix, 3, (2, 3), &u, &[1, 2]);
            let vals = eigvals_hermitian_desc(&a);
            let oracle = vals[0] * vals[1] * vals[2]
                + vals[0] * vals[1] * vals[3]
                + vals[0] * vals[2] * vals[3]
                + vals[1] * vals[2] * vals[3];
            assert!((b - oracle).abs() <= 1e-12);
            assert!(b >= -1e-12);
        }
    }

    #[test]
    fn char_poly_vanishes_on_rank_two() {
        // rank-2 pair state from a 3-qubit pure state with qubit 3 pure
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut amps = vec![C64::new(0.0, 0.0); 8];
        for idx in 0..4 {
            amps[idx] = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        let state = StateVector::from_amplitudes(3, amps).unwrap();
        let rho = state.reduced_density(&[1, 2, 3]).unwrap();
        let b = objective_char_poly_b(&CMatrix::identity(4, 4), &rho, TracedSide::Right).unwrap();
        assert!(b.abs() <= 1e-12);
    }

    #[test]
    fn modified_objective_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_block3(&mut rng);
        let u = haar_unitary(4, &mut rng).unwrap();
        let plain = objective_rank_tail(&u, &rho, TracedSide::Right).unwrap();
        let modified = objective_modified(&u, &rho, TracedSide::Right, 0.0).unwrap();
        assert_eq!(plain, modified);

        let zero_block = basis_state_block(0);
        let f = objective_modified(&CMatrix::identity(4, 4), &zero_block, TracedSide::Right, 0.3)
            .unwrap();
        // the pair state stays |00><00|, so lambda_2 = 0 for any weight
        assert!(f.abs() <= 1e-12);

        assert!(matches!(
            ObjectiveSpec {
                kind: ObjectiveKind::RankTail,
                traced_side: TracedSide::Right,
                epsilon_weight: 0.1,
            }
            .validate(),
            Err(OptimError::StrayEpsilonWeight)
        ));
    }

    #[test]
    fn modified_objective_breaks_the_degenerate_tie() {
        // first qubit already disentangled, qubits 2 and 3 entangled: the
        // plain objective is 0 for every U, the modified one prefers the
        // entanglement-removing U over the identity
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = haar_unitary(4, &mut rng).unwrap();
        let mut amps = vec![C64::new(0.0, 0.0); 8];
        // |0>_1 x (w |00>)_23
        for q2 in 0..2usize {
            for q3 in 0..2usize {
                amps[(q2 << 1) | (q3 << 2)] = w[(q2 + 2 * q3, 0)];
            }
        }
        let state = StateVector::from_amplitudes(3, amps).unwrap();
        let rho = state.reduced_density(&[1, 2, 3]).unwrap();

        let id = CMatrix::identity(4, 4);
        assert!(objective_rank_tail(&id, &rho, TracedSide::Right).unwrap() <= 1e-12);
        let f_id = objective_modified(&id, &rho, TracedSide::Right, 0.1).unwrap();
        let f_fix = objective_modified(&w.adjoint(), &rho, TracedSide::Right, 0.1).unwrap();
        assert!(
            f_fix + 1e-10 < f_id,
            "expected strict preference, got {f_fix} vs {f_id}"
        );
        assert!(f_fix.abs() <= 1e-10);
    }

    #[test]
    fn gradient_small_at_minimum_and_symmetric_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_mera(8, &mut rng).unwrap();
        let state = generate_state(&c).unwrap();
        let rho = state.reduced_density(&[1, 2, 3]).unwrap();
        let u_true = c.layers[0].disentanglers[0].matrix.adjoint();
        let obj = BlockObjective {
            spec: ObjectiveSpec::rank_tail(TracedSide::Right),
        };
        let fd_step = 1e-6;
        let centered = conjugate_and_keep(
            &rho.matrix,
            3,
            (2, 3),
            &u_true,
            &[1, 2, 3],
        );
        let g = gradient_fd(&obj, &centered, fd_step);
        let norm = dot(&g, &g).sqrt();
        assert!(norm <= 10.0 * fd_step, "norm = {norm:.3e}");

        // maximally mixed block: f is invariant in every direction. The
        // non-unitary test matrix still inflates the trace by eps^2, which
        // biases each forward difference by eps/2, so the symmetry check
        // runs at a smaller step.
        let mixed = CMatrix::identity(8, 8) * C64::new(1.0 / 8.0, 0.0);
        let g = gradient_fd(&obj, &mixed, 1e-8);
        for component in g {
            assert!(component.abs() <= 1e-8);
        }
    }

    #[test]
    fn gradient_matches_central_difference_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho = random_block3(&mut rng);
        let obj = BlockObjective {
            spec: ObjectiveSpec::rank_tail(TracedSide::Right),
        };
        let fd_step = 1e-6;
        let g = gradient_fd(&obj, &rho.matrix, fd_step);
        let basis = pauli2();
        for idx in 1..16 {
            let h = fd_step / 10.0;
            let plus = CMatrix::identity(4, 4) + &basis[idx] * C64::new(0.0, h);
            let minus = CMatrix::identity(4, 4) - &basis[idx] * C64::new(0.0, h);
            let central = (obj.value(&plus, &rho.matrix) - obj.value(&minus, &rho.matrix)) / (2.0 * h);
            assert!(
                (g[idx] - central).abs() <= 5.0 * fd_step,
                "idx {idx}: {} vs {central}",
                g[idx]
            );
        }
    }

    #[test]
    fn line_search_contract() {
        let opts = LineSearchOptions::default();
        // no descent anywhere: quadratic rising from t = 0
        let (t, f, _) = line_search(|t| 1.0 + t * t, 1.0, &opts);
        assert_eq!(t, 0.0);
        assert_eq!(f, 1.0);

        // analytic single-angle case: phi(t) = 1 - cos(2t) has its minimizer
        // periodic; on [0, pi] the first minimum of 0.3 - 0.3*cos(2(t - 0.4))
        // shifted: use phi(t) = (t - 0.37)^2 with minimum at 0.37
        let (t, f, _) = line_search(|t| (t - 0.37f64).powi(2), 0.37f64.powi(2), &opts);
        assert!((t - 0.37).abs() <= 1e-3, "t = {t}");
        assert!(f <= 1e-6);
    }

    #[test]
    fn line_search_beats_uniform_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let opts = LineSearchOptions::default();
        for _ in 0..20 {
            let rho = random_block3(&mut rng);
            let obj = BlockObjective {
                spec: ObjectiveSpec::rank_tail(TracedSide::Right),
            };
            let g = gradient_fd(&obj, &rho.matrix, 1e-6);
            if dot(&g, &g) == 0.0 {
                continue;
            }
            let h = direction_hamiltonian(&g);
            let (hvals, hvecs) = eig_hermitian(&h).unwrap();
            let phi = |t: f64| obj.value(&expm_from_eig(&hvals, &hvecs, t), &rho.matrix);
            let f0 = phi(0.0);
            let (_, f_opt, _) = line_search(phi, f0, &opts);
            let grid_min = (0..=1000)
                .map(|k| phi(opts.t_max * k as f64 / 1000.0))
                .fold(f64::INFINITY, f64::min);
            assert!(f_opt <= grid_min + 1e-6, "{f_opt} vs grid {grid_min}");
        }
    }

    #[test]
    fn cg_finds_exact_disentangler_on_mera_blocks() {
        let mut ok = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let c = random_mera(8, &mut rng).unwrap();
            let state = generate_state(&c).unwrap();
            let rho = state.reduced_density(&[1, 2, 3]).unwrap();
            let outcome = cg_minimize(
                &rho,
                &ObjectiveSpec::rank_tail(TracedSide::Right),
                &OptimizerOptions::default(),
                None,
                &mut rng,
            )
            .unwrap();
            if outcome.f_min <= 1e-10 {
                ok += 1;
            }
        }
        assert!(ok >= 9, "converged in {ok}/10 runs");
    }

    #[test]
    fn cg_trivial_block_converges_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let zero_block = basis_state_block(0);
        let id = CMatrix::identity(4, 4);
        let outcome = cg_minimize(
            &zero_block,
            &ObjectiveSpec::rank_tail(TracedSide::Right),
            &OptimizerOptions::default(),
            Some(&id),
            &mut rng,
        )
        .unwrap();
        assert_eq!(outcome.f_min, 0.0);
        assert!(outcome.trace.iterations.is_empty());
        assert!(max_abs_diff(&outcome.unitary, &id) == 0.0);
    }

    #[test]
    fn cg_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let rho = random_block3(&mut rng);
            let spec = ObjectiveSpec::rank_tail(TracedSide::Right);
            let outcome =
                cg_minimize(&rho, &spec, &OptimizerOptions::default(), None, &mut rng).unwrap();
            let mut search_rng = ChaCha8Rng::seed_from_u64(999);
            let random_best = (0..10_000)
                .map(|_| {
                    let u = haar_unitary(4, &mut search_rng).unwrap();
                    objective_rank_tail(&u, &rho, TracedSide::Right).unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(
                outcome.f_min <= random_best + 1e-9,
                "cg {} vs random {}",
                outcome.f_min,
                random_best
            );
        }
    }

    #[test]
    fn trace_is_monotone_within_a_restart() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random_block3(&mut rng);
        let outcome = cg_minimize(
            &rho,
            &ObjectiveSpec::rank_tail(TracedSide::Right),
            &OptimizerOptions {
                restarts: 1,
                ..OptimizerOptions::default()
            },
            None,
            &mut rng,
        )
        .unwrap();
        let mut last = f64::INFINITY;
        for record in &outcome.trace.iterations {
            assert!(record.f <= last + 1e-15);
            last = record.f.min(last);
        }
    }

    #[test]
    fn objective_equivalence_at_optimum() {
        // rank_tail <= 1e-10 iff char_poly_b <= 1e-10 on MERA blocks
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let c = random_mera(8, &mut rng).unwrap();
            let state = generate_state(&c).unwrap();
            let rho = state.reduced_density(&[1, 2, 3]).unwrap();
            let u_true = c.layers[0].disentanglers[0].matrix.adjoint();
            let f = objective_rank_tail(&u_true, &rho, TracedSide::Right).unwrap();
            let b = objective_char_poly_b(&u_true, &rho, TracedSide::Right).unwrap();
            assert!((f <= 1e-10) == (b <= 1e-10), "f = {f}, b = {b}");
        }
    }

    #[test]
    fn extract_isometry_contract() {
        // |00><00|: identity satisfies the contract
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = C64::new(1.0, 0.0);
        let rho = BlockDensityMatrix::new(vec![1, 2], m).unwrap();
        let v = extract_isometry(&rho).unwrap();
        let rotated = &v * &rho.matrix * v.adjoint();
        assert!((rotated[(0, 0)].re - 1.0).abs() <= 1e-12);

        // support on {|10>, |11>} (indices 1 and 3): after V the first qubit
        // is exactly |0>
        let mut m = CMatrix::zeros(4, 4);
        m[(1, 1)] = C64::new(0.7, 0.0);
        m[(3, 3)] = C64::new(0.3, 0.0);
        let rho = BlockDensityMatrix::new(vec![1, 2], m).unwrap();
        let v = extract_isometry(&rho).unwrap();
        let rotated = &v * &rho.matrix * v.adjoint();
        let weight_one = rotated[(1, 1)].re + rotated[(3, 3)].re;
        assert!(weight_one.abs() <= 1e-12);
    }

    #[test]
    fn extract_isometry_matches_eigenvalue_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            // random two-qubit mixed state from a 4-qubit pure state
            let mut amps: Vec<C64> = (0..16)
                .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            for a in &mut amps {
                *a /= norm;
            }
            let state = StateVector::from_amplitudes(4, amps).unwrap();
            let rho = state.reduced_density(&[1, 2]).unwrap();
            let v = extract_isometry(&rho).unwrap();
            assert!(numerics::unitarity_error(&v) <= 1e-10);
            let rotated = &v * &rho.matrix * v.adjoint();
            let vals = eigvals_hermitian_desc(&rho.matrix);
            let weight_one = rotated[(1, 1)].re + rotated[(3, 3)].re;
            assert!((weight_one - (vals[2] + vals[3])).abs() <= 1e-10);
            // acceptance weight on the |0> x C^2 subspace
            let kept = partial_trace(&rotated, 2, &[1]).unwrap();
            assert!((kept[(0, 0)].re - (vals[0] + vals[1])).abs() <= 1e-10);
        }
    }
}
