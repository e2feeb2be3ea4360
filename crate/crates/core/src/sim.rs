//! Statevector engine playing the role of the laboratory: generates MERA
//! states, applies gates, computes reduced density matrices, simulates Pauli
//! measurements and performs post-selected ancilla measurements.
//!
//! Amplitude layout is little-endian with 1-based sites: site `s` is bit
//! `s - 1` of the amplitude index, so site 1 varies fastest.

use crate::model::{self, MeraCircuit};
use crate::numerics::{self, CMatrix, Tolerances, C64};
use crate::pauli::PauliString;
use rand::Rng;
use thiserror::Error;

/// Largest register the engine will allocate (amplitude array of 2^26).
pub const MAX_QUBITS: usize = 26;

pub type SimResult<T> = Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("qubit count {0} exceeds the simulator maximum of {MAX_QUBITS}")]
    TooManyQubits(usize),

    #[error("site {site} out of range for {qubits} qubits")]
    SiteOutOfRange { site: usize, qubits: usize },

    #[error("sites must be distinct, got {0:?}")]
    DuplicateSites(Vec<usize>),

    #[error("block {0:?} exceeds the tomography limit of 4 sites")]
    BlockTooLarge(Vec<usize>),

    #[error("state norm deviates from 1 by {0:.3e}")]
    NotNormalized(f64),

    #[error(
        "post-selection on |0> at site {site} failed: acceptance probability {p:.3e} below floor"
    )]
    PostselectFailed { site: usize, p: f64 },

    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),

    #[error(transparent)]
    Model(#[from] model::ModelError),
}

/// Full pure state of `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<C64>,
}

/// Hermitian PSD trace-1 matrix on a small block of sites.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDensityMatrix {
    pub sites: Vec<usize>,
    pub matrix: CMatrix,
}

impl BlockDensityMatrix {
    /// Wrap a matrix after checking the density-matrix invariants.
    pub fn new(sites: Vec<usize>, matrix: CMatrix) -> SimResult<Self> {
        let tols = Tolerances::default();
        if sites.len() > 4 {
            return Err(SimError::BlockTooLarge(sites));
        }
        numerics::check_hermitian(&matrix, tols.hermiticity)?;
        let trace_dev = (matrix.trace() - C64::new(1.0, 0.0)).norm();
        if trace_dev > tols.trace {
            return Err(SimError::NotNormalized(trace_dev));
        }
        let min_eig = numerics::eigvals_hermitian_desc(&matrix)
            .last()
            .copied()
            .unwrap_or(0.0);
        if min_eig < -tols.psd {
            return Err(SimError::NotNormalized(-min_eig));
        }
        Ok(Self { sites, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

impl StateVector {
    /// `|0...0>` on `n` qubits.
    pub fn zero(n: usize) -> SimResult<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(SimError::TooManyQubits(n));
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[0] = C64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    pub fn from_amplitudes(n: usize, amps: Vec<C64>) -> SimResult<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(SimError::TooManyQubits(n));
        }
        assert_eq!(amps.len(), 1 << n);
        let state = Self { n, amps };
        let dev = (state.norm() - 1.0).abs();
        if dev > Tolerances::default().trace {
            return Err(SimError::NotNormalized(dev));
        }
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        debug_assert_eq!(self.n, other.n);
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// |<self|other>|^2.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    fn check_site(&self, site: usize) -> SimResult<()> {
        if site < 1 || site > self.n {
            return Err(SimError::SiteOutOfRange {
                site,
                qubits: self.n,
            });
        }
        Ok(())
    }

    /// Apply a single-qubit gate at `site`.
    pub fn apply_single_qubit(&mut self, u: &CMatrix, site: usize) -> SimResult<()> {
        self.check_site(site)?;
        debug_assert_eq!(u.nrows(), 2);
        let bit = 1usize << (site - 1);
        for base in 0..self.amps.len() {
            if base & bit != 0 {
                continue;
            }
            let a0 = self.amps[base];
            let a1 = self.amps[base | bit];
            self.amps[base] = u[(0, 0)] * a0 + u[(0, 1)] * a1;
            self.amps[base | bit] = u[(1, 0)] * a0 + u[(1, 1)] * a1;
        }
        Ok(())
    }

    /// Apply a two-qubit gate with qubit 1 of `u` at site `i` and qubit 2 at
    /// site `j`.
    pub fn apply_two_qubit(&mut self, u: &CMatrix, i: usize, j: usize) -> SimResult<()> {
        self.check_site(i)?;
        self.check_site(j)?;
        if i == j {
            return Err(SimError::DuplicateSites(vec![i, j]));
        }
        debug_assert_eq!(u.nrows(), 4);
        let bi = 1usize << (i - 1);
        let bj = 1usize << (j - 1);
        let mask = bi | bj;
        for base in 0..self.amps.len() {
            if base & mask != 0 {
                continue;
            }
            let idx = [base, base | bi, base | bj, base | mask];
            let a = [
                self.amps[idx[0]],
                self.amps[idx[1]],
                self.amps[idx[2]],
                self.amps[idx[3]],
            ];
            for (r, &target) in idx.iter().enumerate() {
                self.amps[target] =
                    u[(r, 0)] * a[0] + u[(r, 1)] * a[1] + u[(r, 2)] * a[2] + u[(r, 3)] * a[3];
            }
        }
        Ok(())
    }

    /// Reduced density matrix on up to four sites (given in increasing
    /// order), exact partial trace of `|psi><psi|` over the complement.
    pub fn reduced_density(&self, sites: &[usize]) -> SimResult<BlockDensityMatrix> {
        if sites.is_empty() || sites.len() > 4 {
            return Err(SimError::BlockTooLarge(sites.to_vec()));
        }
        for &s in sites {
            self.check_site(s)?;
        }
        if !sites.windows(2).all(|w| w[0] < w[1]) {
            return Err(SimError::DuplicateSites(sites.to_vec()));
        }
        let k = sites.len();
        let block_bits: Vec<usize> = sites.iter().map(|&s| s - 1).collect();
        let mut block_mask = 0usize;
        for &b in &block_bits {
            block_mask |= 1 << b;
        }
        let extract = |idx: usize| -> usize {
            let mut a = 0usize;
            for (pos, &b) in block_bits.iter().enumerate() {
                a |= ((idx >> b) & 1) << pos;
            }
            a
        };
        let dim = 1usize << k;
        let mut rho = CMatrix::zeros(dim, dim);
        // group amplitudes by environment pattern
        let mut bucket = vec![C64::new(0.0, 0.0); dim];
        let env_bits: Vec<usize> = (0..self.n).filter(|b| block_mask & (1 << b) == 0).collect();
        for env in 0..(1usize << env_bits.len()) {
            let mut base = 0usize;
            for (pos, &b) in env_bits.iter().enumerate() {
                base |= ((env >> pos) & 1) << b;
            }
            for a in 0..dim {
                let mut idx = base;
                for (pos, &b) in block_bits.iter().enumerate() {
                    idx |= ((a >> pos) & 1) << b;
                }
                bucket[a] = self.amps[idx];
            }
            for a in 0..dim {
                if bucket[a] == C64::new(0.0, 0.0) {
                    continue;
                }
                for b in 0..dim {
                    rho[(a, b)] += bucket[a] * bucket[b].conj();
                }
            }
            // silence unused warning for extract in release builds
            let _ = extract;
        }
        BlockDensityMatrix::new(sites.to_vec(), rho)
    }

    /// Probability of reading `|0>` at `site`, without collapsing.
    pub fn prob_zero(&self, site: usize) -> SimResult<f64> {
        self.check_site(site)?;
        let bit = 1usize << (site - 1);
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(idx, _)| idx & bit == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Measure `site` in the computational basis and post-select the `|0>`
    /// outcome; returns the exact acceptance probability.
    pub fn measure_postselect_zero(&mut self, site: usize) -> SimResult<f64> {
        let p = self.prob_zero(site)?;
        if p < Tolerances::default().postselect_floor {
            return Err(SimError::PostselectFailed { site, p });
        }
        let bit = 1usize << (site - 1);
        let scale = C64::new(1.0 / p.sqrt(), 0.0);
        for (idx, a) in self.amps.iter_mut().enumerate() {
            if idx & bit != 0 {
                *a = C64::new(0.0, 0.0);
            } else {
                *a *= scale;
            }
        }
        Ok(p)
    }

    /// Exact expectation value `<psi|P|psi>` of a Pauli string.
    pub fn pauli_expectation(&self, p: &PauliString) -> SimResult<f64> {
        for &s in &p.sites {
            self.check_site(s)?;
        }
        let mut acc = C64::new(0.0, 0.0);
        for (idx, &amp) in self.amps.iter().enumerate() {
            if amp == C64::new(0.0, 0.0) {
                continue;
            }
            // apply P to |idx> and pair with <target|
            let mut target = idx;
            let mut phase = C64::new(1.0, 0.0);
            for (&site, &letter) in p.sites.iter().zip(p.letters.iter()) {
                let bit = 1usize << (site - 1);
                let (flips, ph0, ph1) = letter.action();
                phase *= if idx & bit == 0 { ph0 } else { ph1 };
                if flips {
                    target ^= bit;
                }
            }
            acc += self.amps[target].conj() * phase * amp;
        }
        Ok(acc.re)
    }

    /// Sample mean of `shots` measurement outcomes of the Pauli string,
    /// drawn from the exact +-1 eigenvalue distribution.
    pub fn sample_expectation<R: Rng + ?Sized>(
        &self,
        p: &PauliString,
        shots: usize,
        rng: &mut R,
    ) -> SimResult<f64> {
        assert!(shots >= 1);
        let exact = self.pauli_expectation(p)?;
        let p_plus = ((1.0 + exact) / 2.0).clamp(0.0, 1.0);
        let mut plus = 0usize;
        for _ in 0..shots {
            if rng.gen::<f64>() < p_plus {
                plus += 1;
            }
        }
        Ok((2 * plus) as f64 / shots as f64 - 1.0)
    }
}

/// Run the generative circuit on `|0...0>`: the top tensor feeds the two
/// coarsest qubits, then each layer applies its isometries (fresh `|0>`
/// ancillas at odd local positions) followed by its disentanglers.
pub fn generate_state(circuit: &MeraCircuit) -> SimResult<StateVector> {
    let n = circuit.n();
    let mut state = StateVector::zero(n)?;
    let k = circuit.depth();
    state.apply_two_qubit(&circuit.top.matrix, n / 2, n)?;
    for tau in (1..=k).rev() {
        let layer = &circuit.layers[tau - 1];
        for iso in &layer.isometries {
            let j = iso.block;
            state.apply_two_qubit(
                &iso.matrix,
                model::physical_site(tau, 2 * j - 1),
                model::physical_site(tau, 2 * j),
            )?;
        }
        for dis in &layer.disentanglers {
            let j = dis.block;
            state.apply_two_qubit(
                &dis.matrix,
                model::physical_site(tau, 2 * j),
                model::physical_site(tau, 2 * j + 1),
            )?;
        }
    }
    Ok(state)
}
