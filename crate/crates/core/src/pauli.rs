//! Pauli letters, Pauli strings on qubit sites, and the dense Pauli operator
//! basis used for gradients, tomography and observable sampling.

use crate::numerics::{CMatrix, NumericsError, NumericsResult, C64};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn from_index(idx: usize) -> Pauli {
        Self::ALL[idx]
    }

    pub fn index(self) -> usize {
        match self {
            Pauli::I => 0,
            Pauli::X => 1,
            Pauli::Y => 2,
            Pauli::Z => 3,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_letter(c: char) -> Option<Pauli> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn matrix(self) -> CMatrix {
        let z = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => CMatrix::from_row_slice(2, 2, &[one, z, z, one]),
            Pauli::X => CMatrix::from_row_slice(2, 2, &[z, one, one, z]),
            Pauli::Y => CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
            Pauli::Z => CMatrix::from_row_slice(2, 2, &[one, z, z, -one]),
        }
    }

    /// Action on a computational basis state: `P |b> = phase |flip(b)>`.
    /// Returns (flips_bit, phase_for_input_bit_0, phase_for_input_bit_1).
    pub fn action(self) -> (bool, C64, C64) {
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => (false, one, one),
            Pauli::X => (true, one, one),
            // Y|0> = i|1>, Y|1> = -i|0>
            Pauli::Y => (true, i, -i),
            Pauli::Z => (false, one, -one),
        }
    }
}

/// A Pauli operator supported on an ordered set of sites.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliString {
    /// 1-based site indices, strictly increasing.
    pub sites: Vec<usize>,
    /// One letter per site.
    pub letters: Vec<Pauli>,
}

#[derive(Debug, thiserror::Error)]
pub enum PauliStringError {
    #[error("sites must be strictly increasing, got {0:?}")]
    SitesNotIncreasing(Vec<usize>),
    #[error("sites ({sites}) and letters ({letters}) have different lengths")]
    LengthMismatch { sites: usize, letters: usize },
    #[error("site indices must be >= 1")]
    ZeroSite,
}

impl PauliString {
    pub fn new(sites: Vec<usize>, letters: Vec<Pauli>) -> Result<Self, PauliStringError> {
        if sites.len() != letters.len() {
            return Err(PauliStringError::LengthMismatch {
                sites: sites.len(),
                letters: letters.len(),
            });
        }
        if sites.iter().any(|&s| s == 0) {
            return Err(PauliStringError::ZeroSite);
        }
        if !sites.windows(2).all(|w| w[0] < w[1]) {
            return Err(PauliStringError::SitesNotIncreasing(sites));
        }
        Ok(Self { sites, letters })
    }

    pub fn identity_on(sites: Vec<usize>) -> Self {
        let letters = vec![Pauli::I; sites.len()];
        Self { sites, letters }
    }

    pub fn single(site: usize, letter: Pauli) -> Self {
        Self {
            sites: vec![site],
            letters: vec![letter],
        }
    }

    /// Number of non-identity letters.
    pub fn weight(&self) -> usize {
        self.letters.iter().filter(|&&p| p != Pauli::I).count()
    }

    pub fn is_identity(&self) -> bool {
        self.weight() == 0
    }

    /// Letters as a compact text label, e.g. "XIZ".
    pub fn label(&self) -> String {
        self.letters.iter().map(|p| p.letter()).collect()
    }

    /// Dense matrix on the string's own sites (first site fastest).
    pub fn block_matrix(&self) -> CMatrix {
        let mut m = CMatrix::identity(1, 1);
        for p in &self.letters {
            m = p.matrix().kronecker(&m);
        }
        m
    }
}

/// The `4^k` Pauli basis matrices on `k` qubits, enumerated lexicographically
/// in the letter tuple with I < X < Y < Z and site 1 as the fastest index.
pub fn pauli_basis(k: usize) -> NumericsResult<Vec<CMatrix>> {
    if !(1..=4).contains(&k) {
        return Err(NumericsError::PauliOrderOutOfRange { k });
    }
    let mut out = Vec::with_capacity(1 << (2 * k));
    let mut letters = vec![0usize; k];
    loop {
        let mut m = CMatrix::identity(1, 1);
        for &l in letters.iter() {
            // site i sits at kron position i (fastest), so later (slower)
            // sites multiply from the left
            m = Pauli::from_index(l).matrix().kronecker(&m);
        }
        out.push(m);
        // lexicographic increment over (mu_1 .. mu_k): last letter fastest
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if letters[pos] < 3 {
                letters[pos] += 1;
                letters[pos + 1..].fill(0);
                break;
            }
        }
    }
}

/// All letter assignments of length `k` enumerated in the same lexicographic
/// order as [`pauli_basis`].
pub fn letter_tuples(k: usize) -> Vec<Vec<Pauli>> {
    let count = 1usize << (2 * k);
    (0..count)
        .map(|idx| {
            (0..k)
                .map(|pos| {
                    let shift = 2 * (k - 1 - pos);
                    Pauli::from_index((idx >> shift) & 3)
                })
                .collect()
        })
        .collect()
}
