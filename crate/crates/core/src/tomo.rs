//! Brute-force block tomography on 2-4 qubit blocks: local Pauli-basis
//! measurement settings, exact or shot-sampled expectation records, and
//! reconstruction by linear inversion plus PSD projection.

use crate::model;
use crate::numerics::{self, CMatrix, C64};
use crate::pauli::{letter_tuples, Pauli, PauliString};
use crate::sim::{self, BlockDensityMatrix, StateVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub type TomoResult<T> = Result<T, TomoError>;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("tomography blocks must have 2..=4 sites, got {0}")]
    BadBlockSize(usize),

    #[error("sampled tomography requires shots >= 1")]
    NoShots,

    #[error("document error: {0}")]
    Document(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Sim(#[from] sim::SimError),

    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TomoMode {
    Exact,
    Sampled,
}

/// One local measurement setting: a basis letter (X, Y or Z) per block site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Setting(pub Vec<Pauli>);

/// All `3^k` local-basis settings for a block, lexicographic with X < Y < Z.
pub fn settings_for_block(sites: &[usize]) -> TomoResult<Vec<Setting>> {
    let k = sites.len();
    if !(2..=4).contains(&k) {
        return Err(TomoError::BadBlockSize(k));
    }
    let bases = [Pauli::X, Pauli::Y, Pauli::Z];
    let mut out = Vec::with_capacity(3usize.pow(k as u32));
    let mut idx = vec![0usize; k];
    loop {
        out.push(Setting(idx.iter().map(|&i| bases[i]).collect()));
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if idx[pos] < 2 {
                idx[pos] += 1;
                idx[pos + 1..].fill(0);
                break;
            }
        }
    }
}

/// The lexicographically first setting compatible with a letter tuple
/// (identity positions default to X).
pub fn first_compatible_setting(letters: &[Pauli]) -> Setting {
    Setting(
        letters
            .iter()
            .map(|&l| if l == Pauli::I { Pauli::X } else { l })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauliRecord {
    pub estimate: f64,
    pub shots: usize,
}

/// Per-block Pauli expectation records plus the reconstructed density matrix.
#[derive(Debug, Clone)]
pub struct TomographyEstimate {
    pub sites: Vec<usize>,
    pub mode: TomoMode,
    /// Letter label (relative to `sites`) -> record, for all non-identity
    /// strings on the block.
    pub records: BTreeMap<String, PauliRecord>,
    pub rho_hat: BlockDensityMatrix,
}

fn basis_rotation(p: Pauli) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match p {
        // H: rotates the X eigenbasis onto the computational basis
        Pauli::X => CMatrix::from_row_slice(
            2,
            2,
            &[
                one * s,
                one * s,
                one * s,
                -one * s,
            ],
        ),
        Pauli::Y => CMatrix::from_row_slice(2, 2, &[one * s, -i * s, one * s, i * s]),
        Pauli::Z => CMatrix::identity(2, 2),
        Pauli::I => CMatrix::identity(2, 2),
    }
}

/// Joint outcome distribution over the block's computational basis after
/// rotating each site into the setting's measurement basis.
fn outcome_distribution(rho: &CMatrix, setting: &Setting) -> Vec<f64> {
    let k = setting.0.len();
    let mut rot = CMatrix::identity(1, 1);
    for &basis in setting.0.iter() {
        rot = basis_rotation(basis).kronecker(&rot);
    }
    let rotated = &rot * rho * rot.adjoint();
    let dim = 1usize << k;
    let mut probs: Vec<f64> = (0..dim).map(|d| rotated[(d, d)].re.max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for p in &mut probs {
            *p /= total;
        }
    }
    probs
}

/// Estimate the block density matrix from exact or shot-sampled local Pauli
/// measurements.
///
/// Sampled mode measures every setting with `shots_per_setting` shots; each
/// Pauli string is then estimated from the lexicographically first setting
/// compatible with it, and the block state is the PSD projection of the
/// linear inversion of those estimates.
pub fn estimate_block<R: Rng + ?Sized>(
    state: &StateVector,
    sites: &[usize],
    mode: TomoMode,
    shots_per_setting: usize,
    rng: &mut R,
) -> TomoResult<TomographyEstimate> {
    let k = sites.len();
    if !(2..=4).contains(&k) {
        return Err(TomoError::BadBlockSize(k));
    }
    let rho = state.reduced_density(sites)?;
    let tuples = letter_tuples(k);

    match mode {
        TomoMode::Exact => {
            let mut records = BTreeMap::new();
            for tuple in tuples.iter().skip(1) {
                let s = PauliString {
                    sites: sites.to_vec(),
                    letters: tuple.clone(),
                };
                let est = (&rho.matrix * s.block_matrix()).trace().re;
                records.insert(s.label(), PauliRecord { estimate: est, shots: 0 });
            }
            Ok(TomographyEstimate {
                sites: sites.to_vec(),
                mode,
                records,
                rho_hat: rho,
            })
        }
        TomoMode::Sampled => {
            if shots_per_setting == 0 {
                return Err(TomoError::NoShots);
            }
            let settings = settings_for_block(sites)?;
            // outcome samples per setting: outcome index -> count
            let mut samples: BTreeMap<Vec<Pauli>, Vec<usize>> = BTreeMap::new();
            for setting in &settings {
                let probs = outcome_distribution(&rho.matrix, setting);
                let mut counts = vec![0usize; probs.len()];
                for _ in 0..shots_per_setting {
                    let mut x: f64 = rng.gen();
                    let mut outcome = probs.len() - 1;
                    for (idx, &p) in probs.iter().enumerate() {
                        if x < p {
                            outcome = idx;
                            break;
                        }
                        x -= p;
                    }
                    counts[outcome] += 1;
                }
                samples.insert(setting.0.clone(), counts);
            }

            let mut records = BTreeMap::new();
            for tuple in tuples.iter().skip(1) {
                let setting = first_compatible_setting(tuple);
                let counts = &samples[&setting.0];
                let mut acc = 0i64;
                for (outcome, &count) in counts.iter().enumerate() {
                    let mut value = 1i64;
                    for (pos, &letter) in tuple.iter().enumerate() {
                        if letter == Pauli::I {
                            continue;
                        }
                        if (outcome >> pos) & 1 == 1 {
                            value = -value;
                        }
                    }
                    acc += value * count as i64;
                }
                let s = PauliString {
                    sites: sites.to_vec(),
                    letters: tuple.clone(),
                };
                records.insert(
                    s.label(),
                    PauliRecord {
                        estimate: acc as f64 / shots_per_setting as f64,
                        shots: shots_per_setting,
                    },
                );
            }
            let rho_hat = invert_records(sites, &records)?;
            Ok(TomographyEstimate {
                sites: sites.to_vec(),
                mode,
                records,
                rho_hat,
            })
        }
    }
}

/// Linear inversion of expectation records (before PSD projection).
pub fn linear_inversion(k: usize, records: &BTreeMap<String, PauliRecord>) -> CMatrix {
    let dim = 1usize << k;
    let mut rho = CMatrix::identity(dim, dim);
    for (label, record) in records {
        let letters: Vec<Pauli> = label.chars().map(|c| Pauli::from_letter(c).unwrap()).collect();
        let s = PauliString {
            sites: (1..=k).collect(),
            letters,
        };
        rho += s.block_matrix() * C64::new(record.estimate, 0.0);
    }
    rho / C64::new(dim as f64, 0.0)
}

fn invert_records(
    sites: &[usize],
    records: &BTreeMap<String, PauliRecord>,
) -> TomoResult<BlockDensityMatrix> {
    let raw = linear_inversion(sites.len(), records);
    let projected = numerics::psd_project(&raw)?;
    Ok(BlockDensityMatrix::new(sites.to_vec(), projected)?)
}

/// Distinct three-qubit measurement settings consumed by `sweeps` full
/// learning passes: 27 per tomography block, with `m/2 - 1` blocks in each
/// layer of width `m`.
///
/// The per-layer two-qubit acquisitions for the final isometry and the top
/// tensor are not part of this figure; callers report them separately.
pub fn setting_count(n: usize, sweeps: usize) -> usize {
    let blocks: usize = (1..=model::depth(n))
        .map(|tau| model::layer_width(n, tau) / 2 - 1)
        .sum();
    27 * blocks * sweeps
}

// --- serialization ----------------------------------------------------------

pub const ESTIMATE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EstimateDoc {
    format_version: u32,
    sites: Vec<usize>,
    mode: TomoMode,
    records: BTreeMap<String, PauliRecord>,
}

pub fn estimate_to_json(est: &TomographyEstimate) -> String {
    let doc = EstimateDoc {
        format_version: ESTIMATE_FORMAT_VERSION,
        sites: est.sites.clone(),
        mode: est.mode,
        records: est.records.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("estimate serializes")
}

/// Parse an estimate document; the block state is reconstructed from the
/// records by linear inversion.
pub fn estimate_from_json(text: &str) -> TomoResult<TomographyEstimate> {
    let doc: EstimateDoc = serde_json::from_str(text)?;
    if doc.format_version != ESTIMATE_FORMAT_VERSION {
        return Err(TomoError::Document(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    let k = doc.sites.len();
    if !(2..=4).contains(&k) {
        return Err(TomoError::BadBlockSize(k));
    }
    let expected = (1usize << (2 * k)) - 1;
    if doc.records.len() != expected {
        return Err(TomoError::Document(format!(
            "expected {expected} records, got {}",
            doc.records.len()
        )));
    }
    for (label, record) in &doc.records {
        if label.len() != k || label.chars().any(|c| Pauli::from_letter(c).is_none()) {
            return Err(TomoError::Document(format!("bad record label {label:?}")));
        }
        if !record.estimate.is_finite() || record.estimate.abs() > 1.0 + 1e-9 {
            return Err(TomoError::Document(format!(
                "record {label:?} estimate {} outside [-1, 1]",
                record.estimate
            )));
        }
    }
    let rho_hat = invert_records(&doc.sites, &doc.records)?;
    Ok(TomographyEstimate {
        sites: doc.sites,
        mode: doc.mode,
        records: doc.records,
        rho_hat,
    })
}
