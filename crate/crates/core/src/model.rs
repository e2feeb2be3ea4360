//! Binary 1D open-boundary MERA circuits: gate placement, validation, random
//! generation and the JSON file format.
//!
//! Geometry. A circuit on `n = 2^K` qubits has renormalization layers
//! `tau = 1 .. K-1`; layer `tau` acts on `m = n / 2^(tau-1)` layer-local
//! qubits and carries `m/2 - 1` disentanglers and `m/2` isometries. Within a
//! layer, disentangler `j` acts on local qubits `(2j, 2j+1)` and isometry `j`
//! on `(2j-1, 2j)`; the ancilla of isometry `j` is its left qubit `2j-1`.
//! Local qubit `p` of layer `tau` lives at physical site `p * 2^(tau-1)`.
//! The top tensor feeds the two coarsest qubits at physical sites
//! `(n/2, n)` from `|00>`.
//!
//! Gates are stored in the generative direction: `generate_state` applies the
//! top tensor to `|00>`, then for each layer from the top down first the
//! isometries (fresh `|0>` ancillas at odd local positions) and then the
//! disentanglers.

use crate::numerics::{self, CMatrix, Tolerances, C64};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Disentangler,
    Isometry,
    Top,
}

/// One two-qubit gate of the circuit, tagged with its position.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    /// Layer index >= 1; the top tensor has layer = depth + 1.
    pub layer: usize,
    /// Position within the layer, >= 1.
    pub block: usize,
    pub matrix: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub disentanglers: Vec<Gate>,
    pub isometries: Vec<Gate>,
}

/// Layered arrangement of disentanglers, isometries and a top tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MeraCircuit {
    n: usize,
    chi: usize,
    pub layers: Vec<Layer>,
    pub top: Gate,
}

pub type ModelResult<T> = Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("qubit count {0} is not a power of two in 4..=64")]
    UnsupportedSize(usize),

    #[error("refinement parameter chi = {0} is unsupported (qubits only, chi = 2)")]
    UnsupportedChi(usize),

    #[error("document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid circuit document at {location}: {message}")]
    Document { location: String, message: String },

    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
}

/// Number of renormalization layers (excluding the top) for `n = 2^K`.
pub fn depth(n: usize) -> usize {
    (n.trailing_zeros() as usize) - 1
}

/// Layer-local chain width: layer `tau` acts on `n / 2^(tau-1)` qubits.
pub fn layer_width(n: usize, tau: usize) -> usize {
    n >> (tau - 1)
}

/// Physical site of local qubit `p` in layer `tau`.
pub fn physical_site(tau: usize, p: usize) -> usize {
    p << (tau - 1)
}

fn supported_size(n: usize) -> bool {
    n.is_power_of_two() && (4..=64).contains(&n)
}

impl MeraCircuit {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn chi(&self) -> usize {
        self.chi
    }

    pub fn depth(&self) -> usize {
        depth(self.n)
    }

    /// Total gate count: sum over layers of (m_tau - 1), plus the top.
    pub fn gate_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.disentanglers.len() + l.isometries.len())
            .sum::<usize>()
            + 1
    }

    /// Assemble a circuit from raw per-layer gate matrices (generative
    /// direction). Layer `tau` expects `m/2 - 1` disentanglers and `m/2`
    /// isometries in block order.
    pub fn from_gates(
        n: usize,
        layer_gates: Vec<(Vec<CMatrix>, Vec<CMatrix>)>,
        top: CMatrix,
    ) -> ModelResult<Self> {
        if !supported_size(n) {
            return Err(ModelError::UnsupportedSize(n));
        }
        let k = depth(n);
        if layer_gates.len() != k {
            return Err(ModelError::Document {
                location: "layers".into(),
                message: format!("expected {k} layers, got {}", layer_gates.len()),
            });
        }
        let mut layers = Vec::with_capacity(k);
        for (tau0, (dis, iso)) in layer_gates.into_iter().enumerate() {
            let tau = tau0 + 1;
            let m = layer_width(n, tau);
            if dis.len() != m / 2 - 1 || iso.len() != m / 2 {
                return Err(ModelError::Document {
                    location: format!("layers[{tau0}]"),
                    message: format!(
                        "layer {tau} expects {} disentanglers and {} isometries, got {} and {}",
                        m / 2 - 1,
                        m / 2,
                        dis.len(),
                        iso.len()
                    ),
                });
            }
            let disentanglers = dis
                .into_iter()
                .enumerate()
                .map(|(j, matrix)| Gate {
                    kind: GateKind::Disentangler,
                    layer: tau,
                    block: j + 1,
                    matrix,
                })
                .collect();
            let isometries = iso
                .into_iter()
                .enumerate()
                .map(|(j, matrix)| Gate {
                    kind: GateKind::Isometry,
                    layer: tau,
                    block: j + 1,
                    matrix,
                })
                .collect();
            layers.push(Layer {
                disentanglers,
                isometries,
            });
        }
        Ok(Self {
            n,
            chi: 2,
            layers,
            top: Gate {
                kind: GateKind::Top,
                layer: k + 1,
                block: 1,
                matrix: top,
            },
        })
    }
}

/// Circuit with every gate drawn from the Haar measure.
pub fn random_mera<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ModelResult<MeraCircuit> {
    if !supported_size(n) {
        return Err(ModelError::UnsupportedSize(n));
    }
    let k = depth(n);
    let mut layer_gates = Vec::with_capacity(k);
    for tau in 1..=k {
        let m = layer_width(n, tau);
        let dis = (0..m / 2 - 1)
            .map(|_| numerics::haar_unitary(4, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let iso = (0..m / 2)
            .map(|_| numerics::haar_unitary(4, rng))
            .collect::<Result<Vec<_>, _>>()?;
        layer_gates.push((dis, iso));
    }
    let top = numerics::haar_unitary(4, rng)?;
    MeraCircuit::from_gates(n, layer_gates, top)
}

/// Circuit with every gate equal to the identity; generates `|0...0>`.
pub fn identity_mera(n: usize) -> ModelResult<MeraCircuit> {
    if !supported_size(n) {
        return Err(ModelError::UnsupportedSize(n));
    }
    let k = depth(n);
    let id = CMatrix::identity(4, 4);
    let layer_gates = (1..=k)
        .map(|tau| {
            let m = layer_width(n, tau);
            (vec![id.clone(); m / 2 - 1], vec![id.clone(); m / 2])
        })
        .collect();
    MeraCircuit::from_gates(n, layer_gates, id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: GateKind,
    pub layer: usize,
    pub block: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check layer counts, gate counts and unitarity of every gate.
pub fn validate(circuit: &MeraCircuit) -> ValidationReport {
    let tols = Tolerances::default();
    let mut violations = Vec::new();
    let check_gate = |gate: &Gate| -> Option<Violation> {
        if gate.matrix.nrows() != 4 || gate.matrix.ncols() != 4 {
            return Some(Violation {
                kind: gate.kind,
                layer: gate.layer,
                block: gate.block,
                message: format!(
                    "matrix is {}x{}, expected 4x4",
                    gate.matrix.nrows(),
                    gate.matrix.ncols()
                ),
            });
        }
        let dev = numerics::unitarity_error(&gate.matrix);
        if dev > tols.unitarity {
            return Some(Violation {
                kind: gate.kind,
                layer: gate.layer,
                block: gate.block,
                message: format!("gate is not unitary: max |U†U - I| = {dev:.3e}"),
            });
        }
        None
    };

    let k = depth(circuit.n);
    for (tau0, layer) in circuit.layers.iter().enumerate() {
        let tau = tau0 + 1;
        let m = layer_width(circuit.n, tau);
        if layer.disentanglers.len() != m / 2 - 1 {
            violations.push(Violation {
                kind: GateKind::Disentangler,
                layer: tau,
                block: layer.disentanglers.len() + 1,
                message: format!(
                    "layer {tau} has {} disentanglers, expected {}",
                    layer.disentanglers.len(),
                    m / 2 - 1
                ),
            });
        }
        if layer.isometries.len() != m / 2 {
            violations.push(Violation {
                kind: GateKind::Isometry,
                layer: tau,
                block: layer.isometries.len() + 1,
                message: format!(
                    "layer {tau} has {} isometries, expected {}",
                    layer.isometries.len(),
                    m / 2
                ),
            });
        }
        for g in layer.disentanglers.iter().chain(layer.isometries.iter()) {
            violations.extend(check_gate(g));
        }
    }
    if circuit.layers.len() != k {
        violations.push(Violation {
            kind: GateKind::Top,
            layer: circuit.layers.len(),
            block: 1,
            message: format!("circuit has {} layers, expected {k}", circuit.layers.len()),
        });
    }
    violations.extend(check_gate(&circuit.top));
    ValidationReport { violations }
}

// --- file format -----------------------------------------------------------

pub const CIRCUIT_FORMAT_VERSION: u32 = 1;

/// Wire representation: 4x4 row-major entries as [re, im] pairs.
type GateEntries = Vec<Vec<[f64; 2]>>;

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    disentanglers: Vec<GateEntries>,
    isometries: Vec<GateEntries>,
}

#[derive(Serialize, Deserialize)]
struct CircuitDoc {
    format_version: u32,
    n: usize,
    chi: usize,
    layers: Vec<LayerDoc>,
    top: GateEntries,
}

fn matrix_to_entries(m: &CMatrix) -> GateEntries {
    (0..4)
        .map(|r| (0..4).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

fn entries_to_matrix(entries: &GateEntries, location: &str) -> ModelResult<CMatrix> {
    if entries.len() != 4 || entries.iter().any(|row| row.len() != 4) {
        return Err(ModelError::Document {
            location: location.to_string(),
            message: "gate must be a 4x4 array of [re, im] pairs".into(),
        });
    }
    let m = CMatrix::from_fn(4, 4, |r, c| {
        let [re, im] = entries[r][c];
        C64::new(re, im)
    });
    if m.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(ModelError::Document {
            location: location.to_string(),
            message: "gate contains a non-finite entry".into(),
        });
    }
    // The parse tolerance is looser than the runtime tolerance so hand-edited
    // documents survive, but grossly non-unitary gates are rejected here.
    let dev = numerics::unitarity_error(&m);
    if dev > 1e-6 {
        return Err(ModelError::Document {
            location: location.to_string(),
            message: format!("gate is not unitary: max |U†U - I| = {dev:.3e}"),
        });
    }
    Ok(m)
}

/// Serialize a circuit to its JSON document.
pub fn serialize(circuit: &MeraCircuit) -> String {
    let doc = CircuitDoc {
        format_version: CIRCUIT_FORMAT_VERSION,
        n: circuit.n,
        chi: circuit.chi,
        layers: circuit
            .layers
            .iter()
            .map(|l| LayerDoc {
                disentanglers: l.disentanglers.iter().map(|g| matrix_to_entries(&g.matrix)).collect(),
                isometries: l.isometries.iter().map(|g| matrix_to_entries(&g.matrix)).collect(),
            })
            .collect(),
        top: matrix_to_entries(&circuit.top.matrix),
    };
    serde_json::to_string_pretty(&doc).expect("circuit document serializes")
}

/// Parse a circuit from its JSON document, rejecting malformed layouts and
/// non-unitary gates with the offending location.
pub fn deserialize(text: &str) -> ModelResult<MeraCircuit> {
    let doc: CircuitDoc = serde_json::from_str(text)?;
    if doc.format_version != CIRCUIT_FORMAT_VERSION {
        return Err(ModelError::Document {
            location: "format_version".into(),
            message: format!(
                "unsupported format_version {} (expected {CIRCUIT_FORMAT_VERSION})",
                doc.format_version
            ),
        });
    }
    if !supported_size(doc.n) {
        return Err(ModelError::UnsupportedSize(doc.n));
    }
    if doc.chi != 2 {
        return Err(ModelError::UnsupportedChi(doc.chi));
    }
    let mut layer_gates = Vec::with_capacity(doc.layers.len());
    for (tau0, layer) in doc.layers.iter().enumerate() {
        let dis = layer
            .disentanglers
            .iter()
            .enumerate()
            .map(|(j, e)| entries_to_matrix(e, &format!("layers[{tau0}].disentanglers[{j}]")))
            .collect::<ModelResult<Vec<_>>>()?;
        let iso = layer
            .isometries
            .iter()
            .enumerate()
            .map(|(j, e)| entries_to_matrix(e, &format!("layers[{tau0}].isometries[{j}]")))
            .collect::<ModelResult<Vec<_>>>()?;
        layer_gates.push((dis, iso));
    }
    let top = entries_to_matrix(&doc.top, "top")?;
    MeraCircuit::from_gates(doc.n, layer_gates, top)
}
