//! Reconstruction of multi-scale entangled qubit states from local
//! measurements.
//!
//! The crate implements the full desk-scale pipeline: a binary 1D MERA
//! circuit model, a statevector simulator standing in for the laboratory,
//! brute-force block tomography, conjugate-gradient disentangler search over
//! the two-qubit unitary manifold, the sweep-based learner with its built-in
//! error certification, the measurement-only (no unitary control) variant
//! based on ascending superoperators, and an exact two-MERA contraction
//! engine with bond/cost accounting.

pub mod contract;
pub mod learner;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod pauli;
pub mod renorm;
pub mod sim;
pub mod tomo;

pub use model::MeraCircuit;
pub use numerics::{CMatrix, CVector, Tolerances, C64};
pub use sim::StateVector;
