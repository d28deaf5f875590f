//! Entanglement forging with quantum subspace expansion for small active-space
//! molecular Hamiltonians, evaluated on an exact or sampled statevector backend
//! with readout, post-selection, Clifford and purification mitigation.

pub mod error;
pub mod config;
pub mod estimate;
pub mod fci;
pub mod fermion;
pub mod forging;
pub mod integrals;
pub mod measurement;
pub mod mitigation;
pub mod observables;
pub mod pauli;
pub mod pipeline;
pub mod qse;
pub mod sim;
pub mod tensor_op;
pub mod tomography;

pub use error::{Error, Result};
pub use estimate::{ComplexEstimate, Estimate};
