//! Finite-size and large-N numerics for the complex Sachdev-Ye-Kitaev model,
//! together with SYK and Dicke quantum-battery charging protocols.
//!
//! Sites are labelled `0..N`; bit `i` of an occupation mask is site `i`, and
//! Jordan-Wigner strings run over occupied sites with smaller index.

pub mod couplings;
pub mod dynamics;
pub mod error;
pub mod fock;
pub mod hamiltonian;
pub mod largen;
pub mod output;
pub mod spectral;
pub mod stats;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
