//! Shell-reduced models of a two-level system driven by a commensurate
//! multi-frequency quantized field.
//!
//! The field's Fock space is collapsed onto energy shells, one state per
//! shell, which keeps the spin-field problem one-dimensional no matter how
//! many modes are present. The crate builds the shell distribution, the
//! bases and Hamiltonians on both pictures, the spectra and avoided
//! crossings, the perturbative two-level reduction and the time evolution
//! used to compare the reduced model against brute-force Fock dynamics.

pub mod acceptance;
pub mod basis;
pub mod dynamics;
pub mod effective;
pub mod error;
pub mod hamiltonian;
pub mod output;
pub mod shell;
pub mod spectra;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
