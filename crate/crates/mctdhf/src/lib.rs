//! Multiconfiguration time-dependent Hartree-Fock (MCTDHF) for few-electron
//! systems in strong laser fields.
//!
//! The wave function is a full-CI expansion over a small set of time-dependent
//! spatial orbitals, discretized on an adaptively refined tensor-product
//! finite element mesh with Gauss-Lobatto Lagrange bases (FEDVR-style).
//! Orbitals and CI coefficients are propagated with a short-iterative Arnoldi
//! exponential scheme; exterior complex scaling provides absorbing boundaries.
//!
//! Module map:
//! - [`mesh`]: multiresolution 2^d-tree meshes with Kelly-indicator refinement
//! - [`fem`]: Gauss-Lobatto finite element spaces and operator assembly
//! - [`meanfield`]: inter-electronic mean-field potentials (Poisson solves)
//! - [`ci`]: determinant spaces, sigma vectors, reduced density matrices
//! - [`eom`]: MCTDHF equations of motion and the packed orbital operator
//! - [`krylov`]: short-iterative Arnoldi propagator, imaginary-time relaxation
//! - [`field`]: laser pulse waveforms
//! - [`driver`]: batch run orchestration, observables, HHG spectra

pub mod ci;
pub mod driver;
pub mod eom;
pub mod fem;
pub mod field;
pub mod krylov;
pub mod linalg;
pub mod meanfield;
pub mod mesh;
pub mod quadrature;
pub mod sparse;
#[cfg(test)]
pub(crate) mod testutil;

pub use num_complex::Complex64;
