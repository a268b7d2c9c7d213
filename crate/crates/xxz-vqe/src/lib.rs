//! Desk-scale workbench for variational ground-state preparation of XXZ and
//! Heisenberg spin chains, with the full measurement and error-mitigation
//! stack needed to extract accurate energies from noisy circuit executions.
//!
//! The pipeline mirrors what one would run on superconducting hardware:
//!
//! 1. [`model`] — the XXZ Hamiltonian family, exact spectra at small sizes,
//!    the odd-bond-to-full-chain interpolation gap scan, and analytic
//!    reference energies (Bell-pair product, Bethe energy density).
//! 2. [`circuits`] — a circuit IR over the native gate set
//!    `{RZ, SX, X, CNOT}` plus every construction used here: singlet
//!    initialization, the 3-CNOT `Rxyz` decomposition, the layered
//!    variational ansatz, circuit inversion and forward–backward folding,
//!    and measurement-basis suffixes.
//! 3. [`dense`] — a dense statevector simulator (exact, and stochastic
//!    Pauli-trajectory noise with per-qubit readout confusion) that serves
//!    as the exactness oracle for everything else.
//! 4. [`mps`] — a matrix-product-state backend for chains beyond dense
//!    reach (ansatz energies at 100+ sites, imaginary-time ground states,
//!    overlaps, perfect sampling).
//! 5. [`measure`] — three energy-estimation protocols (pairwise tomography,
//!    XYZ, Bell-basis) and the two-qubit concurrence.
//! 6. [`mitigate`] — readout and Bell-measurement assignment matrices with
//!    simplex-constrained inversion, zero-noise extrapolation by circuit
//!    folding, exponential fits, and the reference-state rescaling that
//!    turns a raw extrapolation into a calibrated energy estimate.
//! 7. [`optimize`] — derivative-free minimization (Nelder–Mead, SPSA) over
//!    the ansatz angles and the 1/N thermodynamic-limit fit.
//!
//! Most capabilities are demonstrated end to end in `examples/`; the
//! `xxz-vqe` binary exposes the same flows as config-driven subcommands.

pub mod circuits;
pub mod cli;
pub mod config;
pub mod dense;
mod error;
pub(crate) mod linalg;
pub mod measure;
pub mod mitigate;
pub mod model;
pub mod mps;
pub mod optimize;

pub use error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
