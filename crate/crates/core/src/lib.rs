// SPDX-License-Identifier: Apache-2.0

//! Interface-piezoelectric loss modelling for superconducting qubits.
//!
//! The crate follows the chain from a lumped electromechanical network to
//! measured qubit lifetimes:
//!
//! - [`circuit`]: Butterworth–Van Dyke admittance of an IDT/SAW resonator.
//! - [`quantization`]: circuit elements to (ω_m, g_m, κ_m), T1 and Q from Y11.
//! - [`dynamics`]: single-excitation master equation and the Lorentzian
//!   relaxation spectrum it reduces to.
//! - [`spectrum_fit`]: mode detection and weighted Levenberg–Marquardt fits of
//!   Γ1(ω_q) spectra.
//! - [`experiment_sim`]: synthetic p_e(f_q, V_bias) maps with Stark-tuned TLS
//!   and bias averaging.
//! - [`loss_budget`]: power-law fits, participation-ratio loss and the
//!   piezo/TLS crossover.
//!
//! Internal math is in rad/s; everything read from or written to files is Hz.

pub mod circuit;
pub mod dynamics;
pub mod experiment_sim;
pub mod fixtures;
pub mod loss_budget;
pub mod quantization;
pub mod rng;
pub mod spectrum_fit;
pub mod units;

pub use circuit::{Admittance, BvdCircuit, CircuitError, RlcBranch};
pub use dynamics::{DensityMatrix3, DynamicsConfig, DynamicsError};
pub use quantization::{CouplingMode, CouplingSet, QuantizationError, QubitParams};
