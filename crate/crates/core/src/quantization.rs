// SPDX-License-Identifier: Apache-2.0

//! Black-box quantization of the qubit + BVD network.
//!
//! Maps lumped circuit elements onto circuit-QED parameters: mode frequency
//! ω_m = 1/√(L_m C_m), linewidth κ_m = R_m/L_m and the transverse coupling
//! g_m = (√(ω_q ω_m)/2)·√(C_m/C_q). Also the admittance-level shortcuts
//! T1 = C_idt / Re Y and Q = Im Y / Re Y.
//!
//! Nothing here logs. Conditions that make a formula questionable without
//! making it wrong come back as [`QuantizationWarning`] values.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Admittance, BvdCircuit, CircuitError, RlcBranch};
use crate::units::{angular_to_hz, hz_to_angular};

/// Conductance below which a point is treated as lossless.
pub const MIN_CONDUCTANCE: f64 = 1e-20;

/// E_J/E_C below this leaves the transmon regime.
pub const TRANSMON_RATIO_THRESHOLD: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizationError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("lifetime undefined: conductance {conductance} S is below {MIN_CONDUCTANCE} S")]
    UndefinedLifetime { conductance: f64 },
    #[error("coupling set invalid: {0}")]
    InvalidCouplingSet(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantizationWarning {
    /// E_J(Φ)/E_C below the transmon threshold.
    LowJosephsonRatio { ratio: f64 },
    /// C_m ≥ C_q: the capacitive coupling formula is outside its regime.
    CouplingOutsideValidity { motional_capacitance: f64, qubit_capacitance: f64 },
}

/// Transmon parameters. Energies are E/h in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitParams {
    pub charging_energy_hz: f64,
    pub max_josephson_energy_hz: f64,
    /// Φ/Φ0
    #[serde(default)]
    pub flux: f64,
    /// IDT shunt capacitance, farads.
    pub shunt_capacitance: f64,
    /// Sum of both junction capacitances, farads. Usually negligible.
    #[serde(default)]
    pub junction_capacitance: f64,
    /// Γ1,q(0), 1/s.
    #[serde(default)]
    pub nominal_decay: f64,
    /// Γφ,q, 1/s.
    #[serde(default)]
    pub pure_dephasing: f64,
}

impl QubitParams {
    /// Zero flux, no junction capacitance, no intrinsic loss.
    pub fn new(charging_energy_hz: f64, max_josephson_energy_hz: f64, shunt_capacitance: f64) -> Self {
        Self {
            charging_energy_hz,
            max_josephson_energy_hz,
            flux: 0.0,
            shunt_capacitance,
            junction_capacitance: 0.0,
            nominal_decay: 0.0,
            pure_dephasing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), QuantizationError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(QuantizationError::Domain(format!("{name} must be > 0, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(QuantizationError::Domain(format!("{name} must be >= 0, got {v}")))
            }
        };
        positive("charging_energy_hz", self.charging_energy_hz)?;
        positive("max_josephson_energy_hz", self.max_josephson_energy_hz)?;
        positive("shunt_capacitance", self.shunt_capacitance)?;
        non_negative("junction_capacitance", self.junction_capacitance)?;
        non_negative("nominal_decay", self.nominal_decay)?;
        non_negative("pure_dephasing", self.pure_dephasing)?;
        if !self.flux.is_finite() {
            return Err(QuantizationError::Domain("flux must be finite".into()));
        }
        Ok(())
    }

    /// C_q = C_idt + C_J1 + C_J2.
    pub fn qubit_capacitance(&self) -> f64 {
        self.shunt_capacitance + self.junction_capacitance
    }

    /// Γ2,q = Γφ,q + Γ1,q(0)/2.
    pub fn dephasing_rate(&self) -> f64 {
        self.pure_dephasing + 0.5 * self.nominal_decay
    }

    pub fn warnings(&self) -> Vec<QuantizationWarning> {
        let ej = flux_tuned_ej(self.max_josephson_energy_hz, self.flux);
        let ratio = ej / self.charging_energy_hz;
        if ratio < TRANSMON_RATIO_THRESHOLD {
            vec![QuantizationWarning::LowJosephsonRatio { ratio }]
        } else {
            Vec::new()
        }
    }
}

/// Symmetric-SQUID Josephson energy E_J,max·|cos(πΦ/Φ0)|, period 1 in Φ/Φ0.
pub fn flux_tuned_ej(ej_max: f64, flux: f64) -> f64 {
    let reduced = flux - flux.floor();
    // |cos(πx)| = sin(π|1/2 − x|) on [0, 1); exact zero at half flux
    ej_max * (PI * (0.5 - reduced).abs()).sin()
}

/// Transmon 0→1 frequency ω_q = 2π(√(8 E_C E_J) − E_C), rad/s.
pub fn transmon_frequency(params: &QubitParams) -> Result<f64, QuantizationError> {
    let ec = params.charging_energy_hz;
    let ej_max = params.max_josephson_energy_hz;
    if !(ec.is_finite() && ec > 0.0 && ej_max.is_finite() && ej_max > 0.0) {
        return Err(QuantizationError::Domain(format!(
            "charging and Josephson energies must be > 0 (E_C={ec}, E_J,max={ej_max})"
        )));
    }
    let ej = flux_tuned_ej(ej_max, params.flux);
    if ej <= 0.0 {
        return Err(QuantizationError::Domain(format!(
            "Josephson energy vanishes at flux {}",
            params.flux
        )));
    }
    let f = (8.0 * ec * ej).sqrt() - ec;
    if f <= 0.0 {
        return Err(QuantizationError::Domain(format!(
            "non-positive qubit frequency {f} Hz at flux {}",
            params.flux
        )));
    }
    Ok(hz_to_angular(f))
}

/// One quantized mechanical mode. Frequencies and rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMode {
    pub mode_frequency: f64,
    pub coupling: f64,
    pub linewidth: f64,
    /// K²_k = (2 g / √(ω_q ω_m))²
    pub em_coupling_coefficient: f64,
}

impl CouplingMode {
    /// Mode with K² derived from the qubit frequency it was coupled at.
    pub fn new(mode_frequency: f64, coupling: f64, linewidth: f64, qubit_frequency: f64) -> Self {
        let k = 2.0 * coupling / (qubit_frequency * mode_frequency).sqrt();
        Self {
            mode_frequency,
            coupling,
            linewidth,
            em_coupling_coefficient: k * k,
        }
    }

    /// Builds a mode from Hz-valued inputs, taking K² on resonance (ω_q = ω_m).
    pub fn from_hz(f_m_hz: f64, g_hz: f64, kappa_hz: f64) -> Self {
        let w = hz_to_angular(f_m_hz);
        Self::new(w, hz_to_angular(g_hz), hz_to_angular(kappa_hz), w)
    }
}

/// Quantized parameters {ω_m,k, g_m,k, κ_m,k, K²_k} sorted by mode frequency.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CouplingSet {
    modes: Vec<CouplingMode>,
}

impl CouplingSet {
    pub fn new(modes: Vec<CouplingMode>) -> Result<Self, QuantizationError> {
        for (i, m) in modes.iter().enumerate() {
            let ok = m.mode_frequency.is_finite()
                && m.mode_frequency > 0.0
                && m.coupling.is_finite()
                && m.coupling >= 0.0
                && m.linewidth.is_finite()
                && m.linewidth >= 0.0
                && m.em_coupling_coefficient.is_finite()
                && m.em_coupling_coefficient >= 0.0;
            if !ok {
                return Err(QuantizationError::InvalidCouplingSet(format!(
                    "mode {i} has a negative or non-finite parameter: {m:?}"
                )));
            }
        }
        for (i, w) in modes.windows(2).enumerate() {
            if w[1].mode_frequency <= w[0].mode_frequency {
                return Err(QuantizationError::InvalidCouplingSet(format!(
                    "mode frequencies must be strictly increasing (index {})",
                    i + 1
                )));
            }
        }
        Ok(Self { modes })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn modes(&self) -> &[CouplingMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Largest relative deviation of stored K² from (2g/√(ω_q ω_m))².
    pub fn k2_consistency(&self, qubit_frequency: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let k = 2.0 * m.coupling / (qubit_frequency * m.mode_frequency).sqrt();
                let expected = k * k;
                if expected == 0.0 {
                    m.em_coupling_coefficient
                } else {
                    ((m.em_coupling_coefficient - expected) / expected).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModeRecord {
    f_m_hz: f64,
    g_hz: f64,
    kappa_hz: f64,
    #[serde(rename = "K2")]
    k2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CouplingSetRecord {
    modes: Vec<ModeRecord>,
}

impl Serialize for CouplingSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CouplingSetRecord {
            modes: self
                .modes
                .iter()
                .map(|m| ModeRecord {
                    f_m_hz: angular_to_hz(m.mode_frequency),
                    g_hz: angular_to_hz(m.coupling),
                    kappa_hz: angular_to_hz(m.linewidth),
                    k2: m.em_coupling_coefficient,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CouplingSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = CouplingSetRecord::deserialize(deserializer)?;
        let modes = rec
            .modes
            .into_iter()
            .map(|m| CouplingMode {
                mode_frequency: hz_to_angular(m.f_m_hz),
                coupling: hz_to_angular(m.g_hz),
                linewidth: hz_to_angular(m.kappa_hz),
                em_coupling_coefficient: m.k2,
            })
            .collect();
        CouplingSet::new(modes).map_err(serde::de::Error::custom)
    }
}

/// A quantized branch plus whatever warnings the mapping raised.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBranch {
    pub mode: CouplingMode,
    pub warnings: Vec<QuantizationWarning>,
}

/// Quantizes one branch against a qubit at angular frequency `omega_q` with
/// total capacitance `c_q`.
pub fn quantize_branch_at(
    branch: &RlcBranch,
    omega_q: f64,
    c_q: f64,
) -> Result<QuantizedBranch, QuantizationError> {
    if !(c_q.is_finite() && c_q > 0.0) {
        return Err(QuantizationError::Domain(format!("qubit capacitance must be > 0, got {c_q}")));
    }
    if !(omega_q.is_finite() && omega_q > 0.0) {
        return Err(QuantizationError::Domain(format!("qubit frequency must be > 0, got {omega_q}")));
    }
    let omega_m = branch.mode_frequency();
    let k2 = branch.capacitance() / c_q;
    let coupling = 0.5 * (omega_q * omega_m).sqrt() * k2.sqrt();
    let mut warnings = Vec::new();
    if branch.capacitance() >= c_q {
        warnings.push(QuantizationWarning::CouplingOutsideValidity {
            motional_capacitance: branch.capacitance(),
            qubit_capacitance: c_q,
        });
    }
    Ok(QuantizedBranch {
        mode: CouplingMode {
            mode_frequency: omega_m,
            coupling,
            linewidth: branch.linewidth(),
            em_coupling_coefficient: k2,
        },
        warnings,
    })
}

/// Quantizes one branch at the qubit's own transmon frequency.
pub fn quantize_branch(
    branch: &RlcBranch,
    qubit: &QubitParams,
) -> Result<QuantizedBranch, QuantizationError> {
    qubit.validate()?;
    let omega_q = transmon_frequency(qubit)?;
    let mut q = quantize_branch_at(branch, omega_q, qubit.qubit_capacitance())?;
    let mut warnings = qubit.warnings();
    warnings.append(&mut q.warnings);
    q.warnings = warnings;
    Ok(q)
}

/// Quantizes every motional branch of a BVD circuit.
pub fn quantize_circuit(
    circuit: &BvdCircuit,
    qubit: &QubitParams,
) -> Result<(CouplingSet, Vec<QuantizationWarning>), QuantizationError> {
    qubit.validate()?;
    let omega_q = transmon_frequency(qubit)?;
    let c_q = qubit.qubit_capacitance();
    let mut warnings = qubit.warnings();
    let mut modes = Vec::with_capacity(circuit.branches().len());
    for b in circuit.branches() {
        let mut q = quantize_branch_at(b, omega_q, c_q)?;
        warnings.append(&mut q.warnings);
        modes.push(q.mode);
    }
    Ok((CouplingSet::new(modes)?, warnings))
}

/// Inverse of [`quantize_branch_at`]: rebuilds R, L, C from ω_m, g, κ.
pub fn dequantize_mode(
    mode: &CouplingMode,
    omega_q: f64,
    c_q: f64,
) -> Result<RlcBranch, QuantizationError> {
    let k = 2.0 * mode.coupling / (omega_q * mode.mode_frequency).sqrt();
    let c_m = c_q * k * k;
    Ok(RlcBranch::from_mode(mode.mode_frequency, mode.linewidth, c_m)?)
}

/// Diagnostic inductive form g = (√(ω_q ω_m)/2)·√(L_q/L_m) with
/// L_q = 1/(ω_q² C_q). Agrees with the capacitive form only at ω_q = ω_m.
pub fn inductive_coupling(branch: &RlcBranch, omega_q: f64, c_q: f64) -> f64 {
    let l_q = 1.0 / (omega_q * omega_q * c_q);
    0.5 * (omega_q * branch.mode_frequency()).sqrt() * (l_q / branch.inductance()).sqrt()
}

/// T1(ω) = C_idt / Re Y(ω), seconds.
pub fn t1_from_admittance(y: &Admittance, c_idt: f64) -> Result<f64, QuantizationError> {
    if !(c_idt.is_finite() && c_idt > 0.0) {
        return Err(QuantizationError::Domain(format!("C_idt must be > 0, got {c_idt}")));
    }
    if !(y.conductance >= MIN_CONDUCTANCE) {
        return Err(QuantizationError::UndefinedLifetime {
            conductance: y.conductance,
        });
    }
    Ok(c_idt / y.conductance)
}

/// Q = Im Y / Re Y.
pub fn q_from_admittance(y: &Admittance) -> Result<f64, QuantizationError> {
    if !(y.conductance > 0.0 && y.susceptance > 0.0) {
        return Err(QuantizationError::Domain(format!(
            "quality factor needs G > 0 and B > 0 (G={}, B={})",
            y.conductance, y.susceptance
        )));
    }
    Ok(y.susceptance / y.conductance)
}
