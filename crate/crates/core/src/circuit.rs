// SPDX-License-Identifier: Apache-2.0

//! Lumped-element electromechanical circuits.
//!
//! A SAW resonator seen from the IDT port is a Butterworth–Van Dyke network:
//! the static IDT capacitance in parallel with one series RLC branch per
//! mechanical mode. Everything here is a pure function of immutable values,
//! so sweeps parallelize without changing a single bit of the result.

use std::cmp::Ordering;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{angular_to_hz, hz_to_angular};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("invalid circuit element: {0}")]
    InvalidElement(String),
    #[error("frequency must be positive and finite, got {0} rad/s")]
    NonPositiveFrequency(f64),
    #[error("frequency grid must be strictly increasing (index {index})")]
    GridNotIncreasing { index: usize },
    #[error("lossless branch evaluated exactly at its resonance {omega} rad/s")]
    SingularAdmittance { omega: f64 },
    #[error("serialization failed: {0}")]
    Serialization(String),
}

/// One motional branch: a series R–L–C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlcBranch {
    resistance: f64,
    inductance: f64,
    capacitance: f64,
}

impl RlcBranch {
    pub fn new(resistance: f64, inductance: f64, capacitance: f64) -> Result<Self, CircuitError> {
        if !(resistance.is_finite() && resistance >= 0.0) {
            return Err(CircuitError::InvalidElement(format!(
                "resistance must be finite and >= 0, got {resistance}"
            )));
        }
        if !(inductance.is_finite() && inductance > 0.0) {
            return Err(CircuitError::InvalidElement(format!(
                "inductance must be finite and > 0, got {inductance}"
            )));
        }
        if !(capacitance.is_finite() && capacitance > 0.0) {
            return Err(CircuitError::InvalidElement(format!(
                "capacitance must be finite and > 0, got {capacitance}"
            )));
        }
        let branch = Self {
            resistance,
            inductance,
            capacitance,
        };
        let omega = branch.mode_frequency();
        if !(omega.is_finite() && omega > 0.0) {
            return Err(CircuitError::InvalidElement(format!(
                "mode frequency 1/sqrt(LC) is not finite for L={inductance}, C={capacitance}"
            )));
        }
        Ok(branch)
    }

    /// Builds a branch from its mode frequency (rad/s), linewidth κ = R/L (1/s)
    /// and motional capacitance.
    pub fn from_mode(omega_m: f64, kappa: f64, capacitance: f64) -> Result<Self, CircuitError> {
        if !(omega_m.is_finite() && omega_m > 0.0) {
            return Err(CircuitError::NonPositiveFrequency(omega_m));
        }
        let inductance = 1.0 / (omega_m * omega_m * capacitance);
        Self::new(kappa * inductance, inductance, capacitance)
    }

    pub fn resistance(&self) -> f64 {
        self.resistance
    }

    pub fn inductance(&self) -> f64 {
        self.inductance
    }

    pub fn capacitance(&self) -> f64 {
        self.capacitance
    }

    /// ω_m = 1/√(LC), rad/s.
    pub fn mode_frequency(&self) -> f64 {
        1.0 / (self.inductance * self.capacitance).sqrt()
    }

    /// κ_m = R/L, 1/s.
    pub fn linewidth(&self) -> f64 {
        self.resistance / self.inductance
    }

    fn impedance(&self, omega: f64) -> Complex64 {
        let reactance = omega * self.inductance - 1.0 / (omega * self.capacitance);
        Complex64::new(self.resistance, reactance)
    }
}

/// Static IDT capacitance in parallel with the motional branches, stored in
/// canonical order (ascending ω_m, ties broken by larger C_m first).
#[derive(Debug, Clone, PartialEq)]
pub struct BvdCircuit {
    static_capacitance: f64,
    branches: Vec<RlcBranch>,
}

impl BvdCircuit {
    pub fn new(static_capacitance: f64, mut branches: Vec<RlcBranch>) -> Result<Self, CircuitError> {
        if !(static_capacitance.is_finite() && static_capacitance > 0.0) {
            return Err(CircuitError::InvalidElement(format!(
                "static capacitance must be finite and > 0, got {static_capacitance}"
            )));
        }
        branches.sort_by(canonical_order);
        Ok(Self {
            static_capacitance,
            branches,
        })
    }

    pub fn static_capacitance(&self) -> f64 {
        self.static_capacitance
    }

    pub fn branches(&self) -> &[RlcBranch] {
        &self.branches
    }

    /// Motional branches only, no static capacitance.
    pub fn motional_admittance(&self, omega: f64) -> Result<Complex64, CircuitError> {
        check_frequency(omega)?;
        self.branches.iter().try_fold(Complex64::new(0.0, 0.0), |acc, b| {
            Ok(acc + branch_admittance(b, omega)?)
        })
    }
}

fn canonical_order(a: &RlcBranch, b: &RlcBranch) -> Ordering {
    a.mode_frequency()
        .total_cmp(&b.mode_frequency())
        .then_with(|| b.capacitance.total_cmp(&a.capacitance))
}

/// Complex admittance Y = G + iB at a single angular frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admittance {
    /// rad/s
    pub frequency: f64,
    /// Re Y, siemens
    pub conductance: f64,
    /// Im Y, siemens
    pub susceptance: f64,
}

impl Admittance {
    pub fn from_complex(frequency: f64, y: Complex64) -> Self {
        Self {
            frequency,
            conductance: y.re,
            susceptance: y.im,
        }
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.conductance, self.susceptance)
    }
}

fn check_frequency(omega: f64) -> Result<(), CircuitError> {
    if omega.is_finite() && omega > 0.0 {
        Ok(())
    } else {
        Err(CircuitError::NonPositiveFrequency(omega))
    }
}

fn branch_admittance(branch: &RlcBranch, omega: f64) -> Result<Complex64, CircuitError> {
    let z = branch.impedance(omega);
    if z.re == 0.0 && z.im == 0.0 {
        return Err(CircuitError::SingularAdmittance { omega });
    }
    let y = z.inv();
    if !(y.re.is_finite() && y.im.is_finite()) {
        return Err(CircuitError::SingularAdmittance { omega });
    }
    Ok(y)
}

/// Y(ω) = 1/(R + iωL + 1/(iωC)).
pub fn series_rlc_admittance(branch: &RlcBranch, omega: f64) -> Result<Admittance, CircuitError> {
    check_frequency(omega)?;
    Ok(Admittance::from_complex(omega, branch_admittance(branch, omega)?))
}

/// Y(ω) = iωC_idt + Σ_k Y_k(ω).
pub fn bvd_admittance(circuit: &BvdCircuit, omega: f64) -> Result<Admittance, CircuitError> {
    let motional = circuit.motional_admittance(omega)?;
    let y = Complex64::new(0.0, omega * circuit.static_capacitance) + motional;
    Ok(Admittance::from_complex(omega, y))
}

/// Element-wise [`bvd_admittance`] over a strictly increasing grid (rad/s).
/// Points are evaluated in parallel; each result depends only on its own ω.
pub fn sweep_admittance(circuit: &BvdCircuit, grid: &[f64]) -> Result<Vec<Admittance>, CircuitError> {
    if let Some(&first) = grid.first() {
        check_frequency(first)?;
    }
    for (i, w) in grid.windows(2).enumerate() {
        check_frequency(w[1])?;
        if w[1] <= w[0] {
            return Err(CircuitError::GridNotIncreasing { index: i + 1 });
        }
    }
    grid.par_iter().map(|&w| bvd_admittance(circuit, w)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BranchRecord {
    r_ohm: f64,
    l_h: f64,
    c_f: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CircuitRecord {
    c_idt_f: f64,
    branches: Vec<BranchRecord>,
}

impl Serialize for BvdCircuit {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CircuitRecord {
            c_idt_f: self.static_capacitance,
            branches: self
                .branches
                .iter()
                .map(|b| BranchRecord {
                    r_ohm: b.resistance,
                    l_h: b.inductance,
                    c_f: b.capacitance,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BvdCircuit {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = CircuitRecord::deserialize(deserializer)?;
        let branches = rec
            .branches
            .iter()
            .map(|b| RlcBranch::new(b.r_ohm, b.l_h, b.c_f))
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        BvdCircuit::new(rec.c_idt_f, branches).map_err(serde::de::Error::custom)
    }
}

/// Wire form of one sweep point: `{freq_hz, G_S, B_S}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdmittanceRecord {
    pub freq_hz: f64,
    #[serde(rename = "G_S")]
    pub g_s: f64,
    #[serde(rename = "B_S")]
    pub b_s: f64,
}

impl From<&Admittance> for AdmittanceRecord {
    fn from(y: &Admittance) -> Self {
        Self {
            freq_hz: angular_to_hz(y.frequency),
            g_s: y.conductance,
            b_s: y.susceptance,
        }
    }
}

impl From<AdmittanceRecord> for Admittance {
    fn from(r: AdmittanceRecord) -> Self {
        Self {
            frequency: hz_to_angular(r.freq_hz),
            conductance: r.g_s,
            susceptance: r.b_s,
        }
    }
}

/// Writes a sweep as CSV with header `freq_hz,G_S,B_S`.
pub fn write_admittance_csv<W: Write>(sweep: &[Admittance], out: W) -> Result<(), CircuitError> {
    let mut wtr = csv::Writer::from_writer(out);
    for y in sweep {
        wtr.serialize(AdmittanceRecord::from(y))
            .map_err(|e| CircuitError::Serialization(e.to_string()))?;
    }
    wtr.flush().map_err(|e| CircuitError::Serialization(e.to_string()))
}

/// Sweep as a JSON array of `{freq_hz, G_S, B_S}`.
pub fn admittance_json(sweep: &[Admittance]) -> serde_json::Value {
    let records: Vec<AdmittanceRecord> = sweep.iter().map(AdmittanceRecord::from).collect();
    serde_json::to_value(records).expect("plain float records always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn lorentz_branch(f_hz: f64, kappa_hz: f64, c_m: f64) -> RlcBranch {
        RlcBranch::from_mode(TAU * f_hz, TAU * kappa_hz, c_m).unwrap()
    }

    #[test]
    fn lossless_branch_off_resonance_is_reactive() {
        let b = RlcBranch::new(0.0, 1.0, 1.0).unwrap();
        let y = series_rlc_admittance(&b, 0.999).unwrap();
        assert_eq!(y.conductance, 0.0);
        assert!(y.susceptance.abs() > 0.0);
    }

    #[test]
    fn series_resonance_is_pure_conductance() {
        let b = RlcBranch::new(1.0, 1.0, 1.0).unwrap();
        let y = series_rlc_admittance(&b, 1.0).unwrap();
        assert_eq!(y.conductance, 1.0);
        assert_eq!(y.susceptance, 0.0);
    }

    #[test]
    fn conductance_at_mode_frequency_is_inverse_resistance() {
        let b = lorentz_branch(3.2e9, 2.25e6, 1e-18);
        let y = series_rlc_admittance(&b, b.mode_frequency()).unwrap();
        let expected = 1.0 / b.resistance();
        assert!((y.conductance - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn lossless_branch_exactly_on_resonance_is_singular() {
        let b = RlcBranch::new(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            series_rlc_admittance(&b, 1.0),
            Err(CircuitError::SingularAdmittance { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(RlcBranch::new(-1.0, 1.0, 1.0).is_err());
        assert!(RlcBranch::new(1.0, 0.0, 1.0).is_err());
        assert!(RlcBranch::new(1.0, 1.0, f64::NAN).is_err());
        let b = RlcBranch::new(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            series_rlc_admittance(&b, 0.0),
            Err(CircuitError::NonPositiveFrequency(_))
        ));
        assert!(BvdCircuit::new(0.0, vec![]).is_err());
    }

    #[test]
    fn empty_circuit_is_a_capacitor() {
        let c = BvdCircuit::new(100e-15, vec![]).unwrap();
        let w = TAU * 3e9;
        let y = bvd_admittance(&c, w).unwrap();
        assert_eq!(y.conductance, 0.0);
        assert_eq!(y.susceptance, w * 100e-15);
    }

    #[test]
    fn detuned_branch_obeys_lorentzian_tail_bound() {
        let b = lorentz_branch(3.2e9, 2.25e6, 1e-18);
        let c = BvdCircuit::new(100e-15, vec![b]).unwrap();
        let g0 = bvd_admittance(&c, b.mode_frequency()).unwrap().conductance;
        let kappa = b.linewidth();
        for detune_linewidths in [20.0, 50.0, 200.0] {
            for sign in [-1.0, 1.0] {
                let delta = sign * detune_linewidths * kappa;
                let g = bvd_admittance(&c, b.mode_frequency() + delta).unwrap().conductance;
                let bound = g0 * kappa * kappa / (4.0 * delta * delta);
                // the Lorentzian form drops O(Δ/ω_m) terms of the exact reactance
                let tol = 3.0 * delta.abs() / b.mode_frequency();
                assert!(g <= bound * (1.0 + tol), "{g} > {bound}");
            }
        }
    }

    #[test]
    fn parallel_branches_add() {
        let a = lorentz_branch(3.1e9, 2e6, 1e-18);
        let b = lorentz_branch(3.12e9, 3e6, 2e-18);
        let both = BvdCircuit::new(50e-15, vec![a, b]).unwrap();
        let only_a = BvdCircuit::new(50e-15, vec![a]).unwrap();
        let only_b = BvdCircuit::new(50e-15, vec![b]).unwrap();
        for f in [3.0e9, 3.1e9, 3.11e9, 3.12e9, 3.3e9] {
            let w = TAU * f;
            let g = bvd_admittance(&both, w).unwrap().conductance;
            let ga = bvd_admittance(&only_a, w).unwrap().conductance;
            let gb = bvd_admittance(&only_b, w).unwrap().conductance;
            assert!((g - (ga + gb)).abs() <= 1e-12 * g.abs().max(1e-30));
        }
    }

    #[test]
    fn canonical_order_sorts_by_frequency_then_capacitance() {
        let hi = lorentz_branch(3.2e9, 1e6, 1e-18);
        let lo = lorentz_branch(3.1e9, 1e6, 1e-18);
        // same frequency as `lo`, larger C, goes first among ties
        let lo_big = RlcBranch::new(0.0, lo.inductance() / 2.0, lo.capacitance() * 2.0).unwrap();
        let c = BvdCircuit::new(1e-13, vec![hi, lo, lo_big]).unwrap();
        let caps: Vec<f64> = c.branches().iter().map(|b| b.capacitance()).collect();
        assert_eq!(caps, vec![2e-18, 1e-18, 1e-18]);
        assert_eq!(c.branches()[2], hi);
    }

    #[test]
    fn sweep_preconditions() {
        let c = BvdCircuit::new(1e-13, vec![lorentz_branch(3.2e9, 1e6, 1e-18)]).unwrap();
        assert!(sweep_admittance(&c, &[]).unwrap().is_empty());
        let w = TAU * 3.1e9;
        assert_eq!(sweep_admittance(&c, &[w]).unwrap(), vec![bvd_admittance(&c, w).unwrap()]);
        assert!(matches!(
            sweep_admittance(&c, &[2.0 * w, w]),
            Err(CircuitError::GridNotIncreasing { index: 1 })
        ));
        assert!(sweep_admittance(&c, &[-1.0, w]).is_err());
    }

    #[test]
    fn sweep_over_eleven_mode_circuit_shows_eleven_conductance_maxima() {
        let kappas = [2.25, 1.61, 2.00, 4.03, 2.78, 1.67, 5.53, 0.10, 4.80, 2.37, 4.00];
        let branches: Vec<RlcBranch> = kappas
            .iter()
            .enumerate()
            .map(|(k, &kappa)| lorentz_branch(3.0e9 + 24e6 * k as f64, kappa * 1e6, 1e-18))
            .collect();
        let c = BvdCircuit::new(100e-15, branches).unwrap();
        let n = 10_001;
        let grid: Vec<f64> = (0..n)
            .map(|i| TAU * (2.97e9 + 300e6 * i as f64 / (n - 1) as f64))
            .collect();
        let sweep = sweep_admittance(&c, &grid).unwrap();
        let maxima = sweep
            .windows(3)
            .filter(|w| w[1].conductance > w[0].conductance && w[1].conductance > w[2].conductance)
            .count();
        assert_eq!(maxima, 11);
    }

    #[test]
    fn circuit_json_schema() {
        let c = BvdCircuit::new(1e-13, vec![RlcBranch::new(2.0, 3.0, 4.0).unwrap()]).unwrap();
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"c_idt_f": 1e-13, "branches": [{"r_ohm": 2.0, "l_h": 3.0, "c_f": 4.0}]})
        );
        let back: BvdCircuit = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
        let bad = serde_json::json!({"c_idt_f": 1e-13, "branches": [{"r_ohm": 2.0, "l_h": -3.0, "c_f": 4.0}]});
        assert!(serde_json::from_value::<BvdCircuit>(bad).is_err());
    }

    #[test]
    fn admittance_csv_header() {
        let y = Admittance::from_complex(TAU * 1e9, Complex64::new(1e-9, 2e-3));
        let mut buf = Vec::new();
        write_admittance_csv(&[y], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("freq_hz,G_S,B_S\n"));
        let v = admittance_json(&[y]);
        assert_eq!(v[0]["G_S"], 1e-9);
    }
}
