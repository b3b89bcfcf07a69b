// SPDX-License-Identifier: Apache-2.0

//! Synthetic p_e(f_q, V_bias) measurements.
//!
//! SAW modes relax the qubit independently of the bias voltage. TLS defects
//! are Stark shifted by it, ω_TLS = √(Δ0² + ε(V)²) with ε(V) = ε0 + (dε/dV)·V,
//! and add their own Lorentzian relaxation channel. Averaging a map over the
//! bias axis smears TLS features out and leaves the SAW comb untouched.

use std::io::Write;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{gamma1_at, lorentzian_rate};
use crate::quantization::{CouplingMode, CouplingSet, QubitParams};
use crate::rng;
use crate::units::hz_to_angular;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid TLS defect: {0}")]
    InvalidDefect(String),
    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
    #[error("invalid SAW comb: {0}")]
    InvalidComb(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Standard-tunneling-model defect. All frequencies in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsDefect {
    /// Δ0/h
    pub tunneling_amplitude: f64,
    /// ε0/h
    pub asymmetry_at_zero_bias: f64,
    /// dε/dV / h, Hz/V
    pub bias_sensitivity: f64,
    /// g_TLS/2π
    pub qubit_coupling: f64,
    /// γ_TLS/2π, half width at half maximum
    pub linewidth: f64,
}

impl TlsDefect {
    pub fn new(
        tunneling_amplitude: f64,
        asymmetry_at_zero_bias: f64,
        bias_sensitivity: f64,
        qubit_coupling: f64,
        linewidth: f64,
    ) -> Result<Self, SimError> {
        let d = Self {
            tunneling_amplitude,
            asymmetry_at_zero_bias,
            bias_sensitivity,
            qubit_coupling,
            linewidth,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.tunneling_amplitude.is_finite() && self.tunneling_amplitude > 0.0) {
            return Err(SimError::InvalidDefect(format!(
                "tunneling amplitude must be > 0, got {}",
                self.tunneling_amplitude
            )));
        }
        if !(self.asymmetry_at_zero_bias.is_finite() && self.bias_sensitivity.is_finite()) {
            return Err(SimError::InvalidDefect("asymmetry and bias sensitivity must be finite".into()));
        }
        if !(self.qubit_coupling.is_finite() && self.qubit_coupling >= 0.0) {
            return Err(SimError::InvalidDefect(format!(
                "qubit coupling must be >= 0, got {}",
                self.qubit_coupling
            )));
        }
        if !(self.linewidth.is_finite() && self.linewidth > 0.0) {
            return Err(SimError::InvalidDefect(format!(
                "linewidth must be > 0, got {}",
                self.linewidth
            )));
        }
        Ok(())
    }

    /// ε(V)/h = ε0 + (dε/dV)·V
    pub fn asymmetry(&self, v_bias: f64) -> f64 {
        self.asymmetry_at_zero_bias + self.bias_sensitivity * v_bias
    }
}

/// ω_TLS/2π = √(Δ0² + ε(V)²), Hz.
pub fn tls_frequency(defect: &TlsDefect, v_bias: f64) -> f64 {
    defect.tunneling_amplitude.hypot(defect.asymmetry(v_bias))
}

/// Γ1 at qubit frequency `fq_hz` and bias `v_bias`: background, SAW
/// Lorentzians (Γ2,k = Γ2,q + κ_k/2) and TLS Lorentzians (Γ2 = γ_TLS).
pub fn total_gamma1(
    fq_hz: f64,
    v_bias: f64,
    saw: &CouplingSet,
    tls: &[TlsDefect],
    qubit: &QubitParams,
) -> f64 {
    let w = hz_to_angular(fq_hz);
    let saw_part = gamma1_at(w, qubit.nominal_decay, qubit.dephasing_rate(), saw);
    let tls_part: f64 = tls
        .iter()
        .map(|d| {
            lorentzian_rate(
                hz_to_angular(d.qubit_coupling),
                hz_to_angular(d.linewidth),
                w - hz_to_angular(tls_frequency(d, v_bias)),
            )
        })
        .sum();
    saw_part + tls_part
}

/// Grids and timing of a p_e(f_q, V) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Hz
    pub qubit_frequency_grid: Vec<f64>,
    /// V
    pub bias_grid: Vec<f64>,
    /// τ0, s
    pub delay: f64,
    /// Shots per point; `None` gives exact probabilities.
    pub shots: Option<u64>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.qubit_frequency_grid.is_empty() || self.bias_grid.is_empty() {
            return Err(SimError::InvalidPlan("frequency and bias grids must be non-empty".into()));
        }
        if self.qubit_frequency_grid.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(SimError::InvalidPlan("qubit frequencies must be positive".into()));
        }
        if self.bias_grid.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidPlan("bias values must be finite".into()));
        }
        if !(self.delay.is_finite() && self.delay > 0.0) {
            return Err(SimError::InvalidPlan(format!("delay must be > 0, got {}", self.delay)));
        }
        if self.shots == Some(0) {
            return Err(SimError::InvalidPlan("shots must be >= 1".into()));
        }
        Ok(())
    }
}

/// p_e over (f_q, V). `values[i][j]` is at frequency i, bias j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeMap {
    pub frequencies: Vec<f64>,
    pub biases: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PeMap {
    pub fn new(frequencies: Vec<f64>, biases: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, SimError> {
        if values.len() != frequencies.len() || values.iter().any(|row| row.len() != biases.len()) {
            return Err(SimError::Precondition("map shape does not match its axes".into()));
        }
        Ok(Self {
            frequencies,
            biases,
            values,
        })
    }

    /// Variance over the bias axis at frequency index i.
    pub fn bias_variance(&self, i: usize) -> f64 {
        let row = &self.values[i];
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }
}

/// Simulated p_e = exp(−Γ1·τ0), with binomial shot noise when the plan has
/// a shot count. Point (i, j) draws from stream `(seed, i, j)`, so the map is
/// identical however the grid is scheduled.
pub fn pe_map(
    plan: &ExperimentPlan,
    saw: &CouplingSet,
    tls: &[TlsDefect],
    qubit: &QubitParams,
    noise_seed: u64,
) -> Result<PeMap, SimError> {
    plan.validate()?;
    for d in tls {
        d.validate()?;
    }
    let values: Vec<Vec<f64>> = plan
        .qubit_frequency_grid
        .par_iter()
        .enumerate()
        .map(|(i, &fq)| {
            plan.bias_grid
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let p = (-total_gamma1(fq, v, saw, tls, qubit) * plan.delay).exp();
                    match plan.shots {
                        None => p,
                        Some(n) => {
                            let mut rng = rng::grid_stream(noise_seed, i, j);
                            let k = Binomial::new(n, p.clamp(0.0, 1.0))
                                .expect("p in [0, 1]")
                                .sample(&mut rng);
                            k as f64 / n as f64
                        }
                    }
                })
                .collect()
        })
        .collect();
    PeMap::new(plan.qubit_frequency_grid.clone(), plan.bias_grid.clone(), values)
}

/// Mean of p_e over the bias axis, one value per frequency.
pub fn bias_average(map: &PeMap) -> Result<Vec<f64>, SimError> {
    if map.biases.is_empty() || map.frequencies.is_empty() {
        return Err(SimError::Precondition("cannot average an empty map".into()));
    }
    let n = map.biases.len() as f64;
    Ok(map.values.iter().map(|row| row.iter().sum::<f64>() / n).collect())
}

/// Mode linewidths for [`saw_comb`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombLinewidths {
    /// κ/2π for every mode, Hz.
    Constant(f64),
    /// κ_k/2π per mode, Hz.
    PerMode(Vec<f64>),
}

/// N modes at f_k = f_center + (k − (N+1)/2)·FSR, k = 1..N, with couplings
/// `couplings_hz` (g_k/2π). K² is taken on resonance.
pub fn saw_comb(
    center_hz: f64,
    fsr_hz: f64,
    couplings_hz: &[f64],
    linewidths: &CombLinewidths,
) -> Result<CouplingSet, SimError> {
    let n = couplings_hz.len();
    if !(center_hz.is_finite() && center_hz > 0.0 && fsr_hz.is_finite() && fsr_hz > 0.0) {
        return Err(SimError::InvalidComb(format!(
            "center {center_hz} Hz and FSR {fsr_hz} Hz must be positive"
        )));
    }
    let kappa: Vec<f64> = match linewidths {
        CombLinewidths::Constant(k) => vec![*k; n],
        CombLinewidths::PerMode(v) if v.len() == n => v.clone(),
        CombLinewidths::PerMode(v) => {
            return Err(SimError::InvalidComb(format!(
                "{} linewidths for {} modes",
                v.len(),
                n
            )))
        }
    };
    let mid = (n as f64 + 1.0) / 2.0;
    let modes = couplings_hz
        .iter()
        .zip(&kappa)
        .enumerate()
        .map(|(idx, (&g, &k))| {
            let f = center_hz + ((idx + 1) as f64 - mid) * fsr_hz;
            if f <= 0.0 {
                return Err(SimError::InvalidComb(format!("mode {} falls at {f} Hz", idx + 1)));
            }
            Ok(CouplingMode::from_hz(f, g, k))
        })
        .collect::<Result<Vec<_>, _>>()?;
    CouplingSet::new(modes).map_err(|e| SimError::InvalidComb(e.to_string()))
}

fn io(e: std::io::Error) -> SimError {
    SimError::Io(e.to_string())
}

/// Long-form CSV `fq_hz,v_bias,pe`.
pub fn write_pe_map_csv<W: Write>(map: &PeMap, mut out: W) -> Result<(), SimError> {
    writeln!(out, "fq_hz,v_bias,pe").map_err(io)?;
    for (i, &f) in map.frequencies.iter().enumerate() {
        for (j, &v) in map.biases.iter().enumerate() {
            writeln!(out, "{:e},{:e},{:e}", f, v, map.values[i][j]).map_err(io)?;
        }
    }
    Ok(())
}

/// CSV `fq_hz,pe_avg`.
pub fn write_profile_csv<W: Write>(frequencies: &[f64], profile: &[f64], mut out: W) -> Result<(), SimError> {
    writeln!(out, "fq_hz,pe_avg").map_err(io)?;
    for (f, p) in frequencies.iter().zip(profile) {
        writeln!(out, "{f:e},{p:e}").map_err(io)?;
    }
    Ok(())
}

/// Plan metadata that accompanies a serialized map.
pub fn plan_header(plan: &ExperimentPlan, noise_seed: u64) -> serde_json::Value {
    serde_json::json!({
        "n_frequencies": plan.qubit_frequency_grid.len(),
        "n_bias": plan.bias_grid.len(),
        "fq_min_hz": plan.qubit_frequency_grid.first(),
        "fq_max_hz": plan.qubit_frequency_grid.last(),
        "v_bias_min": plan.bias_grid.first(),
        "v_bias_max": plan.bias_grid.last(),
        "delay_s": plan.delay,
        "shots": plan.shots,
        "noise_seed": noise_seed,
    })
}
