// SPDX-License-Identifier: Apache-2.0

//! Piezoelectric vs TLS loss across frequency.
//!
//! Both channels are participation × loss tangent:
//!
//! 1/Q_piezo(f) = p · tan δ_piezo(f_p) · (f/f_p)^x
//! 1/Q_TLS(f)   = k·p · tan δ_TLS,0 · (f/f_0)^y
//!
//! where p is the metal–substrate participation ratio and k·p the total TLS
//! participation (k = 2 by default, one similar interface on each side).
//! Because both scale with p, the crossover frequency does not depend on it.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no crossover: piezo exponent {piezo} must exceed TLS exponent {tls}")]
    NoCrossover { piezo: f64, tls: f64 },
    #[error("degenerate loss model: piezo and TLS losses coincide at every frequency")]
    Degenerate,
    #[error("invalid loss model config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Loss model parameters. Frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossModel {
    /// tan δ_piezo at `piezo_reference_frequency`.
    pub piezo_tan_delta: f64,
    pub piezo_reference_frequency: f64,
    /// x in 1/Q_piezo ∝ f^x
    pub piezo_exponent: f64,
    /// p, participation of the metal–substrate interface.
    pub epr: f64,
    /// tan δ_TLS,0 at `tls_reference_frequency`.
    pub tls_tan_delta0: f64,
    pub tls_reference_frequency: f64,
    /// y in tan δ_TLS ∝ f^y
    pub tls_exponent: f64,
    /// p_TLS / p
    pub tls_participation_factor: f64,
}

impl Default for LossModel {
    fn default() -> Self {
        Self {
            piezo_tan_delta: 1.7e-4,
            piezo_reference_frequency: 4.5e9,
            piezo_exponent: 2.4,
            epr: 1e-3,
            tls_tan_delta0: 1e-3,
            tls_reference_frequency: 6e9,
            tls_exponent: 0.15,
            tls_participation_factor: 2.0,
        }
    }
}

/// Caveats attached to every budget report.
pub const MODEL_ASSUMPTIONS: &[&str] = &[
    "tls_power_law_is_empirical: tan_delta_TLS(f) = tan_delta_TLS,0 (f/f0)^y is an empirical fit and is not expected to be accurate far from f0",
    "piezo_loss_tangent_epr_independent: tan_delta_piezo does not depend on participation; all frequency dependence is in the power law",
    "tls_participation_from_interfaces: p_TLS = k * p with every TLS-hosting interface given a similar loss tangent",
];

impl LossModel {
    pub fn validate(&self) -> Result<(), LossError> {
        let checks = [
            ("piezo_tan_delta", self.piezo_tan_delta),
            ("piezo_reference_frequency", self.piezo_reference_frequency),
            ("piezo_exponent", self.piezo_exponent),
            ("epr", self.epr),
            ("tls_tan_delta0", self.tls_tan_delta0),
            ("tls_reference_frequency", self.tls_reference_frequency),
            ("tls_participation_factor", self.tls_participation_factor),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(LossError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.tls_exponent.is_finite() && self.tls_exponent >= 0.0) {
            return Err(LossError::Config(format!(
                "tls_exponent must be >= 0, got {}",
                self.tls_exponent
            )));
        }
        if self.epr >= 1.0 {
            return Err(LossError::Config(format!("epr must be < 1, got {}", self.epr)));
        }
        Ok(())
    }

    /// Reads `key = value` lines; missing keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self, LossError> {
        let model: Self = toml::from_str(text).map_err(|e| LossError::Config(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("flat struct of floats serializes")
    }

    /// Q_piezo at the piezo reference frequency.
    pub fn piezo_reference_q(&self) -> f64 {
        1.0 / (self.epr * self.piezo_tan_delta)
    }

    /// p_TLS = k·p
    pub fn tls_participation(&self) -> f64 {
        self.tls_participation_factor * self.epr
    }

    pub fn tls_tan_delta(&self, fq: f64) -> f64 {
        self.tls_tan_delta0 * (fq / self.tls_reference_frequency).powf(self.tls_exponent)
    }

    pub fn piezo_tan_delta_at(&self, fq: f64) -> f64 {
        self.piezo_tan_delta * (fq / self.piezo_reference_frequency).powf(self.piezo_exponent)
    }

    /// Same model with both loss tangents multiplied by `c`.
    pub fn with_scaled_tangents(&self, c: f64) -> Self {
        Self {
            piezo_tan_delta: self.piezo_tan_delta * c,
            tls_tan_delta0: self.tls_tan_delta0 * c,
            ..self.clone()
        }
    }
}

fn check_frequency(fq: f64) -> Result<(), LossError> {
    if fq.is_finite() && fq > 0.0 {
        Ok(())
    } else {
        Err(LossError::Domain(format!("frequency must be > 0, got {fq}")))
    }
}

/// Q_TLS = 1/(p_TLS · tan δ_TLS(f)).
pub fn q_tls(model: &LossModel, fq: f64) -> Result<f64, LossError> {
    check_frequency(fq)?;
    Ok(1.0 / (model.tls_participation() * model.tls_tan_delta(fq)))
}

/// Q_piezo = 1/(p · tan δ_piezo(f_p) · (f/f_p)^x).
pub fn q_piezo(model: &LossModel, fq: f64) -> Result<f64, LossError> {
    check_frequency(fq)?;
    Ok(1.0 / (model.epr * model.piezo_tan_delta_at(fq)))
}

/// Γ_piezo = 2πf / Q_piezo, 1/s.
pub fn gamma_piezo(model: &LossModel, fq: f64) -> Result<f64, LossError> {
    Ok(std::f64::consts::TAU * fq / q_piezo(model, fq)?)
}

/// Frequency (Hz) where Q_piezo = Q_TLS, in closed form:
/// f = [k·tan δ_TLS,0·f_p^x / (tan δ_piezo·f_0^y)]^(1/(x−y)).
pub fn crossover_frequency(model: &LossModel) -> Result<f64, LossError> {
    model.validate()?;
    let x = model.piezo_exponent;
    let y = model.tls_exponent;
    // ln of the two prefactors in 1/Q = p·exp(a + e·ln f)
    let a_piezo = model.piezo_tan_delta.ln() - x * model.piezo_reference_frequency.ln();
    let a_tls = (model.tls_participation_factor * model.tls_tan_delta0).ln()
        - y * model.tls_reference_frequency.ln();
    let tol = 1e-12 * a_piezo.abs().max(a_tls.abs()).max(1.0);
    if x == y && (a_piezo - a_tls).abs() <= tol {
        return Err(LossError::Degenerate);
    }
    if x <= y {
        return Err(LossError::NoCrossover { piezo: x, tls: y });
    }
    Ok(((a_tls - a_piezo) / (x - y)).exp())
}

/// y = prefactor · f^exponent from OLS on (ln f, ln y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    /// Standard error of the exponent; absent with only two points.
    pub exponent_stderr: Option<f64>,
    /// y at f = 1 Hz.
    pub prefactor: f64,
    pub r_squared: f64,
}

impl PowerLawFit {
    pub fn eval(&self, f: f64) -> f64 {
        self.prefactor * f.powf(self.exponent)
    }
}

/// Straight-line OLS fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: Option<f64>,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit, LossError> {
    if x.len() != y.len() {
        return Err(LossError::Domain("x and y differ in length".into()));
    }
    let n = x.len();
    if n < 2 {
        return Err(LossError::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(LossError::Domain("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_stderr = (n > 2).then(|| (sse / (nf - 2.0) / sxx).sqrt());
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
    })
}

/// Log-log linear fit of `(f, y)` points.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, LossError> {
    for (i, &(f, y)) in points.iter().enumerate() {
        if !(f.is_finite() && f > 0.0 && y.is_finite() && y > 0.0) {
            return Err(LossError::Domain(format!(
                "point {i} ({f}, {y}) must have positive frequency and value"
            )));
        }
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let line = fit_line(&lx, &ly)?;
    Ok(PowerLawFit {
        exponent: line.slope,
        exponent_stderr: line.slope_stderr,
        prefactor: line.intercept.exp(),
        r_squared: line.r_squared,
    })
}

/// `prefactor·f^exponent·exp(sigma·N(0,1))` at each frequency; point i draws
/// from stream `(seed, i)`.
pub fn power_law_samples(exponent: f64, prefactor: f64, freqs: &[f64], sigma_log: f64, seed: u64) -> Vec<(f64, f64)> {
    freqs
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let z: f64 = if sigma_log > 0.0 {
                StandardNormal.sample(&mut rng::stream(seed, i as u64))
            } else {
                0.0
            };
            (f, prefactor * f.powf(exponent) * (sigma_log * z).exp())
        })
        .collect()
}

/// `n` log-spaced points from `fmin` to `fmax` inclusive.
pub fn log_grid(fmin: f64, fmax: f64, n: usize) -> Result<Vec<f64>, LossError> {
    check_frequency(fmin)?;
    check_frequency(fmax)?;
    if !(fmin < fmax) {
        return Err(LossError::Domain(format!("fmin {fmin} must be below fmax {fmax}")));
    }
    if n < 2 {
        return Err(LossError::InsufficientData { needed: 2, got: n });
    }
    let (a, b) = (fmin.ln(), fmax.ln());
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                fmin
            } else if i == n - 1 {
                fmax
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub fq_hz: f64,
    pub q_piezo: f64,
    pub q_tls: f64,
    /// 1/(1/Q_piezo + 1/Q_TLS)
    pub q_total: f64,
}

pub fn budget_table(model: &LossModel, fmin: f64, fmax: f64, npoints: usize) -> Result<Vec<BudgetRow>, LossError> {
    model.validate()?;
    log_grid(fmin, fmax, npoints)?
        .into_iter()
        .map(|f| {
            let qp = q_piezo(model, f)?;
            let qt = q_tls(model, f)?;
            Ok(BudgetRow {
                fq_hz: f,
                q_piezo: qp,
                q_tls: qt,
                q_total: 1.0 / (1.0 / qp + 1.0 / qt),
            })
        })
        .collect()
}

/// Budget table, crossover and the model caveats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub model: LossModel,
    pub rows: Vec<BudgetRow>,
    /// Hz; absent when the model has none.
    pub crossover_hz: Option<f64>,
    pub crossover_note: Option<String>,
    pub assumptions: Vec<String>,
}

pub fn budget_report(model: &LossModel, fmin: f64, fmax: f64, npoints: usize) -> Result<BudgetReport, LossError> {
    let rows = budget_table(model, fmin, fmax, npoints)?;
    let (crossover_hz, crossover_note) = match crossover_frequency(model) {
        Ok(f) => (Some(f), None),
        Err(e @ (LossError::NoCrossover { .. } | LossError::Degenerate)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(BudgetReport {
        model: model.clone(),
        rows,
        crossover_hz,
        crossover_note,
        assumptions: MODEL_ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
    })
}

/// CSV `fq_hz,q_piezo,q_tls,q_total`.
pub fn write_budget_csv<W: Write>(rows: &[BudgetRow], mut out: W) -> Result<(), LossError> {
    let io = |e: std::io::Error| LossError::Io(e.to_string());
    writeln!(out, "fq_hz,q_piezo,q_tls,q_total").map_err(io)?;
    for r in rows {
        writeln!(out, "{:e},{:e},{:e},{:e}", r.fq_hz, r.q_piezo, r.q_tls, r.q_total).map_err(io)?;
    }
    Ok(())
}
