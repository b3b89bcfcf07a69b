// SPDX-License-Identifier: Apache-2.0

//! Fitting Γ1(ω_q) spectra to a background plus one Lorentzian per mode.
//!
//! The fit runs in rate space, Γ1 = 1/T1, with the model
//!
//! Γ1(ω) = Γ1(0) + Σ_k 2g_k²Γ2,k / (Γ2,k² + (ω − ω_m,k)²),  Γ2,k = Γ2,q + κ_k/2
//!
//! and Γ2,q held fixed. Γ1(0), g_k and κ_k are kept non-negative by fitting
//! softplus-transformed variables; each is scaled by its initial guess so the
//! normal equations stay well conditioned across the ~10 orders of magnitude
//! between mode frequencies and linewidths.
//!
//! Frequencies in [`SpectrumData`] and [`SpectrumFitResult`] are Hz; the
//! model itself is evaluated in rad/s.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::lorentzian_rate;
use crate::quantization::{CouplingMode, CouplingSet};
use crate::rng;
use crate::units::{angular_to_hz, hz_to_angular};

pub const MIN_POINTS_FOR_DETECTION: usize = 20;
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.05;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;
pub const DEFAULT_MAX_ITERATIONS: usize = 500;
/// Seeds closer than this many local half-widths are merged.
pub const DEFAULT_MERGE_FACTOR: f64 = 3.0;
/// Convergence needs the column-scaled gradient below GRADIENT_TOL·(1 + cost).
pub const GRADIENT_TOL: f64 = 1e-8;

const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-15;
const RANK_TOL: f64 = 1e-8;
/// Extra accepted steps taken after the gradient test passes, while they
/// still lower the cost.
const POLISH_STEPS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("insufficient modes: need at least {needed}, got {got}")]
    InsufficientModes { needed: usize, got: usize },
    #[error("invalid spectrum: {0}")]
    InvalidData(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("Jacobian is rank deficient in parameter {parameter}")]
    RankDeficient { parameter: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("I/O error: {0}")]
    Io(String),
}

/// One measured point. Frequencies in Hz, times in s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub qubit_frequency: f64,
    pub t1: f64,
    pub t1_uncertainty: Option<f64>,
    pub t2_star: Option<f64>,
}

impl SpectrumPoint {
    pub fn new(qubit_frequency: f64, t1: f64) -> Self {
        Self {
            qubit_frequency,
            t1,
            t1_uncertainty: None,
            t2_star: None,
        }
    }
}

/// T1(f_q) with strictly increasing frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumData {
    points: Vec<SpectrumPoint>,
}

impl SpectrumData {
    pub fn new(points: Vec<SpectrumPoint>) -> Result<Self, FitError> {
        for (i, p) in points.iter().enumerate() {
            if !(p.qubit_frequency.is_finite() && p.qubit_frequency > 0.0) {
                return Err(FitError::InvalidData(format!(
                    "point {i}: frequency must be positive, got {}",
                    p.qubit_frequency
                )));
            }
            if !(p.t1.is_finite() && p.t1 > 0.0) {
                return Err(FitError::InvalidData(format!("point {i}: t1 must be > 0, got {}", p.t1)));
            }
            if let Some(s) = p.t1_uncertainty {
                if !(s.is_finite() && s > 0.0) {
                    return Err(FitError::InvalidData(format!(
                        "point {i}: t1 uncertainty must be > 0, got {s}"
                    )));
                }
            }
            if let Some(t2) = p.t2_star {
                if !(t2.is_finite() && t2 > 0.0) {
                    return Err(FitError::InvalidData(format!("point {i}: t2* must be > 0, got {t2}")));
                }
            }
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[1].qubit_frequency <= w[0].qubit_frequency {
                return Err(FitError::InvalidData(format!(
                    "frequencies must be strictly increasing (point {})",
                    i + 1
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[SpectrumPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.qubit_frequency).collect()
    }

    /// Γ1 = 1/T1, 1/s.
    pub fn gamma1(&self) -> Vec<f64> {
        self.points.iter().map(|p| 1.0 / p.t1).collect()
    }

    /// Mean of 1/T2* over the points that carry it.
    pub fn mean_dephasing_rate(&self) -> Option<f64> {
        let rates: Vec<f64> = self.points.iter().filter_map(|p| p.t2_star).map(|t| 1.0 / t).collect();
        if rates.is_empty() {
            None
        } else {
            Some(rates.iter().sum::<f64>() / rates.len() as f64)
        }
    }

    /// Every T1 multiplied by `c` (uncertainties too).
    pub fn scaled(&self, c: f64) -> Result<Self, FitError> {
        let points = self
            .points
            .iter()
            .map(|p| SpectrumPoint {
                t1: p.t1 * c,
                t1_uncertainty: p.t1_uncertainty.map(|s| s * c),
                ..*p
            })
            .collect();
        Self::new(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// 1/σ_Γ with σ_Γ = σ_T1/T1², from `t1_uncertainty`.
    Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub max_iterations: usize,
    pub merge_factor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Uniform,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            merge_factor: DEFAULT_MERGE_FACTOR,
        }
    }
}

/// Fitted mode, all in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedMode {
    pub f_m: f64,
    pub g: f64,
    pub kappa: f64,
    pub f_m_stderr: f64,
    pub g_stderr: f64,
    pub kappa_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFitResult {
    /// T1(0) = 1/Γ1(0), s.
    pub background_t1: f64,
    pub background_t1_stderr: f64,
    /// Γ1(0), 1/s.
    pub background_rate: f64,
    pub modes: Vec<FittedMode>,
    /// RMS of the weighted residuals.
    pub residual_norm: f64,
    /// ½ Σ r².
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Γ2,q used for the fit, 1/s.
    pub gamma2q: f64,
}

impl SpectrumFitResult {
    /// Fitted Γ1 at `f_hz`.
    pub fn gamma1(&self, f_hz: f64) -> f64 {
        let w = hz_to_angular(f_hz);
        self.background_rate
            + self
                .modes
                .iter()
                .map(|m| {
                    lorentzian_rate(
                        hz_to_angular(m.g),
                        self.gamma2q + 0.5 * hz_to_angular(m.kappa),
                        w - hz_to_angular(m.f_m),
                    )
                })
                .sum::<f64>()
    }

    /// The fitted modes as a coupling set, K² taken on resonance.
    pub fn couplings(&self) -> Result<CouplingSet, FitError> {
        CouplingSet::new(
            self.modes
                .iter()
                .map(|m| CouplingMode::from_hz(m.f_m, m.g, m.kappa))
                .collect(),
        )
        .map_err(|e| FitError::InvalidData(e.to_string()))
    }
}

fn check_len(data: &SpectrumData, needed: usize) -> Result<(), FitError> {
    if data.len() < needed {
        Err(FitError::InsufficientData {
            needed,
            got: data.len(),
        })
    } else {
        Ok(())
    }
}

fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    let n = y.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Indices of local maxima in `y` with their topographic prominence.
fn peaks_with_prominence(y: &[f64]) -> Vec<(usize, f64)> {
    let n = y.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let peak = (i + j) / 2;
                let mut left_min = y[i];
                let mut k = i;
                while k > 0 {
                    k -= 1;
                    if y[k] > y[i] {
                        break;
                    }
                    left_min = left_min.min(y[k]);
                }
                let mut right_min = y[j];
                let mut k = j;
                while k + 1 < n {
                    k += 1;
                    if y[k] > y[i] {
                        break;
                    }
                    right_min = right_min.min(y[k]);
                }
                out.push((peak, y[i] - left_min.max(right_min)));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Peak indices (into `data`) with prominence above
/// `min_prominence·(max Γ1 − min Γ1)` after smoothing with `window` points.
fn detect_peak_indices(data: &SpectrumData, min_prominence: f64, window: usize) -> Vec<usize> {
    let y = moving_average(&data.gamma1(), window);
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Vec::new();
    }
    let threshold = min_prominence * range;
    peaks_with_prominence(&y)
        .into_iter()
        .filter(|&(_, p)| p > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Seed frequencies (Hz) for [`fit_spectrum`], using the default smoothing.
pub fn detect_modes(data: &SpectrumData, min_prominence: f64) -> Result<Vec<f64>, FitError> {
    detect_modes_with(data, min_prominence, DEFAULT_SMOOTHING_WINDOW)
}

pub fn detect_modes_with(data: &SpectrumData, min_prominence: f64, window: usize) -> Result<Vec<f64>, FitError> {
    check_len(data, MIN_POINTS_FOR_DETECTION)?;
    if !(min_prominence.is_finite() && min_prominence >= 0.0) {
        return Err(FitError::Precondition(format!(
            "min_prominence must be >= 0, got {min_prominence}"
        )));
    }
    let f = data.frequencies();
    let omega: Vec<f64> = f.iter().copied().map(hz_to_angular).collect();
    let gamma = data.gamma1();
    let smooth = moving_average(&gamma, window);
    let peaks = detect_peak_indices(data, min_prominence, window);
    Ok(consolidate(&omega, &smooth, background_level(&gamma), &peaks, DEFAULT_MERGE_FACTOR)
        .into_iter()
        .map(|(i, _)| f[i])
        .collect())
}

/// Median spacing of a mode comb and the largest relative departure of any
/// spacing from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsrEstimate {
    pub fsr: f64,
    pub max_deviation: f64,
}

pub fn fsr_estimate(mode_frequencies: &[f64]) -> Result<FsrEstimate, FitError> {
    if mode_frequencies.len() < 3 {
        return Err(FitError::InsufficientModes {
            needed: 3,
            got: mode_frequencies.len(),
        });
    }
    let mut f = mode_frequencies.to_vec();
    f.sort_by(f64::total_cmp);
    let diffs: Vec<f64> = f.windows(2).map(|w| w[1] - w[0]).collect();
    let fsr = median(&diffs);
    if !(fsr > 0.0) {
        return Err(FitError::InvalidData("mode frequencies are not distinct".into()));
    }
    let max_deviation = diffs.iter().map(|d| (d - fsr).abs() / fsr).fold(0.0, f64::max);
    Ok(FsrEstimate { fsr, max_deviation })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((s.len() - 1) as f64 * q).round() as usize;
    s[idx]
}

/// Rough Γ1(0): the 10th percentile of the rates.
fn background_level(gamma: &[f64]) -> f64 {
    quantile(gamma, 0.1).max(f64::MIN_POSITIVE)
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Natural parameters in rad/s and 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ModeParams {
    omega: f64,
    g: f64,
    kappa: f64,
}

/// Maps the unconstrained LM vector to natural parameters.
///
/// Layout: `[u0, (v_1, ug_1, uk_1), (v_2, ...), ...]` with
/// Γ0 = s0·sp(u0), ω_k = c_k + sω_k·v_k, g_k = sg_k·sp(ug_k), κ_k = sκ_k·sp(uk_k).
#[derive(Debug, Clone)]
struct Parametrization {
    background_scale: f64,
    centers: Vec<f64>,
    omega_scales: Vec<f64>,
    g_scales: Vec<f64>,
    kappa_scales: Vec<f64>,
}

impl Parametrization {
    fn from_initial(background: f64, modes: &[ModeParams], widths: &[f64]) -> (Self, DVector<f64>) {
        let p = Self {
            background_scale: background,
            centers: modes.iter().map(|m| m.omega).collect(),
            omega_scales: widths.to_vec(),
            g_scales: modes.iter().map(|m| m.g).collect(),
            kappa_scales: modes.iter().map(|m| m.kappa).collect(),
        };
        let one = softplus_inv(1.0);
        let mut u = DVector::zeros(1 + 3 * modes.len());
        u[0] = one;
        for k in 0..modes.len() {
            u[1 + 3 * k] = 0.0;
            u[2 + 3 * k] = one;
            u[3 + 3 * k] = one;
        }
        (p, u)
    }

    fn n_modes(&self) -> usize {
        self.centers.len()
    }

    fn background(&self, u: &DVector<f64>) -> f64 {
        self.background_scale * softplus(u[0])
    }

    fn mode(&self, u: &DVector<f64>, k: usize) -> ModeParams {
        ModeParams {
            omega: self.centers[k] + self.omega_scales[k] * u[1 + 3 * k],
            g: self.g_scales[k] * softplus(u[2 + 3 * k]),
            kappa: self.kappa_scales[k] * softplus(u[3 + 3 * k]),
        }
    }

    /// dθ/du for every slot.
    fn chain(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(u.len());
        c[0] = self.background_scale * sigmoid(u[0]);
        for k in 0..self.n_modes() {
            c[1 + 3 * k] = self.omega_scales[k];
            c[2 + 3 * k] = self.g_scales[k] * sigmoid(u[2 + 3 * k]);
            c[3 + 3 * k] = self.kappa_scales[k] * sigmoid(u[3 + 3 * k]);
        }
        c
    }

    fn parameter_name(&self, index: usize) -> String {
        if index == 0 {
            return "background".into();
        }
        let k = (index - 1) / 3;
        let what = ["f_m", "g", "kappa"][(index - 1) % 3];
        format!(
            "{what}[{k}] (mode seeded at {:.6} GHz)",
            angular_to_hz(self.centers[k]) * 1e-9
        )
    }
}

/// Residuals and Jacobian for one fit problem.
struct Problem<'a> {
    omega: Vec<f64>,
    gamma: Vec<f64>,
    weights: Vec<f64>,
    gamma2q: f64,
    param: &'a Parametrization,
}

impl Problem<'_> {
    fn residuals(&self, u: &DVector<f64>) -> DVector<f64> {
        let bg = self.param.background(u);
        let modes: Vec<ModeParams> = (0..self.param.n_modes()).map(|k| self.param.mode(u, k)).collect();
        DVector::from_iterator(
            self.omega.len(),
            self.omega.iter().zip(&self.gamma).zip(&self.weights).map(|((&w, &y), &wt)| {
                let model = bg
                    + modes
                        .iter()
                        .map(|m| lorentzian_rate(m.g, self.gamma2q + 0.5 * m.kappa, w - m.omega))
                        .sum::<f64>();
                wt * (model - y)
            }),
        )
    }

    /// ∂r/∂θ in natural parameters.
    fn natural_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n_modes = self.param.n_modes();
        let modes: Vec<ModeParams> = (0..n_modes).map(|k| self.param.mode(u, k)).collect();
        let mut j = DMatrix::zeros(self.omega.len(), 1 + 3 * n_modes);
        for (i, (&w, &wt)) in self.omega.iter().zip(&self.weights).enumerate() {
            j[(i, 0)] = wt;
            for (k, m) in modes.iter().enumerate() {
                let g2 = self.gamma2q + 0.5 * m.kappa;
                let d = w - m.omega;
                let den = g2 * g2 + d * d;
                let den2 = den * den;
                j[(i, 1 + 3 * k)] = wt * 4.0 * m.g * m.g * g2 * d / den2;
                j[(i, 2 + 3 * k)] = wt * 4.0 * m.g * g2 / den;
                j[(i, 3 + 3 * k)] = wt * 0.5 * 2.0 * m.g * m.g * (d * d - g2 * g2) / den2;
            }
        }
        j
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.natural_jacobian(u);
        let c = self.param.chain(u);
        for (col, &s) in c.iter().enumerate() {
            j.column_mut(col).scale_mut(s);
        }
        j
    }

    fn check_rank(&self, u: &DVector<f64>) -> Result<(), FitError> {
        let mut j = self.jacobian(u);
        let norms: Vec<f64> = j.column_iter().map(|c| c.norm()).collect();
        let max = norms.iter().copied().fold(0.0, f64::max);
        for (col, &nrm) in norms.iter().enumerate() {
            if !(nrm > RANK_TOL * max) {
                return Err(FitError::RankDeficient {
                    parameter: self.param.parameter_name(col),
                });
            }
        }
        for (col, &nrm) in norms.iter().enumerate() {
            j.column_mut(col).unscale_mut(nrm);
        }
        let svd = j.svd(false, true);
        let sv = &svd.singular_values;
        let (imin, smin) = sv.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| {
            if s < acc.1 {
                (i, s)
            } else {
                acc
            }
        });
        let smax = sv.iter().copied().fold(0.0, f64::max);
        if smin < RANK_TOL * smax {
            let v_t = svd.v_t.expect("requested V");
            let row = v_t.row(imin);
            let worst = row
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (i, &x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
            return Err(FitError::RankDeficient {
                parameter: self.param.parameter_name(worst.0),
            });
        }
        Ok(())
    }
}

fn cost_of(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

struct LmOutcome {
    u: DVector<f64>,
    cost: f64,
    converged: bool,
    iterations: usize,
}

/// max_k |(Jᵀr)_k| / ‖J_k‖: the gradient in coordinates where every Jacobian
/// column has unit norm, so the test does not depend on parameter units.
fn scaled_gradient(j: &DMatrix<f64>, grad: &DVector<f64>) -> f64 {
    grad.iter()
        .zip(j.column_iter())
        .map(|(g, c)| {
            let n = c.norm();
            if n > 0.0 {
                (g / n).abs()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

fn levenberg_marquardt(problem: &Problem, u0: DVector<f64>, max_iterations: usize) -> LmOutcome {
    let mut u = u0;
    let mut r = problem.residuals(&u);
    let mut cost = cost_of(&r);
    let mut j = problem.jacobian(&u);
    let mut lambda = INITIAL_DAMPING;
    let mut converged = false;
    let mut polish = 0;
    let mut iterations = 0;
    while iterations < max_iterations {
        let grad = j.tr_mul(&r);
        if scaled_gradient(&j, &grad) < GRADIENT_TOL * (1.0 + cost) {
            converged = true;
            if polish >= POLISH_STEPS {
                break;
            }
            polish += 1;
        }
        iterations += 1;
        let a = j.tr_mul(&j);
        let dmax = a.diagonal().amax();
        let mut accepted = false;
        while lambda <= MAX_DAMPING {
            let mut m = a.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += lambda * a[(i, i)].max(1e-12 * dmax);
            }
            if let Some(ch) = m.cholesky() {
                let step = ch.solve(&(-&grad));
                let trial = &u + &step;
                let r_trial = problem.residuals(&trial);
                let c_trial = cost_of(&r_trial);
                if c_trial.is_finite() && c_trial < cost {
                    u = trial;
                    r = r_trial;
                    cost = c_trial;
                    lambda = (lambda / 10.0).max(MIN_DAMPING);
                    accepted = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
        j = problem.jacobian(&u);
    }
    if !converged {
        converged = scaled_gradient(&j, &j.tr_mul(&r)) < GRADIENT_TOL * (1.0 + cost);
    }
    LmOutcome {
        u,
        cost,
        converged,
        iterations,
    }
}

fn weights(data: &SpectrumData, weighting: Weighting, gamma: &[f64]) -> Result<Vec<f64>, FitError> {
    match weighting {
        Weighting::Uniform => {
            let scale = median(gamma);
            Ok(vec![1.0 / scale; gamma.len()])
        }
        Weighting::Uncertainty => data
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| match p.t1_uncertainty {
                Some(s) => Ok(p.t1 * p.t1 / s),
                None => Err(FitError::Precondition(format!(
                    "uncertainty weighting requested but point {i} has no t1 uncertainty"
                ))),
            })
            .collect(),
    }
}

struct Initial {
    background: f64,
    modes: Vec<ModeParams>,
    widths: Vec<f64>,
}

/// Half width at half maximum around index `i`, in rad/s. Walks outward on
/// the smoothed curve until it falls to half height; noise wiggles on the way
/// are ignored, but climbing above the starting height (a neighbouring,
/// taller feature) ends the walk there.
fn half_width(omega: &[f64], y: &[f64], i: usize, background: f64) -> f64 {
    let half = background + 0.5 * (y[i] - background);
    let n = y.len();
    let walk = |dir: isize| -> Option<f64> {
        let mut k = i as isize;
        loop {
            let next = k + dir;
            if next < 0 || next >= n as isize {
                return None;
            }
            let (a, b) = (k as usize, next as usize);
            if y[b] <= half {
                let t = (y[a] - half) / (y[a] - y[b]);
                return Some((omega[a] + t * (omega[b] - omega[a]) - omega[i]).abs());
            }
            if y[b] > y[i] {
                return Some((omega[a] - omega[i]).abs());
            }
            k = next;
        }
    };
    let step = if n > 1 {
        (omega[n - 1] - omega[0]) / (n - 1) as f64
    } else {
        1.0
    };
    let w = match (walk(-1), walk(1)) {
        (Some(l), Some(r)) => 0.5 * (l + r),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => 0.5 * (omega[n - 1] - omega[0]),
    };
    w.max(0.5 * step)
}

fn nearest_index(omega: &[f64], w: f64) -> usize {
    match omega.binary_search_by(|x| x.total_cmp(&w)) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i >= omega.len() => omega.len() - 1,
        Err(i) => {
            if (omega[i] - w).abs() < (w - omega[i - 1]).abs() {
                i
            } else {
                i - 1
            }
        }
    }
}

/// Sorts peak indices and merges any pair closer than `factor` times the
/// larger of their half widths, keeping the taller one. Returns each
/// survivor with its half width (rad/s).
fn consolidate(omega: &[f64], smooth: &[f64], background: f64, peaks: &[usize], factor: f64) -> Vec<(usize, f64)> {
    let mut seeds: Vec<(usize, f64)> = peaks
        .iter()
        .map(|&i| (i, half_width(omega, smooth, i, background)))
        .collect();
    seeds.sort_by_key(|s| s.0);
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for s in seeds {
        if let Some(last) = merged.last_mut() {
            let sep = omega[s.0] - omega[last.0];
            if sep < factor * last.1.max(s.1) {
                if smooth[s.0] > smooth[last.0] {
                    *last = s;
                }
                continue;
            }
        }
        merged.push(s);
    }
    merged
}

fn initial_guess(
    data: &SpectrumData,
    seeds_hz: &[f64],
    gamma2q: f64,
    merge_factor: f64,
) -> Initial {
    let omega: Vec<f64> = data.frequencies().into_iter().map(hz_to_angular).collect();
    let gamma = data.gamma1();
    let smooth = moving_average(&gamma, DEFAULT_SMOOTHING_WINDOW);
    let background = background_level(&gamma);

    let idx: Vec<usize> = seeds_hz
        .iter()
        .map(|&f| nearest_index(&omega, hz_to_angular(f)))
        .collect();
    let merged = consolidate(&omega, &smooth, background, &idx, merge_factor);

    let mut modes = Vec::with_capacity(merged.len());
    let mut widths = Vec::with_capacity(merged.len());
    for (i, hw) in merged {
        let lo = i.saturating_sub(DEFAULT_SMOOTHING_WINDOW / 2);
        let hi = (i + DEFAULT_SMOOTHING_WINDOW / 2 + 1).min(gamma.len());
        let peak = gamma[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let height = (peak - background).max(1e-3 * background);
        let g2 = hw;
        let kappa = (2.0 * (g2 - gamma2q)).max(0.2 * g2);
        let g = (0.5 * height * g2).sqrt();
        modes.push(ModeParams {
            omega: omega[i],
            g,
            kappa,
        });
        widths.push(g2);
    }
    Initial {
        background,
        modes,
        widths,
    }
}

fn covariance(problem: &Problem, u: &DVector<f64>, cost: f64) -> DMatrix<f64> {
    let jn = problem.natural_jacobian(u);
    let n = jn.nrows();
    let p = jn.ncols();
    let dof = n.saturating_sub(p).max(1) as f64;
    let s2 = 2.0 * cost / dof;
    let jtj = jn.tr_mul(&jn);
    let inv = jtj.clone().try_inverse().unwrap_or_else(|| {
        jtj.pseudo_inverse(1e-15)
            .unwrap_or_else(|_| DMatrix::from_element(p, p, f64::NAN))
    });
    inv * s2
}

fn finish(
    problem: &Problem,
    out: LmOutcome,
    n_points: usize,
    gamma2q: f64,
) -> SpectrumFitResult {
    let param = problem.param;
    let cov = covariance(problem, &out.u, out.cost);
    let sd = |i: usize| {
        let v = cov[(i, i)];
        if v.is_finite() && v > 0.0 {
            v.sqrt()
        } else {
            0.0
        }
    };
    let bg = param.background(&out.u);
    let mut modes: Vec<FittedMode> = (0..param.n_modes())
        .map(|k| {
            let m = param.mode(&out.u, k);
            FittedMode {
                f_m: angular_to_hz(m.omega),
                g: angular_to_hz(m.g),
                kappa: angular_to_hz(m.kappa),
                f_m_stderr: angular_to_hz(sd(1 + 3 * k)),
                g_stderr: angular_to_hz(sd(2 + 3 * k)),
                kappa_stderr: angular_to_hz(sd(3 + 3 * k)),
            }
        })
        .collect();
    modes.sort_by(|a, b| a.f_m.total_cmp(&b.f_m));
    SpectrumFitResult {
        background_t1: 1.0 / bg,
        background_t1_stderr: sd(0) / (bg * bg),
        background_rate: bg,
        modes,
        residual_norm: (2.0 * out.cost / n_points as f64).sqrt(),
        cost: out.cost,
        converged: out.converged,
        iterations: out.iterations,
        gamma2q,
    }
}

fn check_gamma2q(gamma2q: f64) -> Result<(), FitError> {
    if gamma2q.is_finite() && gamma2q >= 0.0 {
        Ok(())
    } else {
        Err(FitError::Precondition(format!("gamma2q must be >= 0, got {gamma2q}")))
    }
}

fn run(
    data: &SpectrumData,
    init: Initial,
    gamma2q: f64,
    opts: &FitOptions,
) -> Result<SpectrumFitResult, FitError> {
    let gamma = data.gamma1();
    let p = 1 + 3 * init.modes.len();
    if data.len() <= p {
        return Err(FitError::InsufficientData {
            needed: p + 1,
            got: data.len(),
        });
    }
    let (param, u0) = Parametrization::from_initial(init.background, &init.modes, &init.widths);
    let problem = Problem {
        omega: data.frequencies().into_iter().map(hz_to_angular).collect(),
        weights: weights(data, opts.weighting, &gamma)?,
        gamma,
        gamma2q,
        param: &param,
    };
    problem.check_rank(&u0)?;
    let out = levenberg_marquardt(&problem, u0, opts.max_iterations);
    Ok(finish(&problem, out, data.len(), gamma2q))
}

/// Weighted LM fit of the Lorentzian-sum model, seeded at `seeds` (Hz).
///
/// Non-convergence is reported through `converged`, not as an error.
pub fn fit_spectrum(
    data: &SpectrumData,
    seeds: &[f64],
    gamma2q: f64,
    opts: &FitOptions,
) -> Result<SpectrumFitResult, FitError> {
    if seeds.is_empty() {
        return Err(FitError::Precondition("at least one mode seed is required".into()));
    }
    check_gamma2q(gamma2q)?;
    check_len(data, 2)?;
    let init = initial_guess(data, seeds, gamma2q, opts.merge_factor);
    run(data, init, gamma2q, opts)
}

/// Restarts the fit from a previous result's parameters, without merging.
pub fn refit_from(
    data: &SpectrumData,
    previous: &SpectrumFitResult,
    opts: &FitOptions,
) -> Result<SpectrumFitResult, FitError> {
    if previous.modes.is_empty() {
        return background_only(data, previous.gamma2q, opts);
    }
    check_gamma2q(previous.gamma2q)?;
    let init = Initial {
        background: previous.background_rate,
        modes: previous
            .modes
            .iter()
            .map(|m| ModeParams {
                omega: hz_to_angular(m.f_m),
                g: hz_to_angular(m.g),
                kappa: hz_to_angular(m.kappa),
            })
            .collect(),
        widths: previous
            .modes
            .iter()
            .map(|m| previous.gamma2q + 0.5 * hz_to_angular(m.kappa))
            .collect(),
    };
    run(data, init, previous.gamma2q, opts)
}

/// Fit with no modes: Γ1(0) is the weighted mean rate.
pub fn background_only(
    data: &SpectrumData,
    gamma2q: f64,
    opts: &FitOptions,
) -> Result<SpectrumFitResult, FitError> {
    check_gamma2q(gamma2q)?;
    check_len(data, 1)?;
    let gamma = data.gamma1();
    let w = weights(data, opts.weighting, &gamma)?;
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let mean = gamma.iter().zip(&w).map(|(y, x)| y * x * x).sum::<f64>() / sw2;
    let cost = 0.5
        * gamma
            .iter()
            .zip(&w)
            .map(|(y, x)| (x * (mean - y)).powi(2))
            .sum::<f64>();
    let n = data.len() as f64;
    let var = if n > 1.0 { 2.0 * cost / (n - 1.0) / sw2 } else { 0.0 };
    Ok(SpectrumFitResult {
        background_t1: 1.0 / mean,
        background_t1_stderr: var.sqrt() / (mean * mean),
        background_rate: mean,
        modes: Vec::new(),
        residual_norm: (2.0 * cost / n).sqrt(),
        cost,
        converged: true,
        iterations: 0,
        gamma2q,
    })
}

/// Detects modes and fits them; with no modes found, falls back to
/// [`background_only`].
pub fn detect_and_fit(
    data: &SpectrumData,
    min_prominence: f64,
    gamma2q: f64,
    opts: &FitOptions,
) -> Result<SpectrumFitResult, FitError> {
    let seeds = detect_modes(data, min_prominence)?;
    if seeds.is_empty() {
        background_only(data, gamma2q, opts)
    } else {
        fit_spectrum(data, &seeds, gamma2q, opts)
    }
}

/// Weighted residuals of `result` against `data`, in data order.
pub fn residuals(data: &SpectrumData, result: &SpectrumFitResult, weighting: Weighting) -> Result<Vec<f64>, FitError> {
    let gamma = data.gamma1();
    let w = weights(data, weighting, &gamma)?;
    Ok(data
        .points()
        .iter()
        .zip(&gamma)
        .zip(&w)
        .map(|((p, y), x)| x * (result.gamma1(p.qubit_frequency) - y))
        .collect())
}

/// Σ(e_i − e_{i−1})² / Σ e_i².
pub fn durbin_watson(residuals: &[f64]) -> f64 {
    let num: f64 = residuals.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let den: f64 = residuals.iter().map(|e| e * e).sum();
    num / den
}

/// Multiplicative Gaussian noise on T1: T1·(1 + relative·N(0,1)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub relative: f64,
    pub seed: u64,
}

/// Γ1 spectrum from known couplings on `grid_hz`, optionally noisy.
/// Point i draws from stream `(seed, i)`.
pub fn synthetic_spectrum(
    couplings: &CouplingSet,
    background_rate: f64,
    gamma2q: f64,
    grid_hz: &[f64],
    noise: Option<NoiseSpec>,
) -> Result<SpectrumData, FitError> {
    check_gamma2q(gamma2q)?;
    if !(background_rate.is_finite() && background_rate >= 0.0) {
        return Err(FitError::Precondition(format!(
            "background rate must be >= 0, got {background_rate}"
        )));
    }
    let points = grid_hz
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let gamma = crate::dynamics::gamma1_at(hz_to_angular(f), background_rate, gamma2q, couplings);
            let t1_true = 1.0 / gamma;
            let (t1, sigma) = match noise {
                None => (t1_true, None),
                Some(ns) => {
                    let mut rng = rng::stream(ns.seed, i as u64);
                    let t1 = loop {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let t = t1_true * (1.0 + ns.relative * z);
                        if t > 0.0 {
                            break t;
                        }
                    };
                    (t1, Some(ns.relative * t1_true).filter(|s| *s > 0.0))
                }
            };
            SpectrumPoint {
                qubit_frequency: f,
                t1,
                t1_uncertainty: sigma,
                t2_star: (gamma2q > 0.0).then(|| 1.0 / gamma2q),
            }
        })
        .collect();
    SpectrumData::new(points)
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    fq_hz: f64,
    t1_s: f64,
    #[serde(default)]
    t1_err_s: Option<f64>,
    #[serde(default)]
    t2star_s: Option<f64>,
}

/// Reads `fq_hz,t1_s[,t1_err_s][,t2star_s]`; lines starting with `#` are
/// comments.
pub fn read_spectrum_csv<R: Read>(input: R) -> Result<SpectrumData, FitError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(&e, 1))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(FitError::Parse {
            line: 1,
            message: "empty file: expected header fq_hz,t1_s[,t1_err_s]".into(),
        });
    }
    for required in ["fq_hz", "t1_s"] {
        if !headers.iter().any(|h| h == required) {
            return Err(FitError::Parse {
                line: rdr.position().line().max(1),
                message: format!("missing column {required}"),
            });
        }
    }
    let mut points = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(&e, 0))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: CsvRow = rec.deserialize(Some(&headers)).map_err(|e| FitError::Parse {
            line,
            message: e.to_string(),
        })?;
        points.push(SpectrumPoint {
            qubit_frequency: row.fq_hz,
            t1: row.t1_s,
            t1_uncertainty: row.t1_err_s,
            t2_star: row.t2star_s,
        });
        lines.push(line);
    }
    if points.is_empty() {
        return Err(FitError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    SpectrumData::new(points.clone()).map_err(|e| {
        // point the user at the offending row
        let idx = match &e {
            FitError::InvalidData(msg) => msg
                .split(|c: char| !c.is_ascii_digit())
                .find(|s| !s.is_empty())
                .and_then(|s| s.parse::<usize>().ok()),
            _ => None,
        };
        FitError::Parse {
            line: idx.and_then(|i| lines.get(i).copied()).unwrap_or(0),
            message: e.to_string(),
        }
    })
}

fn csv_error(e: &csv::Error, fallback: u64) -> FitError {
    FitError::Parse {
        line: e.position().map(|p| p.line()).unwrap_or(fallback),
        message: e.to_string(),
    }
}

/// Writes `fq_hz,t1_s,t1_err_s,t2star_s` (empty cells for absent values).
pub fn write_spectrum_csv<W: Write>(data: &SpectrumData, mut out: W) -> Result<(), FitError> {
    let io = |e: std::io::Error| FitError::Io(e.to_string());
    writeln!(out, "fq_hz,t1_s,t1_err_s,t2star_s").map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for p in data.points() {
        writeln!(
            out,
            "{:e},{:e},{},{}",
            p.qubit_frequency,
            p.t1,
            opt(p.t1_uncertainty),
            opt(p.t2_star)
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Plot-ready `fq_hz,gamma1_data_per_s,gamma1_fit_per_s,t1_fit_s`.
pub fn write_fit_curve_csv<W: Write>(
    data: &SpectrumData,
    result: &SpectrumFitResult,
    mut out: W,
) -> Result<(), FitError> {
    let io = |e: std::io::Error| FitError::Io(e.to_string());
    writeln!(out, "fq_hz,gamma1_data_per_s,gamma1_fit_per_s,t1_fit_s").map_err(io)?;
    for p in data.points() {
        let fit = result.gamma1(p.qubit_frequency);
        writeln!(out, "{:e},{:e},{:e},{:e}", p.qubit_frequency, 1.0 / p.t1, fit, 1.0 / fit).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn three_modes() -> CouplingSet {
        CouplingSet::new(vec![
            CouplingMode::from_hz(3.10e9, 100e3, 2.0e6),
            CouplingMode::from_hz(3.12e9, 150e3, 1.0e6),
            CouplingMode::from_hz(3.14e9, 80e3, 3.0e6),
        ])
        .unwrap()
    }

    const BG: f64 = 5e4;
    const G2Q: f64 = 1e5;

    fn clean() -> SpectrumData {
        synthetic_spectrum(&three_modes(), BG, G2Q, &grid(3.08e9, 3.16e9, 4001), None).unwrap()
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-6, 0.3, 1.0, 7.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() <= 1e-12 * y.max(1.0));
        }
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let data = clean();
        let init = initial_guess(&data, &[3.1e9, 3.12e9, 3.14e9], G2Q, 3.0);
        let (param, u) = Parametrization::from_initial(init.background, &init.modes, &init.widths);
        let gamma = data.gamma1();
        let problem = Problem {
            omega: data.frequencies().into_iter().map(hz_to_angular).collect(),
            weights: weights(&data, Weighting::Uniform, &gamma).unwrap(),
            gamma,
            gamma2q: G2Q,
            param: &param,
        };
        let j = problem.jacobian(&u);
        for col in 0..u.len() {
            let h = 1e-6;
            let mut up = u.clone();
            up[col] += h;
            let mut dn = u.clone();
            dn[col] -= h;
            let fd = (problem.residuals(&up) - problem.residuals(&dn)) / (2.0 * h);
            let err = (&fd - j.column(col)).amax();
            assert!(err <= 1e-5 * fd.amax().max(1e-12), "column {col}: {err}");
        }
    }

    #[test]
    fn flat_spectrum_has_no_modes() {
        let pts = grid(3e9, 3.1e9, 50).into_iter().map(|f| SpectrumPoint::new(f, 2e-5)).collect();
        let data = SpectrumData::new(pts).unwrap();
        assert!(detect_modes(&data, 0.05).unwrap().is_empty());
    }

    #[test]
    fn too_few_points_for_detection() {
        let pts = grid(3e9, 3.1e9, 19).into_iter().map(|f| SpectrumPoint::new(f, 2e-5)).collect();
        let data = SpectrumData::new(pts).unwrap();
        assert_eq!(
            detect_modes(&data, 0.05),
            Err(FitError::InsufficientData { needed: 20, got: 19 })
        );
    }

    #[test]
    fn single_lorentzian_detected_at_center() {
        let set = CouplingSet::new(vec![CouplingMode::from_hz(3.2e9, 100e3, 2.25e6)]).unwrap();
        let g = grid(3.19e9, 3.21e9, 2001);
        let data = synthetic_spectrum(&set, BG, 0.0, &g, None).unwrap();
        let found = detect_modes(&data, 0.05).unwrap();
        assert_eq!(found.len(), 1);
        assert!((found[0] - 3.2e9).abs() <= g[1] - g[0]);
    }

    #[test]
    fn noise_free_round_trip() {
        let data = clean();
        let seeds = detect_modes(&data, 0.05).unwrap();
        assert_eq!(seeds.len(), 3);
        let fit = fit_spectrum(&data, &seeds, G2Q, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.background_rate / BG - 1.0).abs() < 1e-3);
        for (m, t) in fit.modes.iter().zip(three_modes().modes()) {
            assert!((m.f_m / angular_to_hz(t.mode_frequency) - 1.0).abs() < 1e-9);
            assert!((m.g / angular_to_hz(t.coupling) - 1.0).abs() < 1e-3);
            assert!((m.kappa / angular_to_hz(t.linewidth) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn residuals_are_white_on_noise_free_fit() {
        let data = clean();
        let seeds = detect_modes(&data, 0.05).unwrap();
        let fit = fit_spectrum(&data, &seeds, G2Q, &FitOptions::default()).unwrap();
        let r = residuals(&data, &fit, Weighting::Uniform).unwrap();
        let dw = durbin_watson(&r);
        assert!((1.5..=2.5).contains(&dw), "Durbin-Watson {dw}");
    }

    #[test]
    fn scale_equivariance() {
        let data = clean();
        let seeds = detect_modes(&data, 0.05).unwrap();
        let opts = FitOptions::default();
        let a = fit_spectrum(&data, &seeds, G2Q, &opts).unwrap();
        let c = 2.5;
        let b = fit_spectrum(&data.scaled(c).unwrap(), &seeds, G2Q, &opts).unwrap();
        assert!((b.background_rate * c / a.background_rate - 1.0).abs() < 1e-6);
        for (ma, mb) in a.modes.iter().zip(&b.modes) {
            assert!((ma.f_m - mb.f_m).abs() < 1e-6 * ma.kappa);
            assert!((mb.g * c.sqrt() / ma.g - 1.0).abs() < 1e-6);
            assert!((mb.kappa / ma.kappa - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn refit_is_idempotent() {
        let g = grid(3.08e9, 3.16e9, 4001);
        let noise = NoiseSpec { relative: 0.05, seed: 11 };
        let data = synthetic_spectrum(&three_modes(), BG, G2Q, &g, Some(noise)).unwrap();
        let seeds = detect_modes(&data, 0.05).unwrap();
        let opts = FitOptions::default();
        let first = fit_spectrum(&data, &seeds, G2Q, &opts).unwrap();
        assert!(first.converged);
        let second = refit_from(&data, &first, &opts).unwrap();
        assert!(((second.cost - first.cost) / first.cost).abs() < 1e-12);
    }

    #[test]
    fn empty_seeds_rejected() {
        assert!(matches!(
            fit_spectrum(&clean(), &[], G2Q, &FitOptions::default()),
            Err(FitError::Precondition(_))
        ));
    }

    #[test]
    fn duplicate_seeds_are_merged() {
        let data = clean();
        let fit = fit_spectrum(&data, &[3.1e9, 3.1e9 + 1e3, 3.12e9, 3.14e9], G2Q, &FitOptions::default()).unwrap();
        assert_eq!(fit.modes.len(), 3);
    }

    #[test]
    fn coincident_modes_without_merging_are_rank_deficient() {
        let data = clean();
        let opts = FitOptions {
            merge_factor: 0.0,
            ..FitOptions::default()
        };
        match fit_spectrum(&data, &[3.1e9, 3.1e9, 3.12e9, 3.14e9], G2Q, &opts) {
            Err(FitError::RankDeficient { parameter }) => assert!(parameter.contains("[0]") || parameter.contains("[1]")),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn fsr_of_regular_comb() {
        let comb: Vec<f64> = (0..8).map(|k| 3e9 + 3e6 * k as f64).collect();
        let est = fsr_estimate(&comb).unwrap();
        assert!((est.fsr - 3e6).abs() < 1e-3);
        assert!(est.max_deviation < 1e-9);
    }

    #[test]
    fn fsr_flags_missing_tooth() {
        let comb: Vec<f64> = (0..8).filter(|&k| k != 4).map(|k| 3e9 + 3e6 * k as f64).collect();
        assert!(fsr_estimate(&comb).unwrap().max_deviation > 0.5);
        assert!(matches!(fsr_estimate(&comb[..2]), Err(FitError::InsufficientModes { .. })));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let data = clean();
        let mut buf = Vec::new();
        write_spectrum_csv(&data, &mut buf).unwrap();
        let back = read_spectrum_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), data.len());
        assert!(matches!(read_spectrum_csv("".as_bytes()), Err(FitError::Parse { line: 1, .. })));
        let bad = "# comment\nfq_hz,t1_s\n3e9,1e-5\n3.1e9,oops\n";
        match read_spectrum_csv(bad.as_bytes()) {
            Err(FitError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let unsorted = "fq_hz,t1_s\n3e9,1e-5\n2e9,1e-5\n";
        match read_spectrum_csv(unsorted.as_bytes()) {
            Err(FitError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn noise_is_reproducible() {
        let g = grid(3.08e9, 3.16e9, 200);
        let n = Some(NoiseSpec { relative: 0.05, seed: 3 });
        let a = synthetic_spectrum(&three_modes(), BG, G2Q, &g, n).unwrap();
        let b = synthetic_spectrum(&three_modes(), BG, G2Q, &g, n).unwrap();
        assert_eq!(a, b);
    }
}
