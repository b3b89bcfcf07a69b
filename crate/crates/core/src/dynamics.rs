// SPDX-License-Identifier: Apache-2.0

//! Qubit + one mechanical mode in the single-excitation manifold.
//!
//! Basis: |1⟩ = |g,0⟩, |2⟩ = |e,0⟩, |3⟩ = |g,1⟩. The master equation is
//! integrated in the frame rotating at ω_q, where the only Hamiltonian terms
//! are the detuning Δ = ω_m − ω_q on |3⟩ and the exchange −g(|2⟩⟨3| + h.c.).
//!
//! The generator is linear and time independent, so one classical RK4 step
//! of size h is itself a fixed 9×9 linear map. `evolve` builds that map once,
//! accepts h by step halving, and composes it up to each output sample by
//! repeated squaring. The result is the fixed-step RK4 solution at the sample
//! times without paying for every step individually.
//!
//! Multimode relaxation is the analytic Lorentzian sum in
//! [`gamma1_spectrum`]; only single modes are integrated.

use std::io::Write;

use nalgebra::{Matrix3, SMatrix, SVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::quantization::{CouplingSet, QubitParams};
use crate::units::angular_to_hz;

pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const EIGENVALUE_TOL: f64 = 1e-9;
/// Accepted local error of one RK4 step, max-norm of the step-doubling estimate.
pub const STEP_ERROR_TOL: f64 = 1e-10;
/// Population window, relative to ρ22(0), used by [`effective_decay_rate`].
pub const DECAY_WINDOW: (f64, f64) = (0.05, 0.95);

const DEFAULT_SAMPLES: usize = 200;
const MAX_HALVINGS: usize = 60;

type C = Complex64;
type Propagator = SMatrix<C, 9, 9>;
type Vec9 = SVector<C, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("density matrix invalid: {0}")]
    InvalidState(String),
    #[error("invalid dynamics config: {0}")]
    InvalidConfig(String),
    #[error("integration diverged at t = {time:e} s: {reason}")]
    IntegrationDiverged { time: f64, reason: String },
    #[error("decay fit failed: {0}")]
    FitFailed(String),
}

/// ρ over {|g,0⟩, |e,0⟩, |g,1⟩}. Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix3(Matrix3<C>);

impl DensityMatrix3 {
    pub fn new(m: Matrix3<C>) -> Result<Self, DynamicsError> {
        check_state(&m).map_err(DynamicsError::InvalidState)?;
        Ok(Self(m))
    }

    /// |i⟩⟨i| for i ∈ {1, 2, 3}.
    pub fn basis(i: usize) -> Self {
        assert!((1..=3).contains(&i), "basis index must be 1, 2 or 3");
        let mut m = Matrix3::zeros();
        m[(i - 1, i - 1)] = C::new(1.0, 0.0);
        Self(m)
    }

    /// |g,0⟩
    pub fn ground() -> Self {
        Self::basis(1)
    }

    /// |e,0⟩
    pub fn excited() -> Self {
        Self::basis(2)
    }

    /// |g,1⟩
    pub fn phonon() -> Self {
        Self::basis(3)
    }

    pub fn matrix(&self) -> &Matrix3<C> {
        &self.0
    }

    /// ρ_ii for i ∈ {1, 2, 3}.
    pub fn population(&self, i: usize) -> f64 {
        self.0[(i - 1, i - 1)].re
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }
}

fn hermiticity_error(m: &Matrix3<C>) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn min_eigenvalue(m: &Matrix3<C>) -> f64 {
    let h = (m + m.adjoint()) * C::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

fn check_state(m: &Matrix3<C>) -> Result<(), String> {
    if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err("non-finite entry".into());
    }
    let herm = hermiticity_error(m);
    if herm > HERMITICITY_TOL {
        return Err(format!("not Hermitian (deviation {herm:e})"));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(format!("trace {tr} differs from 1"));
    }
    let ev = min_eigenvalue(m);
    if ev < -EIGENVALUE_TOL {
        return Err(format!("negative eigenvalue {ev:e}"));
    }
    Ok(())
}

/// Rates and frequencies in rad/s or 1/s; times in s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsConfig {
    /// Δ = ω_m − ω_q
    pub detuning: f64,
    /// g_m
    pub coupling: f64,
    /// Γ1,q(0)
    pub nominal_decay: f64,
    /// Γφ,q
    pub pure_dephasing: f64,
    /// κ_m
    pub mode_linewidth: f64,
    pub time_step: f64,
    pub total_time: f64,
    /// Number of output intervals; the trajectory has `samples + 1` states.
    pub samples: usize,
}

impl DynamicsConfig {
    /// Config with the default RK4 step for these rates.
    pub fn new(
        detuning: f64,
        coupling: f64,
        nominal_decay: f64,
        pure_dephasing: f64,
        mode_linewidth: f64,
        total_time: f64,
    ) -> Self {
        let mut cfg = Self {
            detuning,
            coupling,
            nominal_decay,
            pure_dephasing,
            mode_linewidth,
            time_step: 0.0,
            total_time,
            samples: DEFAULT_SAMPLES,
        };
        cfg.time_step = cfg.default_time_step();
        cfg
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    /// min(1/(50·max rate), 1/(50·g), 1/(50·|Δ|)), capped at total_time/100.
    pub fn default_time_step(&self) -> f64 {
        let max_rate = self
            .nominal_decay
            .max(self.pure_dephasing)
            .max(self.mode_linewidth);
        let inv = |x: f64| if x > 0.0 { 1.0 / (50.0 * x) } else { f64::INFINITY };
        inv(max_rate)
            .min(inv(self.coupling.abs()))
            .min(inv(self.detuning.abs()))
            .min(self.total_time / 100.0)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let rates = [
            ("coupling", self.coupling),
            ("nominal_decay", self.nominal_decay),
            ("pure_dephasing", self.pure_dephasing),
            ("mode_linewidth", self.mode_linewidth),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DynamicsError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.detuning.is_finite() {
            return Err(DynamicsError::InvalidConfig("detuning must be finite".into()));
        }
        if !(self.time_step.is_finite() && self.time_step > 0.0) {
            return Err(DynamicsError::InvalidConfig(format!(
                "time_step must be > 0, got {}",
                self.time_step
            )));
        }
        if !(self.total_time.is_finite() && self.total_time >= self.time_step) {
            return Err(DynamicsError::InvalidConfig(format!(
                "total_time {} must be >= time_step {}",
                self.total_time, self.time_step
            )));
        }
        if self.samples == 0 {
            return Err(DynamicsError::InvalidConfig("samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// dρ/dt for an arbitrary 3×3 matrix (the map is linear).
fn rhs(r: &Matrix3<C>, cfg: &DynamicsConfig) -> Matrix3<C> {
    let g = C::new(cfg.coupling, 0.0);
    let d = C::new(cfg.detuning, 0.0);
    let p = |i: usize, j: usize| r[(i - 1, j - 1)];
    // ρ_ij* is written as ρ_ji so the map stays complex-linear off the
    // Hermitian subspace; on density matrices the two forms coincide
    let coherent = Matrix3::new(
        C::new(0.0, 0.0),
        g * p(1, 3),
        g * p(1, 2) - d * p(1, 3),
        -g * p(3, 1),
        -g * (p(3, 2) - p(2, 3)),
        -g * (p(3, 3) - p(2, 2)) - d * p(2, 3),
        -g * p(2, 1) + d * p(3, 1),
        -g * (p(2, 2) - p(3, 3)) + d * p(3, 2),
        -g * (p(2, 3) - p(3, 2)),
    );
    let zero = C::new(0.0, 0.0);
    let two = C::new(2.0, 0.0);
    let qubit_decay = Matrix3::new(
        -two * p(2, 2),
        p(1, 2),
        zero,
        p(2, 1),
        two * p(2, 2),
        p(2, 3),
        zero,
        p(3, 2),
        zero,
    );
    let dephasing = Matrix3::new(zero, p(1, 2), zero, p(2, 1), zero, p(2, 3), zero, p(3, 2), zero);
    let mode_decay = Matrix3::new(
        -two * p(3, 3),
        zero,
        p(1, 3),
        zero,
        zero,
        p(2, 3),
        p(3, 1),
        p(3, 2),
        two * p(3, 3),
    );
    coherent * C::new(0.0, -1.0)
        - qubit_decay * C::new(0.5 * cfg.nominal_decay, 0.0)
        - dephasing * C::new(cfg.pure_dephasing, 0.0)
        - mode_decay * C::new(0.5 * cfg.mode_linewidth, 0.0)
}

/// dρ/dt of the single-excitation master equation in the interaction frame.
pub fn lindblad_rhs(rho: &DensityMatrix3, cfg: &DynamicsConfig) -> Matrix3<C> {
    rhs(&rho.0, cfg)
}

fn rk4_step(r: &Matrix3<C>, cfg: &DynamicsConfig, h: f64) -> Matrix3<C> {
    let hc = C::new(h, 0.0);
    let half = C::new(0.5 * h, 0.0);
    let k1 = rhs(r, cfg);
    let k2 = rhs(&(r + k1 * half), cfg);
    let k3 = rhs(&(r + k2 * half), cfg);
    let k4 = rhs(&(r + k3 * hc), cfg);
    r + (k1 + k2 * C::new(2.0, 0.0) + k3 * C::new(2.0, 0.0) + k4) * C::new(h / 6.0, 0.0)
}

fn vectorize(m: &Matrix3<C>) -> Vec9 {
    Vec9::from_fn(|k, _| m[(k / 3, k % 3)])
}

fn unvectorize(v: &Vec9) -> Matrix3<C> {
    Matrix3::from_fn(|i, j| v[3 * i + j])
}

/// One RK4 step of size h as a linear map on vec(ρ).
fn step_propagator(cfg: &DynamicsConfig, h: f64) -> Propagator {
    let mut p = Propagator::zeros();
    for k in 0..9 {
        let mut e = Matrix3::zeros();
        e[(k / 3, k % 3)] = C::new(1.0, 0.0);
        p.set_column(k, &vectorize(&rk4_step(&e, cfg, h)));
    }
    p
}

fn max_abs(p: &Propagator) -> f64 {
    p.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Spreads each column's trace defect evenly over the diagonal rows so that
/// tr(unvec(P v)) = tr(unvec(v)) holds to rounding.
fn restore_trace(p: &mut Propagator) {
    let one = C::new(1.0, 0.0);
    for k in 0..9 {
        let target = if k % 4 == 0 { one } else { C::new(0.0, 0.0) };
        let defect = (target - (p[(0, k)] + p[(4, k)] + p[(8, k)])) / C::new(3.0, 0.0);
        for r in [0, 4, 8] {
            p[(r, k)] += defect;
        }
    }
}

fn matrix_power(p: &Propagator, mut n: u64) -> Propagator {
    let mut result = Propagator::identity();
    let mut base = *p;
    restore_trace(&mut base);
    while n > 0 {
        if n & 1 == 1 {
            result = base * result;
            restore_trace(&mut result);
        }
        n >>= 1;
        if n > 0 {
            base = base * base;
            restore_trace(&mut base);
        }
    }
    result
}

/// Sampled solution of the master equation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix3>,
    /// RK4 step actually used after step-halving acceptance.
    pub time_step: f64,
    /// Total number of RK4 steps represented.
    pub steps: u64,
}

impl Trajectory {
    pub fn population(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.population(i)).collect()
    }

    /// CSV with header `t_s,rho22,rho33,rho11`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_s,rho22,rho33,rho11")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(out, "{t:e},{:e},{:e},{:e}", s.population(2), s.population(3), s.population(1))?;
        }
        Ok(())
    }
}

/// Fixed-step RK4 integration from `rho0` over `[0, total_time]`.
pub fn evolve(rho0: &DensityMatrix3, cfg: &DynamicsConfig) -> Result<Trajectory, DynamicsError> {
    cfg.validate()?;
    let sample_dt = cfg.total_time / cfg.samples as f64;

    let mut h = cfg.time_step.min(sample_dt);
    let mut accepted = false;
    for _ in 0..MAX_HALVINGS {
        let full = step_propagator(cfg, h);
        let half = step_propagator(cfg, 0.5 * h);
        if max_abs(&(full - half * half)) <= STEP_ERROR_TOL {
            accepted = true;
            break;
        }
        h *= 0.5;
    }
    if !accepted {
        return Err(DynamicsError::IntegrationDiverged {
            time: 0.0,
            reason: "no step size met the local error tolerance".into(),
        });
    }
    // land exactly on the sample grid; shrinking h only lowers the error
    let steps_per_sample = (sample_dt / h).ceil().max(1.0) as u64;
    let h = sample_dt / steps_per_sample as f64;
    let sample_map = matrix_power(&step_propagator(cfg, h), steps_per_sample);

    let mut times = Vec::with_capacity(cfg.samples + 1);
    let mut states = Vec::with_capacity(cfg.samples + 1);
    let mut v = vectorize(&rho0.0);
    times.push(0.0);
    states.push(*rho0);
    for k in 1..=cfg.samples {
        v = sample_map * v;
        let t = k as f64 * sample_dt;
        let m = unvectorize(&v);
        check_state(&m).map_err(|reason| DynamicsError::IntegrationDiverged { time: t, reason })?;
        times.push(t);
        states.push(DensityMatrix3(m));
    }
    Ok(Trajectory {
        times,
        states,
        time_step: h,
        steps: steps_per_sample * cfg.samples as u64,
    })
}

/// Single-exponential fit of a decaying population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Γ, 1/s
    pub rate: f64,
    /// RMS residual of ln ρ22 about the fitted line.
    pub residual: f64,
    /// Points inside the fit window.
    pub points: usize,
}

/// Least-squares fit of ln ρ22 vs t over the samples with
/// ρ22/ρ22(0) ∈ [0.05, 0.95].
pub fn effective_decay_rate(times: &[f64], population: &[f64]) -> Result<DecayFit, DynamicsError> {
    if times.len() != population.len() {
        return Err(DynamicsError::FitFailed("times and populations differ in length".into()));
    }
    if times.len() < 10 {
        return Err(DynamicsError::FitFailed(format!(
            "need at least 10 samples, got {}",
            times.len()
        )));
    }
    let p0 = population[0];
    if !(p0 > 0.0) {
        return Err(DynamicsError::FitFailed("initial population must be > 0".into()));
    }
    let (lo, hi) = DECAY_WINDOW;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(population)
        .filter(|(_, &p)| p / p0 >= lo && p / p0 <= hi)
        .map(|(&t, &p)| (t, p.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(DynamicsError::FitFailed(format!(
            "only {} samples inside the decay window",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    if !(sxx > 0.0) {
        return Err(DynamicsError::FitFailed("degenerate time axis".into()));
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(DynamicsError::FitFailed("population is not decaying".into()));
    }
    let intercept = mean_y - slope * mean_t;
    let ss: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    Ok(DecayFit {
        rate: -slope,
        residual: (ss / n).sqrt(),
        points: pts.len(),
    })
}

/// Integrates from |e,0⟩ and fits the qubit population decay.
pub fn simulate_decay(cfg: &DynamicsConfig) -> Result<(Trajectory, DecayFit), DynamicsError> {
    let traj = evolve(&DensityMatrix3::excited(), cfg)?;
    let fit = effective_decay_rate(&traj.times, &traj.population(2))?;
    Ok((traj, fit))
}

/// 2g²Γ2 / (Γ2² + δ²)
#[inline]
pub fn lorentzian_rate(coupling: f64, gamma2: f64, detuning: f64) -> f64 {
    2.0 * coupling * coupling * gamma2 / (gamma2 * gamma2 + detuning * detuning)
}

/// Γ1(ω_q) = Γ1(0) + Σ_k 2g_k²Γ2,k/(Γ2,k² + (ω_q − ω_m,k)²) with
/// Γ2,k = Γ2,q + κ_m,k/2.
pub fn gamma1_at(omega_q: f64, background: f64, gamma2q: f64, couplings: &CouplingSet) -> f64 {
    background
        + couplings
            .modes()
            .iter()
            .map(|m| {
                lorentzian_rate(
                    m.coupling,
                    gamma2q + 0.5 * m.linewidth,
                    omega_q - m.mode_frequency,
                )
            })
            .sum::<f64>()
}

/// Relaxation-rate spectrum over a grid of qubit frequencies (rad/s), with
/// Γ1(0) and Γ2,q = Γφ,q + Γ1,q(0)/2 taken from the qubit.
pub fn gamma1_spectrum(couplings: &CouplingSet, qubit: &QubitParams, grid: &[f64]) -> Vec<f64> {
    let gamma2q = qubit.dephasing_rate();
    grid.iter()
        .map(|&w| gamma1_at(w, qubit.nominal_decay, gamma2q, couplings))
        .collect()
}

/// CSV with header `fq_hz,gamma1_per_s,t1_s`.
pub fn write_spectrum_csv<W: Write>(grid: &[f64], gamma1: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "fq_hz,gamma1_per_s,t1_s")?;
    for (&w, &g) in grid.iter().zip(gamma1) {
        writeln!(out, "{:e},{:e},{:e}", angular_to_hz(w), g, 1.0 / g)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantization::CouplingMode;
    use std::f64::consts::TAU;

    fn cfg(detuning: f64, g: f64, g1: f64, gphi: f64, kappa: f64, total: f64) -> DynamicsConfig {
        DynamicsConfig::new(detuning, g, g1, gphi, kappa, total)
    }

    fn random_state(seed: u64) -> DensityMatrix3 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix3::from_fn(|_, _| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let m = a * a.adjoint();
        let m = m / m.trace();
        DensityMatrix3::new(m).unwrap()
    }

    #[test]
    fn ground_state_is_dark() {
        let c = cfg(TAU * 1e6, TAU * 1e5, 1e4, 2e4, TAU * 2e6, 1e-6);
        let d = lindblad_rhs(&DensityMatrix3::ground(), &c);
        assert!(d.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn decoupled_qubit_decays_at_nominal_rate() {
        let g1 = 3e4;
        let c = cfg(TAU * 1e6, 0.0, g1, 5e3, TAU * 2e6, 1e-6);
        let d = lindblad_rhs(&DensityMatrix3::excited(), &c);
        assert!((d[(1, 1)].re + g1).abs() < 1e-9);
        assert!((d[(0, 0)].re - g1).abs() < 1e-9);
        assert_eq!(d[(2, 2)].norm(), 0.0);
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let c = cfg(TAU * 1.3e6, TAU * 2e5, 1e4, 7e3, TAU * 2e6, 1e-6);
        for seed in 0..20 {
            let rho = random_state(seed);
            let d = lindblad_rhs(&rho, &c);
            let scale = TAU * 2e6;
            assert!(d.trace().norm() < 1e-14 * scale);
            assert!(hermiticity_error(&d) < 1e-14 * scale);
        }
    }

    #[test]
    fn zero_generator_keeps_state_constant() {
        let rho = random_state(7);
        let c = cfg(0.0, 0.0, 0.0, 0.0, 0.0, 1e-6);
        let traj = evolve(&rho, &c).unwrap();
        for s in &traj.states {
            assert!((s.matrix() - rho.matrix()).iter().all(|z| z.norm() < 1e-15));
        }
    }

    #[test]
    fn phonon_decays_exponentially() {
        let kappa = TAU * 2e6;
        let c = cfg(0.0, 0.0, 0.0, 0.0, kappa, 3.0 / kappa);
        let traj = evolve(&DensityMatrix3::phonon(), &c).unwrap();
        let last = traj.states.last().unwrap();
        assert!((last.population(3) - (-3.0f64).exp()).abs() < 1e-6);
        assert!((last.population(1) - (1.0 - (-3.0f64).exp())).abs() < 1e-6);
    }

    #[test]
    fn vacuum_rabi_oscillation() {
        let g = TAU * 1e6;
        let c = cfg(0.0, g, 0.0, 0.0, 0.0, 5.0 / g).with_samples(500);
        let traj = evolve(&DensityMatrix3::excited(), &c).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let expected = (g * t).cos().powi(2);
            assert!((s.population(2) - expected).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn resonant_decay_matches_lorentzian_rate() {
        // g/2π = 100 kHz, κ/2π = 2.25 MHz: Γ1 = 4g²/κ ≈ 2π·17.8 kHz
        let g = TAU * 100e3;
        let kappa = TAU * 2.25e6;
        let expected = 4.0 * g * g / kappa;
        assert!((angular_to_hz(expected) - 17.78e3).abs() < 10.0);
        let c = cfg(0.0, g, 0.0, 0.0, kappa, 20e-6);
        let (_, fit) = simulate_decay(&c).unwrap();
        assert!((fit.rate / expected - 1.0).abs() < 0.02, "{} vs {}", fit.rate, expected);
    }

    #[test]
    fn decay_fit_on_exact_exponential() {
        let tau = 3e-6;
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.1e-6).collect();
        let pop: Vec<f64> = times.iter().map(|t| (-t / tau).exp()).collect();
        let fit = effective_decay_rate(&times, &pop).unwrap();
        assert!((fit.rate * tau - 1.0).abs() < 1e-9);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn decay_fit_rejects_flat_or_short_traces() {
        let times: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!(matches!(
            effective_decay_rate(&times, &vec![1.0; 50]),
            Err(DynamicsError::FitFailed(_))
        ));
        assert!(effective_decay_rate(&times[..5], &[1.0, 0.9, 0.8, 0.7, 0.6]).is_err());
    }

    #[test]
    fn spectrum_without_modes_is_background() {
        let qubit = QubitParams {
            charging_energy_hz: 68e6,
            max_josephson_energy_hz: 20e9,
            flux: 0.0,
            shunt_capacitance: 1e-13,
            junction_capacitance: 0.0,
            nominal_decay: 4e4,
            pure_dephasing: 1e4,
        };
        let grid = [TAU * 3e9, TAU * 3.1e9];
        assert_eq!(gamma1_spectrum(&CouplingSet::empty(), &qubit, &grid), vec![4e4, 4e4]);
    }

    #[test]
    fn on_resonance_single_mode_is_four_g_squared_over_kappa() {
        let set = CouplingSet::new(vec![CouplingMode::from_hz(3.1e9, 100e3, 2.25e6)]).unwrap();
        let m = set.modes()[0];
        let rate = gamma1_at(m.mode_frequency, 0.0, 0.0, &set);
        let expected = 4.0 * m.coupling * m.coupling / m.linewidth;
        assert!((rate - expected).abs() <= 1e-12 * expected);
        // detuning symmetry
        let d = TAU * 0.7e6;
        let a = gamma1_at(m.mode_frequency + d, 1e3, 5e3, &set);
        let b = gamma1_at(m.mode_frequency - d, 1e3, 5e3, &set);
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn composed_propagator_preserves_trace_over_millions_of_steps() {
        let g = TAU * 28.8e3;
        let kappa = TAU * 0.72e6;
        let d = TAU * 3.6e6;
        let rate = lorentzian_rate(g, 0.5 * kappa, d);
        let c = cfg(d, g, 0.0, 0.0, kappa, 4.0 / rate).with_samples(400);
        let traj = evolve(&DensityMatrix3::excited(), &c).unwrap();
        assert!(traj.steps > 5_000_000, "{}", traj.steps);
        let last = traj.states.last().unwrap();
        assert!((last.trace() - 1.0).abs() < TRACE_TOL);
    }

    #[test]
    fn long_integration_keeps_trace_and_positivity() {
        let g = TAU * 50e3;
        let kappa = TAU * 1e6;
        let mut c = cfg(TAU * 0.5e6, g, 1e4, 5e3, kappa, 0.0);
        c.time_step = 1e-9;
        c.total_time = 1e6 * c.time_step;
        c.samples = 100;
        let traj = evolve(&DensityMatrix3::excited(), &c).unwrap();
        assert!(traj.steps >= 1_000_000);
        for s in &traj.states {
            assert!((s.trace() - 1.0).abs() < 1e-8);
            assert!(s.min_eigenvalue() >= -1e-8);
        }
    }

    #[test]
    fn invalid_state_and_config_rejected() {
        let mut m = Matrix3::zeros();
        m[(0, 0)] = C::new(0.5, 0.0);
        assert!(DensityMatrix3::new(m).is_err());
        m[(1, 1)] = C::new(0.5, 0.0);
        m[(0, 1)] = C::new(0.7, 0.0);
        m[(1, 0)] = C::new(0.7, 0.0);
        assert!(DensityMatrix3::new(m).is_err());
        let mut c = cfg(0.0, 1.0, 0.0, 0.0, 1.0, 1.0);
        c.mode_linewidth = -1.0;
        assert!(evolve(&DensityMatrix3::excited(), &c).is_err());
    }
}
