// SPDX-License-Identifier: Apache-2.0

//! Circuit → quantization → Γ1 spectrum → fit, end to end.

use std::f64::consts::TAU;

use piezoloss::circuit::{bvd_admittance, BvdCircuit, RlcBranch};
use piezoloss::dynamics::{gamma1_at, gamma1_spectrum};
use piezoloss::quantization::{quantize_branch_at, quantize_circuit, t1_from_admittance, transmon_frequency};
use piezoloss::spectrum_fit::{detect_and_fit, fsr_estimate, synthetic_spectrum, FitOptions, NoiseSpec, DEFAULT_MIN_PROMINENCE};
use piezoloss::units::angular_to_hz;
use piezoloss::{CouplingSet, QubitParams};

const C_IDT: f64 = 100e-15;

/// Three motional branches 20 MHz apart around 3.1 GHz.
fn circuit() -> BvdCircuit {
    let branches = [(3.08e9, 1.5e6, 4e-22), (3.10e9, 2.0e6, 6e-22), (3.12e9, 1.0e6, 3e-22)]
        .iter()
        .map(|&(f, k, c)| RlcBranch::from_mode(TAU * f, TAU * k, c).unwrap())
        .collect();
    BvdCircuit::new(C_IDT, branches).unwrap()
}

#[test]
fn admittance_lifetime_matches_lorentzian_on_resonance() {
    // Re Y = 1/R at resonance, so C/G = R·C; quantum side 4g²/κ = 1/(R·C_q)
    let branch = RlcBranch::from_mode(TAU * 3.1e9, TAU * 2e6, 5e-22).unwrap();
    let w = branch.mode_frequency();
    let single = BvdCircuit::new(C_IDT, vec![branch]).unwrap();
    let t1_classical = t1_from_admittance(&bvd_admittance(&single, w).unwrap(), C_IDT).unwrap();
    let q = quantize_branch_at(&branch, w, C_IDT).unwrap();
    let set = CouplingSet::new(vec![q.mode]).unwrap();
    let t1_quantum = 1.0 / gamma1_at(w, 0.0, 0.0, &set);
    assert!((t1_classical / t1_quantum - 1.0).abs() < 1e-12, "{t1_classical} vs {t1_quantum}");
    assert!((t1_classical - branch.resistance() * C_IDT).abs() <= 1e-12 * t1_classical);
}

#[test]
fn quantized_circuit_is_recovered_by_the_fit() {
    let qubit = QubitParams {
        nominal_decay: 5e4,
        pure_dephasing: 2e4,
        ..QubitParams::new(68e6, 20e9, C_IDT)
    };
    assert!(angular_to_hz(transmon_frequency(&qubit).unwrap()) > 3e9);
    let (set, warnings) = quantize_circuit(&circuit(), &qubit).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");

    let grid: Vec<f64> = (0..8001).map(|i| 3.06e9 + 10e3 * i as f64).collect();
    let angular: Vec<f64> = grid.iter().map(|f| TAU * f).collect();
    let gamma2q = qubit.dephasing_rate();

    // the synthetic spectrum and the dynamics-side spectrum agree point by point
    let data = synthetic_spectrum(&set, qubit.nominal_decay, gamma2q, &grid, None).unwrap();
    let direct = gamma1_spectrum(&set, &qubit, &angular);
    for (a, b) in data.gamma1().iter().zip(&direct) {
        assert!((a / b - 1.0).abs() < 1e-12);
    }

    let noisy = synthetic_spectrum(
        &set,
        qubit.nominal_decay,
        gamma2q,
        &grid,
        Some(NoiseSpec { relative: 0.02, seed: 9 }),
    )
    .unwrap();
    let fit = detect_and_fit(&noisy, DEFAULT_MIN_PROMINENCE, gamma2q, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.modes.len(), 3);
    for (m, f) in set.modes().iter().zip(&fit.modes) {
        assert!((f.f_m - angular_to_hz(m.mode_frequency)).abs() < 50e3);
        assert!((f.g / angular_to_hz(m.coupling) - 1.0).abs() < 0.03, "{f:?}");
        assert!((f.kappa / angular_to_hz(m.linewidth) - 1.0).abs() < 0.05, "{f:?}");
    }
    assert!((fit.background_t1 * qubit.nominal_decay - 1.0).abs() < 0.01);

    let freqs: Vec<f64> = fit.modes.iter().map(|m| m.f_m).collect();
    let fsr = fsr_estimate(&freqs).unwrap();
    assert!((fsr.fsr - 20e6).abs() < 0.1e6);
}
