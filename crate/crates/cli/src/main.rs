// SPDX-License-Identifier: Apache-2.0

//! `piezoloss` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 numerical non-convergence.

mod config;
mod output;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use piezoloss::circuit::{admittance_json, sweep_admittance, write_admittance_csv, BvdCircuit};
use piezoloss::dynamics::{evolve, effective_decay_rate, lorentzian_rate, DynamicsError};
use piezoloss::experiment_sim::{bias_average, pe_map, plan_header, write_pe_map_csv, write_profile_csv};
use piezoloss::fixtures::{Fixtures, Sample};
use piezoloss::loss_budget::{budget_report, write_budget_csv, LossModel};
use piezoloss::quantization::{quantize_circuit, transmon_frequency};
use piezoloss::spectrum_fit::{
    detect_and_fit, read_spectrum_csv, write_fit_curve_csv, write_spectrum_csv, FitOptions, NoiseSpec,
    SpectrumFitResult, Weighting, DEFAULT_MAX_ITERATIONS, DEFAULT_MIN_PROMINENCE,
};
use piezoloss::units::{angular_to_hz, hz_to_angular};
use piezoloss::{DensityMatrix3, DynamicsConfig, QubitParams};

use config::PemapConfig;
use output::{columns, Format, Header, Run};

/// Injected-vs-recovered bands used by `reproduce`.
const MEDIAN_TOL: f64 = 0.05;
const WORST_TOL: f64 = 0.15;

#[derive(Debug, Parser)]
#[command(name = "piezoloss", version, about = "Piezoelectric loss modelling for SAW-coupled transmons")]
struct Cli {
    /// Seed for every stochastic output.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightingArg {
    Uniform,
    Uncertainty,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Admittance of a BVD circuit over a linear frequency grid.
    Sweep {
        /// Circuit JSON {c_idt_f, branches:[{r_ohm, l_h, c_f}]}.
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long)]
        fmin: f64,
        #[arg(long)]
        fmax: f64,
        #[arg(long, default_value_t = 1001)]
        npoints: usize,
    },
    /// Map every motional branch to (f_m, g, κ) for a transmon.
    Quantize {
        #[arg(long)]
        circuit: PathBuf,
        /// Qubit JSON (charging_energy_hz, max_josephson_energy_hz, shunt_capacitance, ...).
        #[arg(long)]
        qubit: PathBuf,
    },
    /// Integrate the qubit-phonon master equation from |e,0⟩ and fit the decay.
    Decay {
        #[arg(long)]
        g_hz: f64,
        #[arg(long)]
        kappa_hz: f64,
        /// Δ/2π = (ω_m − ω_q)/2π.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        detuning_hz: f64,
        /// Γ1,q(0), 1/s.
        #[arg(long, default_value_t = 0.0)]
        gamma1: f64,
        /// Γφ,q, 1/s.
        #[arg(long, default_value_t = 0.0)]
        gamma_phi: f64,
        /// Defaults to five lifetimes of the predicted rate.
        #[arg(long)]
        total_time: Option<f64>,
        #[arg(long, default_value_t = 400)]
        samples: usize,
    },
    /// Excited-state population map p_e(f_q, V) and its bias average.
    Pemap {
        /// TOML with [plan], [qubit], optional [comb] and [[tls]].
        #[arg(long)]
        config: PathBuf,
    },
    /// Detect and fit SAW modes in a T1 spectrum.
    Fit {
        /// CSV fq_hz,t1_s[,t1_err_s][,t2star_s].
        spectrum: PathBuf,
        /// Γ2,q in 1/s; defaults to the mean 1/T2* of the t2star_s column.
        #[arg(long)]
        gamma2q: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_MIN_PROMINENCE)]
        min_prominence: f64,
        #[arg(long, value_enum, default_value_t = WeightingArg::Uniform)]
        weighting: WeightingArg,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
        max_iterations: usize,
    },
    /// Piezoelectric vs TLS quality factors and their crossover.
    Budget {
        /// Key-value TOML overriding the default loss model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e9)]
        fmin: f64,
        #[arg(long, default_value_t = 30e9)]
        fmax: f64,
        #[arg(long, default_value_t = 100)]
        npoints: usize,
    },
    /// Synthesize a sample's spectrum from the bundled fixtures and fit it back.
    Reproduce {
        #[arg(long)]
        sample: Sample,
        /// Relative T1 noise.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Fixture directory; defaults to $PIEZOLOSS_FIXTURES or the bundled copy.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sweep { .. } => "sweep",
            Command::Quantize { .. } => "quantize",
            Command::Decay { .. } => "decay",
            Command::Pemap { .. } => "pemap",
            Command::Fit { .. } => "fit",
            Command::Budget { .. } => "budget",
            Command::Reproduce { .. } => "reproduce",
        }
    }
}

/// Failure that maps to exit code 2.
#[derive(Debug)]
struct NotConverged(String);

impl fmt::Display for NotConverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numerical non-convergence: {}", self.0)
    }
}

impl std::error::Error for NotConverged {}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn check_range(fmin: f64, fmax: f64, npoints: usize) -> Result<()> {
    if !(fmin.is_finite() && fmin > 0.0 && fmax.is_finite()) {
        bail!("frequencies must be positive and finite");
    }
    if !(fmin < fmax) {
        bail!("--fmin ({fmin}) must be below --fmax ({fmax})");
    }
    if npoints < 2 {
        bail!("--npoints must be at least 2");
    }
    Ok(())
}

fn sweep(run: &mut Run, circuit: &Path, fmin: f64, fmax: f64, npoints: usize) -> Result<()> {
    check_range(fmin, fmax, npoints)?;
    run.input(circuit);
    let c: BvdCircuit = read_json(circuit)?;
    let grid: Vec<f64> = linspace(fmin, fmax, npoints).into_iter().map(hz_to_angular).collect();
    let ys = sweep_admittance(&c, &grid)?;
    let path = run.table(
        "admittance",
        |w| Ok(write_admittance_csv(&ys, w)?),
        || admittance_json(&ys),
    )?;
    println!("{} points written to {}", ys.len(), path.display());
    Ok(())
}

fn quantize(run: &mut Run, circuit: &Path, qubit: &Path) -> Result<()> {
    run.input(circuit);
    run.input(qubit);
    let c: BvdCircuit = read_json(circuit)?;
    let q: QubitParams = read_json(qubit)?;
    let (set, warnings) = quantize_circuit(&c, &q)?;
    let fq = angular_to_hz(transmon_frequency(&q)?);
    for w in &warnings {
        eprintln!("warning: {}", serde_json::to_string(w)?);
    }
    let set_json = serde_json::to_value(&set)?;
    run.table(
        "couplings",
        |w| {
            use std::io::Write;
            writeln!(w, "f_m_hz,g_hz,kappa_hz,K2")?;
            for m in set.modes() {
                writeln!(
                    w,
                    "{:e},{:e},{:e},{:e}",
                    angular_to_hz(m.mode_frequency),
                    angular_to_hz(m.coupling),
                    angular_to_hz(m.linewidth),
                    m.em_coupling_coefficient
                )?;
            }
            Ok(())
        },
        || {
            json!({
                "qubit_frequency_hz": fq,
                "modes": set_json["modes"],
                "warnings": warnings,
            })
        },
    )?;
    println!("qubit at {:.3} MHz, {} modes", fq / 1e6, set.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn decay(
    run: &mut Run,
    g_hz: f64,
    kappa_hz: f64,
    detuning_hz: f64,
    gamma1: f64,
    gamma_phi: f64,
    total_time: Option<f64>,
    samples: usize,
) -> Result<()> {
    let g = hz_to_angular(g_hz);
    let kappa = hz_to_angular(kappa_hz);
    let detuning = hz_to_angular(detuning_hz);
    let gamma2 = gamma_phi + 0.5 * gamma1 + 0.5 * kappa;
    let predicted = gamma1 + lorentzian_rate(g, gamma2, detuning);
    let total = match total_time {
        Some(t) => t,
        None if predicted > 0.0 => 5.0 / predicted,
        None => bail!("--total-time is required when the predicted decay rate is zero"),
    };
    let cfg = DynamicsConfig::new(detuning, g, gamma1, gamma_phi, kappa, total).with_samples(samples);
    cfg.validate()?;
    let traj = match evolve(&DensityMatrix3::excited(), &cfg) {
        Ok(t) => t,
        Err(e @ DynamicsError::IntegrationDiverged { .. }) => return Err(NotConverged(e.to_string()).into()),
        Err(e) => return Err(e.into()),
    };
    let fit = effective_decay_rate(&traj.times, &traj.population(2))
        .map_err(|e| NotConverged(e.to_string()))?;
    run.table(
        "trajectory",
        |w| Ok(traj.write_csv(w)?),
        || {
            columns(&[
                ("t_s", traj.times.clone()),
                ("rho22", traj.population(2)),
                ("rho33", traj.population(3)),
                ("rho11", traj.population(1)),
            ])
        },
    )?;
    run.json(
        "decay.json",
        json!({
            "rate_per_s": fit.rate,
            "predicted_rate_per_s": predicted,
            "relative_difference": fit.rate / predicted - 1.0,
            "fit_residual": fit.residual,
            "fit_points": fit.points,
            "time_step_s": traj.time_step,
            "steps": traj.steps,
        }),
    )?;
    println!(
        "Γ1 = {:.6e} 1/s (Lorentzian prediction {:.6e} 1/s)",
        fit.rate, predicted
    );
    Ok(())
}

fn pemap(run: &mut Run, config: &Path) -> Result<()> {
    run.input(config);
    let cfg = PemapConfig::parse(&read_text(config)?)?;
    let plan = cfg.plan()?;
    let saw = cfg.saw()?;
    let map = pe_map(&plan, &saw, &cfg.tls, &cfg.qubit, run.seed())?;
    let profile = bias_average(&map)?;
    let header = plan_header(&plan, run.seed());
    match run.format {
        Format::Csv => {
            run.csv("pemap.csv", |w| Ok(write_pe_map_csv(&map, w)?))?;
            run.json("pemap_header.json", header)?;
            run.csv("profile.csv", |w| Ok(write_profile_csv(&map.frequencies, &profile, w)?))?;
        }
        Format::Json => {
            run.json(
                "pemap.json",
                json!({
                    "plan": header,
                    "fq_hz": map.frequencies,
                    "v_bias": map.biases,
                    "pe": map.values,
                }),
            )?;
            run.json(
                "profile.json",
                columns(&[("fq_hz", map.frequencies.clone()), ("pe_avg", profile.clone())]),
            )?;
        }
    }
    println!(
        "{} x {} map, {} TLS, {} SAW modes",
        map.frequencies.len(),
        map.biases.len(),
        cfg.tls.len(),
        saw.len()
    );
    Ok(())
}

fn fit_summary(result: &SpectrumFitResult) {
    println!(
        "T1(0) = {:.3} µs, {} modes, {} after {} iterations",
        result.background_t1 * 1e6,
        result.modes.len(),
        if result.converged { "converged" } else { "NOT converged" },
        result.iterations
    );
    for (k, m) in result.modes.iter().enumerate() {
        println!(
            "  mode {:>2}: f_m = {:.4} MHz  g = {:.2} ± {:.2} kHz  κ = {:.4} ± {:.4} MHz",
            k + 1,
            m.f_m / 1e6,
            m.g / 1e3,
            m.g_stderr / 1e3,
            m.kappa / 1e6,
            m.kappa_stderr / 1e6
        );
    }
}

fn fit(
    run: &mut Run,
    spectrum: &Path,
    gamma2q: Option<f64>,
    min_prominence: f64,
    weighting: WeightingArg,
    max_iterations: usize,
) -> Result<bool> {
    run.input(spectrum);
    let file = fs::File::open(spectrum).with_context(|| format!("cannot read {}", spectrum.display()))?;
    let data = read_spectrum_csv(file).with_context(|| format!("cannot parse {}", spectrum.display()))?;
    let gamma2q = match gamma2q.or_else(|| data.mean_dephasing_rate()) {
        Some(g) => g,
        None => bail!("pass --gamma2q or include a t2star_s column"),
    };
    let opts = FitOptions {
        weighting: match weighting {
            WeightingArg::Uniform => Weighting::Uniform,
            WeightingArg::Uncertainty => Weighting::Uncertainty,
        },
        max_iterations,
        ..FitOptions::default()
    };
    let result = detect_and_fit(&data, min_prominence, gamma2q, &opts)?;
    run.json("fit.json", serde_json::to_value(&result)?)?;
    run.csv("fit_curve.csv", |w| Ok(write_fit_curve_csv(&data, &result, w)?))?;
    fit_summary(&result);
    Ok(result.converged)
}

fn budget(run: &mut Run, config: Option<&Path>, fmin: f64, fmax: f64, npoints: usize) -> Result<()> {
    check_range(fmin, fmax, npoints)?;
    let model = match config {
        Some(path) => {
            run.input(path);
            LossModel::from_config_str(&read_text(path)?)?
        }
        None => LossModel::default(),
    };
    let report = budget_report(&model, fmin, fmax, npoints)?;
    let col = |f: fn(&piezoloss::loss_budget::BudgetRow) -> f64| report.rows.iter().map(f).collect::<Vec<_>>();
    run.table(
        "budget",
        |w| Ok(write_budget_csv(&report.rows, w)?),
        || {
            columns(&[
                ("fq_hz", col(|r| r.fq_hz)),
                ("q_piezo", col(|r| r.q_piezo)),
                ("q_tls", col(|r| r.q_tls)),
                ("q_total", col(|r| r.q_total)),
            ])
        },
    )?;
    run.json(
        "crossover.json",
        json!({
            "crossover_hz": report.crossover_hz,
            "note": report.crossover_note,
            "model": report.model,
            "assumptions": report.assumptions,
        }),
    )?;
    match report.crossover_hz {
        Some(f) => println!("piezo/TLS crossover at {:.3} GHz", f / 1e9),
        None => println!("no crossover: {}", report.crossover_note.as_deref().unwrap_or("")),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReproduceRow {
    mode: usize,
    f_m_injected_hz: f64,
    f_m_fit_hz: Option<f64>,
    g_injected_hz: f64,
    g_fit_hz: Option<f64>,
    g_rel_err: Option<f64>,
    kappa_injected_hz: f64,
    kappa_fit_hz: Option<f64>,
    kappa_rel_err: Option<f64>,
    pass: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn reproduce(run: &mut Run, sample: Sample, noise: f64, fixtures: Option<&Path>) -> Result<bool> {
    let fx = match fixtures {
        Some(dir) => Fixtures::new(dir),
        None => Fixtures::default(),
    };
    for file in [piezoloss::fixtures::COUPLINGS_FILE, piezoloss::fixtures::LAYOUT_FILE] {
        run.input(&fx.path(file));
    }
    let syn = fx.synthetic_sample(sample)?;
    let noise_spec = (noise > 0.0).then_some(NoiseSpec {
        relative: noise,
        seed: run.seed(),
    });
    let data = syn.spectrum(noise_spec);
    let result = detect_and_fit(&data, DEFAULT_MIN_PROMINENCE, syn.gamma2q, &FitOptions::default())?;

    let fsr = syn.layout.fsr_mhz * 1e6;
    let rows: Vec<ReproduceRow> = syn
        .couplings
        .modes()
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let f = angular_to_hz(m.mode_frequency);
            let g = angular_to_hz(m.coupling);
            let kappa = angular_to_hz(m.linewidth);
            let hit = result
                .modes
                .iter()
                .filter(|fm| (fm.f_m - f).abs() < 0.5 * fsr)
                .min_by(|a, b| (a.f_m - f).abs().total_cmp(&(b.f_m - f).abs()));
            let g_err = hit.map(|fm| (fm.g / g - 1.0).abs());
            let k_err = hit.map(|fm| (fm.kappa / kappa - 1.0).abs());
            ReproduceRow {
                mode: k + 1,
                f_m_injected_hz: f,
                f_m_fit_hz: hit.map(|fm| fm.f_m),
                g_injected_hz: g,
                g_fit_hz: hit.map(|fm| fm.g),
                g_rel_err: g_err,
                kappa_injected_hz: kappa,
                kappa_fit_hz: hit.map(|fm| fm.kappa),
                kappa_rel_err: k_err,
                pass: matches!((g_err, k_err), (Some(a), Some(b)) if a < WORST_TOL && b < WORST_TOL),
            }
        })
        .collect();
    let g_med = median(rows.iter().filter_map(|r| r.g_rel_err).collect());
    let k_med = median(rows.iter().filter_map(|r| r.kappa_rel_err).collect());
    let pass = result.modes.len() == rows.len()
        && rows.iter().all(|r| r.pass)
        && g_med < MEDIAN_TOL
        && k_med < MEDIAN_TOL;

    run.csv("spectrum.csv", |w| Ok(write_spectrum_csv(&data, w)?))?;
    run.json("fit.json", serde_json::to_value(&result)?)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    run.table(
        "reproduce",
        |w| {
            use std::io::Write;
            writeln!(
                w,
                "mode,f_m_injected_hz,f_m_fit_hz,g_injected_hz,g_fit_hz,g_rel_err,kappa_injected_hz,kappa_fit_hz,kappa_rel_err,pass"
            )?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{:e},{},{:e},{},{},{:e},{},{},{}",
                    r.mode,
                    r.f_m_injected_hz,
                    opt(r.f_m_fit_hz),
                    r.g_injected_hz,
                    opt(r.g_fit_hz),
                    opt(r.g_rel_err),
                    r.kappa_injected_hz,
                    opt(r.kappa_fit_hz),
                    opt(r.kappa_rel_err),
                    r.pass
                )?;
            }
            Ok(())
        },
        || {
            json!({
                "sample": sample.to_string(),
                "noise": noise,
                "modes": rows,
                "g_median_rel_err": g_med,
                "kappa_median_rel_err": k_med,
                "pass": pass,
            })
        },
    )?;

    println!("sample {sample}: {} injected modes, {} recovered", rows.len(), result.modes.len());
    println!(
        "{:>4} {:>12} {:>10} {:>10} {:>8} {:>10} {:>10} {:>8}  result",
        "mode", "f_m (MHz)", "g in", "g fit", "err", "κ in", "κ fit", "err"
    );
    for r in &rows {
        let pct = |v: Option<f64>| v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "-".into());
        let khz = |v: Option<f64>| v.map(|x| format!("{:.2}", x / 1e3)).unwrap_or_else(|| "-".into());
        let mhz = |v: Option<f64>| v.map(|x| format!("{:.4}", x / 1e6)).unwrap_or_else(|| "-".into());
        println!(
            "{:>4} {:>12.3} {:>10.2} {:>10} {:>8} {:>10.4} {:>10} {:>8}  {}",
            r.mode,
            r.f_m_injected_hz / 1e6,
            r.g_injected_hz / 1e3,
            khz(r.g_fit_hz),
            pct(r.g_rel_err),
            r.kappa_injected_hz / 1e6,
            mhz(r.kappa_fit_hz),
            pct(r.kappa_rel_err),
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "median error g {:.2}%, κ {:.2}% (band {:.0}%, worst-case band {:.0}%): {}",
        100.0 * g_med,
        100.0 * k_med,
        100.0 * MEDIAN_TOL,
        100.0 * WORST_TOL,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(result.converged)
}

fn run(cli: &Cli, command_line: String) -> Result<bool> {
    let header = Header::new(command_line, cli.seed);
    let mut run = Run::create(cli.command.name(), &cli.out, header, cli.format)?;
    let converged = match &cli.command {
        Command::Sweep {
            circuit,
            fmin,
            fmax,
            npoints,
        } => sweep(&mut run, circuit, *fmin, *fmax, *npoints).map(|_| true),
        Command::Quantize { circuit, qubit } => quantize(&mut run, circuit, qubit).map(|_| true),
        Command::Decay {
            g_hz,
            kappa_hz,
            detuning_hz,
            gamma1,
            gamma_phi,
            total_time,
            samples,
        } => decay(
            &mut run,
            *g_hz,
            *kappa_hz,
            *detuning_hz,
            *gamma1,
            *gamma_phi,
            *total_time,
            *samples,
        )
        .map(|_| true),
        Command::Pemap { config } => pemap(&mut run, config).map(|_| true),
        Command::Fit {
            spectrum,
            gamma2q,
            min_prominence,
            weighting,
            max_iterations,
        } => fit(&mut run, spectrum, *gamma2q, *min_prominence, *weighting, *max_iterations),
        Command::Budget {
            config,
            fmin,
            fmax,
            npoints,
        } => budget(&mut run, config.as_deref(), *fmin, *fmax, *npoints).map(|_| true),
        Command::Reproduce {
            sample,
            noise,
            fixtures,
        } => reproduce(&mut run, *sample, *noise, fixtures.as_deref()),
    }?;
    run.finish()?;
    Ok(converged)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    match run(&cli, command_line) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: fit did not converge");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<NotConverged>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
