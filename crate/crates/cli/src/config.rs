// SPDX-License-Identifier: Apache-2.0

//! TOML input for `pemap`.

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use piezoloss::experiment_sim::{saw_comb, CombLinewidths, ExperimentPlan, TlsDefect};
use piezoloss::{CouplingSet, QubitParams};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub fq_min_hz: f64,
    pub fq_max_hz: f64,
    pub fq_points: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub n_bias: usize,
    pub delay_s: f64,
    /// Omit for a noise-free map.
    pub shots: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombConfig {
    pub center_hz: f64,
    pub fsr_hz: f64,
    pub g_hz: Vec<f64>,
    pub kappa_hz: OneOrMany,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PemapConfig {
    pub plan: PlanConfig,
    pub qubit: QubitParams,
    pub comb: Option<CombConfig>,
    #[serde(default)]
    pub tls: Vec<TlsDefect>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl PemapConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid pemap config")
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        let p = &self.plan;
        if p.fq_points == 0 || p.n_bias == 0 {
            bail!("fq_points and n_bias must be >= 1");
        }
        if p.fq_points > 1 && !(p.fq_min_hz < p.fq_max_hz) {
            bail!("fq_min_hz must be below fq_max_hz");
        }
        Ok(ExperimentPlan {
            qubit_frequency_grid: linspace(p.fq_min_hz, p.fq_max_hz, p.fq_points),
            bias_grid: linspace(p.v_min, p.v_max, p.n_bias),
            delay: p.delay_s,
            shots: p.shots,
        })
    }

    pub fn saw(&self) -> Result<CouplingSet> {
        match &self.comb {
            None => Ok(CouplingSet::empty()),
            Some(c) => {
                let widths = match &c.kappa_hz {
                    OneOrMany::One(k) => CombLinewidths::Constant(*k),
                    OneOrMany::Many(v) => CombLinewidths::PerMode(v.clone()),
                };
                Ok(saw_comb(c.center_hz, c.fsr_hz, &c.g_hz, &widths)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[plan]
fq_min_hz = 3.05e9
fq_max_hz = 3.15e9
fq_points = 11
v_min = -1.0
v_max = 1.0
n_bias = 5
delay_s = 3e-6

[qubit]
charging_energy_hz = 68e6
max_josephson_energy_hz = 20e9
shunt_capacitance = 1e-13
nominal_decay = 5e4

[comb]
center_hz = 3.1e9
fsr_hz = 24e6
g_hz = [100e3, 80e3, 60e3]
kappa_hz = 1e6

[[tls]]
tunneling_amplitude = 1e9
asymmetry_at_zero_bias = 2.9e9
bias_sensitivity = 5e6
qubit_coupling = 1e5
linewidth = 1e5
"#;

    #[test]
    fn example_config_builds() {
        let cfg = PemapConfig::parse(EXAMPLE).unwrap();
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.qubit_frequency_grid.len(), 11);
        assert_eq!(plan.bias_grid, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(plan.shots, None);
        assert_eq!(cfg.saw().unwrap().len(), 3);
        assert_eq!(cfg.tls.len(), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = EXAMPLE.replace("delay_s", "delay");
        assert!(PemapConfig::parse(&text).is_err());
    }

    #[test]
    fn per_mode_linewidths_must_match() {
        let text = EXAMPLE.replace("kappa_hz = 1e6", "kappa_hz = [1e6, 2e6]");
        assert!(PemapConfig::parse(&text).unwrap().saw().is_err());
    }
}
