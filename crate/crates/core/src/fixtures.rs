// SPDX-License-Identifier: Apache-2.0

//! Bundled sample data: transmon parameters, extracted mode couplings and the
//! synthetic comb layout used to turn them into Γ1 spectra.
//!
//! Files are read from disk so a missing or edited fixture shows up as an
//! error naming the path that was expected.

use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment_sim::{saw_comb, CombLinewidths};
use crate::quantization::{CouplingSet, QubitParams};
use crate::spectrum_fit::{synthetic_spectrum, NoiseSpec, SpectrumData};

pub const TRANSMON_FILE: &str = "transmon_params.csv";
pub const COUPLINGS_FILE: &str = "mode_couplings.csv";
pub const LAYOUT_FILE: &str = "synthetic_layout.csv";
/// Overrides the fixture directory.
pub const FIXTURE_DIR_ENV: &str = "PIEZOLOSS_FIXTURES";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture not found: expected {}", .path.display())]
    NotFound { path: PathBuf },
    #[error("malformed fixture {}: {message}", .path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("no rows for sample {sample} in {}", .path.display())]
    MissingSample { sample: Sample, path: PathBuf },
    #[error("unknown sample {0:?}; expected A, B or C")]
    UnknownSample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sample {
    A,
    B,
    C,
}

impl Sample {
    pub const ALL: [Sample; 3] = [Sample::A, Sample::B, Sample::C];
}

impl fmt::Display for Sample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sample::A => "A",
            Sample::B => "B",
            Sample::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for Sample {
    type Err = FixtureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Sample::A),
            "B" | "b" => Ok(Sample::B),
            "C" | "c" => Ok(Sample::C),
            other => Err(FixtureError::UnknownSample(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmonRow {
    pub sample: Sample,
    pub idt_periods: u32,
    pub idt_period_um: f64,
    pub finger_length_um: f64,
    pub ec_mhz: f64,
    pub ej_max_ghz: f64,
    pub fq_max_mhz: f64,
}

impl TransmonRow {
    /// Qubit at zero flux with a placeholder shunt capacitance.
    pub fn qubit(&self, shunt_capacitance: f64) -> QubitParams {
        QubitParams::new(self.ec_mhz * 1e6, self.ej_max_ghz * 1e9, shunt_capacitance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub sample: Sample,
    pub mode: u32,
    pub g_khz: f64,
    pub kappa_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRow {
    pub sample: Sample,
    pub center_mhz: f64,
    pub fsr_mhz: f64,
    pub t1_background_us: f64,
    pub t2_star_us: f64,
    pub grid_step_khz: f64,
    pub margin_mhz: f64,
}

impl LayoutRow {
    pub fn background_rate(&self) -> f64 {
        1.0 / (self.t1_background_us * 1e-6)
    }

    /// Γ2,q = 1/T2*.
    pub fn gamma2q(&self) -> f64 {
        1.0 / (self.t2_star_us * 1e-6)
    }

    /// Uniform grid (Hz) covering an `n_modes` comb plus the margin.
    pub fn grid(&self, n_modes: usize) -> Vec<f64> {
        let half_span = 0.5 * (n_modes.saturating_sub(1)) as f64 * self.fsr_mhz + self.margin_mhz;
        let lo = (self.center_mhz - half_span) * 1e6;
        let hi = (self.center_mhz + half_span) * 1e6;
        let step = self.grid_step_khz * 1e3;
        let n = ((hi - lo) / step).round() as usize + 1;
        (0..n).map(|i| lo + step * i as f64).collect()
    }
}

/// Directory holding the fixture CSVs.
#[derive(Debug, Clone)]
pub struct Fixtures {
    dir: PathBuf,
}

impl Default for Fixtures {
    fn default() -> Self {
        Self::new(default_dir())
    }
}

/// `$PIEZOLOSS_FIXTURES` if set, else the copy shipped with this crate.
pub fn default_dir() -> PathBuf {
    std::env::var_os(FIXTURE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, FixtureError> {
    let file = File::open(path).map_err(|_| FixtureError::NotFound {
        path: path.to_path_buf(),
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| FixtureError::Malformed {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

impl Fixtures {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn transmons(&self) -> Result<Vec<TransmonRow>, FixtureError> {
        read_rows(&self.path(TRANSMON_FILE))
    }

    pub fn couplings(&self) -> Result<Vec<CouplingRow>, FixtureError> {
        read_rows(&self.path(COUPLINGS_FILE))
    }

    pub fn layouts(&self) -> Result<Vec<LayoutRow>, FixtureError> {
        read_rows(&self.path(LAYOUT_FILE))
    }

    pub fn transmon(&self, sample: Sample) -> Result<TransmonRow, FixtureError> {
        self.transmons()?
            .into_iter()
            .find(|r| r.sample == sample)
            .ok_or_else(|| FixtureError::MissingSample {
                sample,
                path: self.path(TRANSMON_FILE),
            })
    }

    /// Mode rows of one sample in table order.
    pub fn sample_couplings(&self, sample: Sample) -> Result<Vec<CouplingRow>, FixtureError> {
        let mut rows: Vec<CouplingRow> = self.couplings()?.into_iter().filter(|r| r.sample == sample).collect();
        if rows.is_empty() {
            return Err(FixtureError::MissingSample {
                sample,
                path: self.path(COUPLINGS_FILE),
            });
        }
        rows.sort_by_key(|r| r.mode);
        Ok(rows)
    }

    pub fn layout(&self, sample: Sample) -> Result<LayoutRow, FixtureError> {
        self.layouts()?
            .into_iter()
            .find(|r| r.sample == sample)
            .ok_or_else(|| FixtureError::MissingSample {
                sample,
                path: self.path(LAYOUT_FILE),
            })
    }

    /// Everything needed to synthesize and fit one sample's spectrum.
    pub fn synthetic_sample(&self, sample: Sample) -> Result<SyntheticSample, FixtureError> {
        let rows = self.sample_couplings(sample)?;
        let layout = self.layout(sample)?;
        let malformed = |message: String| FixtureError::Malformed {
            path: self.path(LAYOUT_FILE),
            message,
        };
        let g: Vec<f64> = rows.iter().map(|r| r.g_khz * 1e3).collect();
        let kappa: Vec<f64> = rows.iter().map(|r| r.kappa_mhz * 1e6).collect();
        let couplings = saw_comb(
            layout.center_mhz * 1e6,
            layout.fsr_mhz * 1e6,
            &g,
            &CombLinewidths::PerMode(kappa),
        )
        .map_err(|e| malformed(e.to_string()))?;
        let grid = layout.grid(rows.len());
        Ok(SyntheticSample {
            sample,
            rows,
            couplings,
            grid,
            background_rate: layout.background_rate(),
            gamma2q: layout.gamma2q(),
            layout,
        })
    }
}

/// A sample's injected parameters placed on a synthetic comb.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub sample: Sample,
    pub rows: Vec<CouplingRow>,
    pub layout: LayoutRow,
    pub couplings: CouplingSet,
    /// Hz
    pub grid: Vec<f64>,
    pub background_rate: f64,
    pub gamma2q: f64,
}

impl SyntheticSample {
    pub fn spectrum(&self, noise: Option<NoiseSpec>) -> SpectrumData {
        synthetic_spectrum(&self.couplings, self.background_rate, self.gamma2q, &self.grid, noise)
            .expect("fixture parameters are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixtures_load() {
        let fx = Fixtures::default();
        assert_eq!(fx.transmons().unwrap().len(), 3);
        let counts: Vec<usize> = Sample::ALL
            .iter()
            .map(|&s| fx.sample_couplings(s).unwrap().len())
            .collect();
        assert_eq!(counts, vec![11, 9, 7]);
        let a = fx.sample_couplings(Sample::A).unwrap();
        assert_eq!((a[0].g_khz, a[0].kappa_mhz), (100.0, 2.25));
        assert_eq!((a[7].g_khz, a[7].kappa_mhz), (45.0, 0.10));
    }

    #[test]
    fn missing_fixture_names_the_path() {
        let fx = Fixtures::new("/nonexistent/fixtures");
        let err = fx.transmons().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/fixtures/transmon_params.csv"), "{err}");
    }

    #[test]
    fn sample_b_comb_is_denser() {
        let fx = Fixtures::default();
        let a = fx.layout(Sample::A).unwrap();
        let b = fx.layout(Sample::B).unwrap();
        assert!((b.fsr_mhz / a.fsr_mhz - 380.0 / 1120.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_sample_grid_covers_comb() {
        let s = Fixtures::default().synthetic_sample(Sample::C).unwrap();
        assert_eq!(s.couplings.len(), 7);
        let lo = crate::units::angular_to_hz(s.couplings.modes()[0].mode_frequency);
        let hi = crate::units::angular_to_hz(s.couplings.modes()[6].mode_frequency);
        assert!(s.grid[0] < lo - 10e6 && *s.grid.last().unwrap() > hi + 10e6);
    }

    #[test]
    fn sample_names_parse() {
        assert_eq!("b".parse::<Sample>().unwrap(), Sample::B);
        assert!("D".parse::<Sample>().is_err());
    }
}
