//! Scenario documents: one JSON file describing a complete run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spdc_core::coincidence::{DurationPolicy, HistogramConfig};
use spdc_core::detection::DetectionChain;
use spdc_core::dispersion_qpm::{GratingParams, ModeAreas};
use spdc_core::franson::{FransonConfig, ScanMode};
use spdc_core::pair_source::SourceSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub source: SourceSpec,
    pub detection: DetectionChain,
    pub histogram: HistogramConfig,
    pub franson: FransonConfig,
    pub grating: GratingParams,
    pub mode_areas: ModeAreas,
    pub shg: ShgSection,
    pub pairs: PairsSection,
    pub correlate: CorrelateSection,
    pub car_scan: CarScanSection,
    pub fringe: FringeSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            source: SourceSpec::default(),
            detection: DetectionChain::default(),
            histogram: HistogramConfig::default(),
            franson: FransonConfig::default(),
            grating: GratingParams::default(),
            mode_areas: ModeAreas::default(),
            shg: ShgSection::default(),
            pairs: PairsSection::default(),
            correlate: CorrelateSection::default(),
            car_scan: CarScanSection::default(),
            fringe: FringeSection::default(),
        }
    }
}

/// Synthetic CE spectrum and its fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShgSection {
    pub start_nm: f64,
    pub stop_nm: f64,
    pub points: usize,
    /// Additive noise as a fraction of the peak CE.
    pub noise_fraction: f64,
    /// Fit starting point; the period is re-seeded from the data peak.
    pub fit_init: GratingParams,
    /// Measured spectrum to fit instead of generating one.
    pub input_csv: Option<PathBuf>,
    /// Tabulated dispersion replacing the built-in model.
    pub dispersion_csv: Option<PathBuf>,
}

impl Default for ShgSection {
    fn default() -> Self {
        Self {
            start_nm: 1560.0,
            stop_nm: 1562.0,
            points: 801,
            noise_fraction: 0.02,
            fit_init: GratingParams {
                length_mm: 55.2,
                period_um: 3.768,
                chi2_eff_pm_per_v: 0.04,
            },
            input_csv: None,
            dispersion_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsSection {
    pub power_mw: f64,
    pub duration_s: f64,
    /// Send the pairs through the Franson analyzer before detection.
    pub through_analyzer: bool,
}

impl Default for PairsSection {
    fn default() -> Self {
        Self {
            power_mw: 0.036,
            duration_s: 10.0,
            through_analyzer: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelateSection {
    /// Tag file; defaults to the `pairs` output in the output directory.
    pub input: Option<PathBuf>,
    /// Acquisition time of the tag file; defaults to `pairs.duration_s`.
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarScanSection {
    pub powers_mw: Vec<f64>,
    pub duration: DurationPolicy,
}

impl Default for CarScanSection {
    fn default() -> Self {
        Self {
            powers_mw: vec![0.002, 0.008, 0.025, 0.063, 0.2],
            duration: DurationPolicy::TargetAccidentals {
                accidentals: 50.0,
                min_duration_s: 10.0,
                max_duration_s: 20_000.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FringeSection {
    pub offsets_pm: Vec<f64>,
    pub power_mw: f64,
    pub duration_s: f64,
    pub mode: ScanMode,
    /// Fringe table to fit for `fringe-fit`.
    pub input_csv: Option<PathBuf>,
}

impl Default for FringeSection {
    fn default() -> Self {
        Self {
            offsets_pm: (0..12).map(|k| 5.0 + 0.66 * k as f64).collect(),
            power_mw: 0.02,
            duration_s: 160.0,
            mode: ScanMode::MonteCarlo,
            input_csv: None,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        // Check the version before the full parse so an old file gets a clear
        // message rather than an unknown-field error.
        let raw: serde_json::Value = serde_json::from_str(text).context("scenario is not valid JSON")?;
        match raw.get("schema_version") {
            None => bail!("scenario is missing schema_version (expected {SCHEMA_VERSION})"),
            Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
                bail!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")
            }
            _ => {}
        }
        let s: Scenario = serde_json::from_value(raw).context("invalid scenario")?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read scenario {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.detection.validate()?;
        self.histogram.validate()?;
        self.franson.validate()?;
        self.grating.validate()?;
        self.mode_areas.validate()?;
        if self.shg.points < 10 || !(self.shg.stop_nm > self.shg.start_nm) {
            bail!("shg grid needs at least 10 points over an increasing range");
        }
        if !(self.shg.noise_fraction >= 0.0) {
            bail!("shg.noise_fraction must be >= 0");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let s = Scenario::default();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn minimal_document_takes_defaults() {
        let s = Scenario::from_json(r#"{"schema_version": 1, "seed": 5}"#).unwrap();
        assert_eq!(s.seed, 5);
        assert_eq!(s.source, SourceSpec::default());
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        assert!(Scenario::from_json(r#"{"schema_version": 1, "colour": 2}"#).is_err());
        assert!(Scenario::from_json(r#"{"schema_version": 1, "source": {"slope": 2}}"#).is_err());
        assert!(Scenario::from_json(r#"{"schema_version": 2}"#).is_err());
        assert!(Scenario::from_json(r#"{"seed": 2}"#).is_err());
    }

    #[test]
    fn invalid_physics_rejected() {
        let bad = r#"{"schema_version": 1, "franson": {"intrinsic_visibility": 1.5}}"#;
        assert!(Scenario::from_json(bad).is_err());
    }
}
