//! Folded Franson analyzer: a single unbalanced Michelson traversed by both
//! photons of a pair.
//!
//! Each photon takes the short or long arm with amplitude 1/2, giving four
//! path combinations of probability 1/16. Short-long and long-short are
//! distinguishable by arrival time and form the two side peaks; short-short
//! and long-long arrive together and interfere, so the central peak carries
//! `(2 + 2 V cos φ) / 16`. Every other pair (3/4 on average over the phase)
//! is lost in the analyzer and dropped.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coincidence::{CoincidenceHistogram, HistogramConfig};
use crate::detection::{DetectionChain, Routing};
use crate::pair_source::{PairEvent, PairStream, SourceSpec};
use crate::pipeline;
use crate::rng::{derive_seed, Domain, Stream};
use crate::units::SPEED_OF_LIGHT;
use crate::{Error, Result};

/// Offset (pm) set up as a constructive maximum by the default phase.
pub const CONSTRUCTIVE_OFFSET_PM: f64 = 7.35;
/// Offset (pm) half a default period away: a destructive minimum.
pub const DESTRUCTIVE_OFFSET_PM: f64 = 10.65;
pub const DEFAULT_FRINGE_PERIOD_PM: f64 = 6.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FransonConfig {
    /// Long minus short arm delay seen by each photon.
    pub arm_delay_fs: i64,
    /// Pump offset giving one full fringe. Independent of `arm_delay_fs`; see
    /// [`derived_fringe_period_pm`] for the value the delay alone implies.
    pub fringe_period_pm: f64,
    pub reference_pump_nm: f64,
    pub pump_offset_pm: f64,
    /// Fringe phase at zero offset.
    pub phase_offset_rad: f64,
    pub intrinsic_visibility: f64,
    pub single_photon_coherence_fs: f64,
    pub pump_coherence_fs: f64,
    /// Detector jitter used when acquiring through the analyzer.
    pub jitter_sigma_fs: f64,
    /// Width of the window counted around each of the three peaks.
    pub analyzer_window_fs: i64,
}

impl Default for FransonConfig {
    fn default() -> Self {
        Self {
            arm_delay_fs: 30_000,
            fringe_period_pm: DEFAULT_FRINGE_PERIOD_PM,
            reference_pump_nm: 779.75,
            pump_offset_pm: CONSTRUCTIVE_OFFSET_PM,
            phase_offset_rad: constructive_phase_offset(CONSTRUCTIVE_OFFSET_PM, DEFAULT_FRINGE_PERIOD_PM),
            intrinsic_visibility: 1.0,
            single_photon_coherence_fs: 270.0,
            pump_coherence_fs: 1e10,
            jitter_sigma_fs: 3_000.0,
            analyzer_window_fs: 20_000,
        }
    }
}

/// Phase offset that puts a fringe maximum at `offset_pm`, wrapped to `(−π, π]`.
pub fn constructive_phase_offset(offset_pm: f64, period_pm: f64) -> f64 {
    crate::fitting::wrap_phase(-2.0 * PI * offset_pm / period_pm)
}

/// Pump detuning that advances the two-photon phase by 2π across a delay:
/// `λ₀² / (c τ)`.
pub fn derived_fringe_period_pm(pump_nm: f64, delay_fs: f64) -> f64 {
    let l = pump_nm * 1e-9;
    l * l / (SPEED_OF_LIGHT * delay_fs * 1e-15) * 1e12
}

impl FransonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arm_delay_fs < 0 {
            return Err(Error::invalid("arm delay must be >= 0"));
        }
        if !(self.fringe_period_pm > 0.0) {
            return Err(Error::invalid("fringe period must be positive"));
        }
        if !(0.0..=1.0).contains(&self.intrinsic_visibility) {
            return Err(Error::invalid("intrinsic visibility must be in [0, 1]"));
        }
        if !(self.single_photon_coherence_fs >= 0.0 && self.pump_coherence_fs >= 0.0) {
            return Err(Error::invalid("coherence times must be >= 0"));
        }
        if !(self.jitter_sigma_fs >= 0.0) || self.analyzer_window_fs <= 0 {
            return Err(Error::invalid("analyzer jitter must be >= 0 and window positive"));
        }
        if !self.phase_offset_rad.is_finite() || !self.pump_offset_pm.is_finite() {
            return Err(Error::invalid("phase and offset must be finite"));
        }
        Ok(())
    }

    /// The two conditions for two-photon interference without single-photon
    /// interference: `τ_sp < Δ < τ_pump`.
    pub fn coherence_ordering_ok(&self) -> bool {
        let d = self.arm_delay_fs as f64;
        self.single_photon_coherence_fs < d && d < self.pump_coherence_fs
    }

    /// Visibility after the coherence gate: intrinsic when the ordering holds,
    /// zero otherwise.
    pub fn effective_visibility(&self) -> f64 {
        if self.coherence_ordering_ok() {
            self.intrinsic_visibility
        } else {
            0.0
        }
    }

    pub fn phase_rad(&self) -> f64 {
        2.0 * PI * self.pump_offset_pm / self.fringe_period_pm + self.phase_offset_rad
    }

    pub fn with_offset(&self, pump_offset_pm: f64) -> Self {
        Self {
            pump_offset_pm,
            ..self.clone()
        }
    }

    /// Detection chain as seen behind the analyzer: wavelength-demultiplexed
    /// outputs (idler on channel 1) and the analyzer's detector jitter.
    pub fn analyzer_chain(&self, chain: &DetectionChain) -> DetectionChain {
        DetectionChain {
            routing: Routing::ByWavelength,
            jitter_sigma_fs: self.jitter_sigma_fs,
            ..chain.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Peak {
    /// Signal short, idler long: delay `−Δ`.
    Early,
    Central,
    /// Signal long, idler short: delay `+Δ`.
    Late,
}

impl Peak {
    /// Position of the peak in a `t₂ − t₁` histogram with the idler on
    /// channel 1.
    pub fn delay_fs(self, arm_delay_fs: i64) -> i64 {
        match self {
            Peak::Early => -arm_delay_fs,
            Peak::Central => 0,
            Peak::Late => arm_delay_fs,
        }
    }
}

/// Post-selection probabilities per emitted pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FransonOutcome {
    pub early: f64,
    pub central: f64,
    pub late: f64,
}

impl FransonOutcome {
    pub fn get(&self, peak: Peak) -> f64 {
        match peak {
            Peak::Early => self.early,
            Peak::Central => self.central,
            Peak::Late => self.late,
        }
    }

    /// Probability of losing the pair in the analyzer.
    pub fn dropped(&self) -> f64 {
        1.0 - self.early - self.central - self.late
    }
}

pub fn outcome_probabilities(cfg: &FransonConfig) -> FransonOutcome {
    let v = cfg.effective_visibility();
    FransonOutcome {
        early: 1.0 / 16.0,
        central: (2.0 + 2.0 * v * cfg.phase_rad().cos()) / 16.0,
        late: 1.0 / 16.0,
    }
}

/// Draw the analyzer fate of one pair. `None` means dropped; otherwise the
/// (signal, idler) delays.
#[inline]
pub(crate) fn sample_delays(outcome: &FransonOutcome, delay_fs: i64, rng: &mut Stream) -> Option<(i64, i64)> {
    let u = rng.uniform();
    if u < outcome.early {
        Some((0, delay_fs))
    } else if u < outcome.early + outcome.late {
        Some((delay_fs, 0))
    } else if u < outcome.early + outcome.late + outcome.central {
        // Short-short and long-long are indistinguishable; either time works.
        if rng.random::<bool>() {
            Some((0, 0))
        } else {
            Some((delay_fs, delay_fs))
        }
    } else {
        None
    }
}

/// Send every pair through the analyzer, dropping those it loses.
pub fn transform_pairs(pairs: &PairStream, cfg: &FransonConfig, seed: u64) -> Result<PairStream> {
    cfg.validate()?;
    let outcome = outcome_probabilities(cfg);
    let events: Vec<PairEvent> = pairs
        .events
        .iter()
        .filter_map(|ev| {
            let mut rng = Stream::new(seed, Domain::Analyzer, ev.pair_id);
            sample_delays(&outcome, cfg.arm_delay_fs, &mut rng).map(|(s, i)| PairEvent {
                signal_delay_fs: ev.signal_delay_fs + s,
                idler_delay_fs: ev.idler_delay_fs + i,
                ..*ev
            })
        })
        .collect();
    Ok(PairStream {
        events,
        ..pairs.clone()
    })
}

/// Counts around the three peaks of a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakCounts {
    pub early: f64,
    pub central: f64,
    pub late: f64,
}

pub fn peak_counts(h: &CoincidenceHistogram, cfg: &FransonConfig) -> Result<PeakCounts> {
    let count = |p: Peak| {
        h.window_counts(p.delay_fs(cfg.arm_delay_fs) as f64, cfg.analyzer_window_fs)
            .map(|c| c as f64)
    };
    Ok(PeakCounts {
        early: count(Peak::Early)?,
        central: count(Peak::Central)?,
        late: count(Peak::Late)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Expected true-coincidence counts, no noise and no accidentals.
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeRow {
    pub offset_pm: f64,
    pub central_counts: f64,
    pub side_early: f64,
    pub side_late: f64,
}

/// Histogram binning for analyzer acquisitions with the given config.
pub fn analyzer_histogram_config(cfg: &FransonConfig, base: &HistogramConfig) -> Result<HistogramConfig> {
    let h = HistogramConfig {
        coincidence_window_fs: cfg.analyzer_window_fs,
        ..base.clone()
    };
    if cfg.analyzer_window_fs % h.bin_width_fs != 0 {
        return Err(Error::invalid("analyzer window must be a multiple of the bin width"));
    }
    if cfg.arm_delay_fs + cfg.analyzer_window_fs > h.span_fs {
        return Err(Error::invalid("side peaks fall outside the histogram span"));
    }
    Ok(h)
}

/// One full acquisition through the analyzer at a single pump offset.
pub fn acquire_histogram(
    spec: &SourceSpec,
    chain: &DetectionChain,
    hist: &HistogramConfig,
    cfg: &FransonConfig,
    power_mw: f64,
    duration_s: f64,
    seed: u64,
) -> Result<CoincidenceHistogram> {
    cfg.validate()?;
    let h = analyzer_histogram_config(cfg, hist)?;
    Ok(pipeline::acquire(spec, &cfg.analyzer_chain(chain), &h, power_mw, duration_s, seed, Some(cfg))?
        .histogram)
}

/// Central and side peak counts as the pump offset is scanned.
#[allow(clippy::too_many_arguments)]
pub fn fringe_scan(
    spec: &SourceSpec,
    chain: &DetectionChain,
    hist: &HistogramConfig,
    cfg: &FransonConfig,
    offsets_pm: &[f64],
    power_mw: f64,
    duration_s: f64,
    mode: ScanMode,
    seed: u64,
) -> Result<Vec<FringeRow>> {
    cfg.validate()?;
    let (lo, hi) = offsets_pm
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let n = offsets_pm.len() as f64;
    if offsets_pm.len() < 2 || (hi - lo) * n / (n - 1.0) < cfg.fringe_period_pm * (1.0 - 1e-9) {
        return Err(Error::IllPosed("offsets must span at least one fringe period".into()));
    }
    let h = analyzer_histogram_config(cfg, hist)?;
    let achain = cfg.analyzer_chain(chain);
    achain.validate()?;
    let expected_pairs = spec.emitted_rate_hz(power_mw)
        * duration_s
        * achain.cross_channel_probability()
        * achain.window_capture(cfg.analyzer_window_fs);

    offsets_pm
        .iter()
        .enumerate()
        .map(|(k, &offset)| {
            let c = cfg.with_offset(offset);
            match mode {
                ScanMode::Analytic => {
                    let o = outcome_probabilities(&c);
                    Ok(FringeRow {
                        offset_pm: offset,
                        central_counts: expected_pairs * o.central,
                        side_early: expected_pairs * o.early,
                        side_late: expected_pairs * o.late,
                    })
                }
                ScanMode::MonteCarlo => {
                    let hist = pipeline::acquire(
                        spec,
                        &achain,
                        &h,
                        power_mw,
                        duration_s,
                        derive_seed(seed, Domain::SubRun, k as u64),
                        Some(&c),
                    )?
                    .histogram;
                    let p = peak_counts(&hist, &c)?;
                    Ok(FringeRow {
                        offset_pm: offset,
                        central_counts: p.central,
                        side_early: p.early,
                        side_late: p.late,
                    })
                }
            }
        })
        .collect()
}
