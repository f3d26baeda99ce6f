//! Two-channel time-tag correlation: delay histograms, coincidence and
//! accidental counting, CAR and PCR, and power scans.
//!
//! Delays are `t₂ − t₁` (channel 2 minus channel 1). The histogram covers
//! `[−span, span)` in bins aligned to zero delay, so refining the bin width
//! redistributes counts without changing the total.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionChain, Tag, TimeTagStream};
use crate::pair_source::SourceSpec;
use crate::pipeline;
use crate::rng::{derive_seed, Domain};
use crate::units::FS_PER_S;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub bin_width_fs: i64,
    /// Half-width of the histogram.
    pub span_fs: i64,
    /// Full width of the coincidence window around the peak.
    pub coincidence_window_fs: i64,
    /// Combined width of the two accidental windows, one on each side.
    pub accidental_window_total_fs: i64,
    /// Gap between the peak centre and the inner edge of each accidental
    /// window, in coincidence-window widths.
    pub accidental_offset_windows: i64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bin_width_fs: 2_000,
            span_fs: 500_000,
            coincidence_window_fs: 50_000,
            accidental_window_total_fs: 240_000,
            accidental_offset_windows: 5,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        let b = self.bin_width_fs;
        if b <= 0 || self.span_fs <= 0 || self.coincidence_window_fs <= 0 {
            return Err(Error::invalid("bin width, span and window must be positive"));
        }
        if self.accidental_window_total_fs <= 0 || self.accidental_offset_windows < 1 {
            return Err(Error::invalid(
                "accidental windows must be positive and offset by at least one window",
            ));
        }
        if self.span_fs % b != 0
            || self.coincidence_window_fs % b != 0
            || (self.accidental_window_total_fs / 2) % b != 0
            || self.accidental_window_total_fs % 2 != 0
        {
            return Err(Error::invalid(
                "bin width must divide the span, the coincidence window and each accidental window",
            ));
        }
        if self.coincidence_window_fs > self.span_fs {
            return Err(Error::invalid("coincidence window exceeds the span"));
        }
        if self.accidental_reach_fs() > self.span_fs {
            return Err(Error::invalid(
                "accidental windows do not fit inside the span around zero delay",
            ));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        (2 * self.span_fs / self.bin_width_fs) as usize
    }

    /// Distance from the peak centre to the outer edge of an accidental window.
    fn accidental_reach_fs(&self) -> i64 {
        self.accidental_offset_windows * self.coincidence_window_fs
            + self.accidental_window_total_fs / 2
    }

    #[inline]
    fn bin_of(&self, delay_fs: i64) -> Option<usize> {
        if delay_fs < -self.span_fs || delay_fs >= self.span_fs {
            None
        } else {
            Some(((delay_fs + self.span_fs) / self.bin_width_fs) as usize)
        }
    }
}

/// Delay histogram plus the acquisition time it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub config: HistogramConfig,
    pub counts: Vec<u64>,
    pub duration_s: f64,
}

impl CoincidenceHistogram {
    pub fn empty(config: &HistogramConfig, duration_s: f64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            counts: vec![0; config.bins()],
            duration_s,
        })
    }

    pub fn bin_centers_fs(&self) -> Vec<f64> {
        let c = &self.config;
        (0..self.counts.len())
            .map(|i| (-c.span_fs) as f64 + (i as f64 + 0.5) * c.bin_width_fs as f64)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum of two acquisitions with the same binning.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.config != other.config {
            return Err(Error::invalid("cannot merge histograms with different binning"));
        }
        Ok(Self {
            config: self.config.clone(),
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            duration_s: self.duration_s + other.duration_s,
        })
    }

    /// Bins `[start, start + n)` covering a window of `width_fs` centred at
    /// `center_fs`, or `None` if it leaves the histogram.
    fn window_bins(&self, center_fs: f64, width_fs: i64) -> Option<std::ops::Range<usize>> {
        let c = &self.config;
        let n = (width_fs / c.bin_width_fs) as usize;
        let start = ((center_fs - width_fs as f64 / 2.0 + c.span_fs as f64) / c.bin_width_fs as f64)
            .round();
        if start < 0.0 || start as usize + n > self.counts.len() {
            None
        } else {
            Some(start as usize..start as usize + n)
        }
    }

    /// Counts in a window of `width_fs` (a multiple of the bin width) centred
    /// on `center_fs`, snapped to the nearest bin edges.
    pub fn window_counts(&self, center_fs: f64, width_fs: i64) -> Result<u64> {
        if width_fs <= 0 || width_fs % self.config.bin_width_fs != 0 {
            return Err(Error::invalid("window must be a positive multiple of the bin width"));
        }
        let r = self
            .window_bins(center_fs, width_fs)
            .ok_or_else(|| Error::Domain(format!("window at {center_fs} fs leaves the histogram")))?;
        Ok(self.counts[r].iter().sum())
    }

    /// Peak position: the coincidence-window-wide stretch of bins with the
    /// most counts, refined to the centroid of the counts inside it.
    ///
    /// A single maximum bin is too noisy at a few counts per bin; summing over
    /// the window first keeps the estimate on the true peak.
    pub fn peak_center_fs(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::EmptyHistogram);
        }
        let k = ((self.config.coincidence_window_fs / self.config.bin_width_fs) as usize)
            .clamp(1, self.counts.len());
        let mut sum: u64 = self.counts[..k].iter().sum();
        let (mut best, mut best_start) = (sum, 0);
        for start in 1..=self.counts.len() - k {
            sum = sum + self.counts[start + k - 1] - self.counts[start - 1];
            if sum > best {
                best = sum;
                best_start = start;
            }
        }
        let centers = self.bin_centers_fs();
        let (mut w, mut s) = (0.0, 0.0);
        for (&c, &x) in self.counts[best_start..best_start + k].iter().zip(&centers[best_start..]) {
            w += c as f64;
            s += c as f64 * x;
        }
        Ok(s / w)
    }
}

/// Bounded-memory single-pass correlator.
///
/// Keeps, per channel, only the clicks younger than the histogram span, and
/// histograms each new click against the other channel's recent clicks. Each
/// cross-channel pair is therefore counted exactly once, when its later tag
/// arrives.
pub struct Correlator {
    hist: CoincidenceHistogram,
    recent: [VecDeque<i64>; 2],
    last: Option<i64>,
    index: usize,
}

impl Correlator {
    pub fn new(config: &HistogramConfig) -> Result<Self> {
        Ok(Self {
            hist: CoincidenceHistogram::empty(config, 0.0)?,
            recent: [VecDeque::new(), VecDeque::new()],
            last: None,
            index: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, tag: Tag) -> Result<()> {
        if let Some(prev) = self.last {
            if tag.time_fs < prev {
                return Err(Error::Unordered {
                    index: self.index,
                    previous_fs: prev,
                    time_fs: tag.time_fs,
                });
            }
        }
        let ch = match tag.channel {
            1 => 0,
            2 => 1,
            c => return Err(Error::Format(format!("channel {c} at tag {}", self.index))),
        };
        self.last = Some(tag.time_fs);
        self.index += 1;

        let t = tag.time_fs;
        let span = self.hist.config.span_fs;
        for q in &mut self.recent {
            while q.front().is_some_and(|&x| t - x > span) {
                q.pop_front();
            }
        }
        let cfg = &self.hist.config;
        for &x in &self.recent[1 - ch] {
            let delay = if ch == 1 { t - x } else { x - t };
            if let Some(b) = cfg.bin_of(delay) {
                self.hist.counts[b] += 1;
            }
        }
        self.recent[ch].push_back(t);
        Ok(())
    }

    pub fn finish(mut self, duration_s: f64) -> CoincidenceHistogram {
        self.hist.duration_s = duration_s;
        self.hist
    }
}

/// Streaming cross-correlation of a tag stream.
pub fn correlate(tags: &TimeTagStream, cfg: &HistogramConfig) -> Result<CoincidenceHistogram> {
    correlate_tags(tags.tags(), tags.duration_s, cfg)
}

/// As [`correlate`] on a raw slice, which must be time-ordered.
pub fn correlate_tags(
    tags: &[Tag],
    duration_s: f64,
    cfg: &HistogramConfig,
) -> Result<CoincidenceHistogram> {
    let mut c = Correlator::new(cfg)?;
    for &t in tags {
        c.push(t)?;
    }
    Ok(c.finish(duration_s))
}

/// O(n²) reference: every (channel 1, channel 2) pair histogrammed directly.
pub fn correlate_brute_force(
    tags: &[Tag],
    duration_s: f64,
    cfg: &HistogramConfig,
) -> Result<CoincidenceHistogram> {
    let mut h = CoincidenceHistogram::empty(cfg, duration_s)?;
    for a in tags.iter().filter(|t| t.channel == 1) {
        for b in tags.iter().filter(|t| t.channel == 2) {
            if let Some(i) = cfg.bin_of(b.time_fs - a.time_fs) {
                h.counts[i] += 1;
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarPcr {
    /// Raw counts in the coincidence window.
    pub coincidences: u64,
    /// Raw counts in both accidental windows.
    pub accidentals_raw: u64,
    /// Accidentals scaled to the coincidence window width.
    pub accidentals: f64,
    pub car: f64,
    /// Poisson standard deviation of `car`.
    pub car_sigma: f64,
    pub pcr_hz: f64,
    /// No accidentals were seen; `car` is `C_C / 1`, a lower bound.
    pub lower_bound: bool,
    pub peak_delay_fs: f64,
}

/// Coincidence-to-accidental ratio and pair coincidence rate.
pub fn car_pcr(h: &CoincidenceHistogram) -> Result<CarPcr> {
    let peak = h.peak_center_fs()?;
    car_pcr_at(h, peak)
}

/// As [`car_pcr`] with the peak position given rather than located.
pub fn car_pcr_at(h: &CoincidenceHistogram, peak_fs: f64) -> Result<CarPcr> {
    let c = &h.config;
    if h.total() == 0 {
        return Err(Error::EmptyHistogram);
    }
    let coincidences = h.window_counts(peak_fs, c.coincidence_window_fs)?;
    let half = c.accidental_window_total_fs / 2;
    let offset = (c.accidental_offset_windows * c.coincidence_window_fs) as f64;
    let side = |center: f64| {
        h.window_counts(center, half)
            .map_err(|_| Error::Domain("accidental windows leave the histogram".into()))
    };
    let accidentals_raw =
        side(peak_fs - offset - half as f64 / 2.0)? + side(peak_fs + offset + half as f64 / 2.0)?;
    let scale = c.coincidence_window_fs as f64 / c.accidental_window_total_fs as f64;
    let accidentals = accidentals_raw as f64 * scale;
    let lower_bound = accidentals_raw == 0;
    let cc = coincidences as f64;
    let car = if lower_bound { cc } else { cc / accidentals };
    let car_sigma = if lower_bound || coincidences == 0 {
        f64::INFINITY
    } else {
        car * (1.0 / cc + 1.0 / accidentals_raw as f64).sqrt()
    };
    let pcr_hz = if h.duration_s > 0.0 { cc / h.duration_s } else { 0.0 };
    Ok(CarPcr {
        coincidences,
        accidentals_raw,
        accidentals,
        car,
        car_sigma,
        pcr_hz,
        lower_bound,
        peak_delay_fs: peak_fs,
    })
}

/// Closed-form CAR expected from the measured coincidence rate and singles:
/// `C_rate / (R₁ R₂ w)`, with `R₁ R₂ w` the accidental rate in a window `w`.
pub fn car_prediction(coincidence_rate_hz: f64, r1_hz: f64, r2_hz: f64, window_fs: i64) -> f64 {
    coincidence_rate_hz / (r1_hz * r2_hz * window_fs as f64 / FS_PER_S)
}

/// How long each point of a scan integrates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationPolicy {
    Fixed { duration_s: f64 },
    /// Integrate until the predicted raw accidental count reaches the target,
    /// within `[min_duration_s, max_duration_s]`.
    TargetAccidentals {
        accidentals: f64,
        min_duration_s: f64,
        max_duration_s: f64,
    },
}

impl DurationPolicy {
    pub fn duration_s(
        &self,
        spec: &SourceSpec,
        chain: &DetectionChain,
        cfg: &HistogramConfig,
        power_mw: f64,
    ) -> f64 {
        match *self {
            DurationPolicy::Fixed { duration_s } => duration_s,
            DurationPolicy::TargetAccidentals {
                accidentals,
                min_duration_s,
                max_duration_s,
            } => {
                let r = chain.singles_rate_hz(spec.emitted_rate_hz(power_mw));
                let rate = r * r * cfg.accidental_window_total_fs as f64 / FS_PER_S;
                (accidentals / rate).clamp(min_duration_s, max_duration_s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub power_mw: f64,
    pub pcr_hz: f64,
    pub car: f64,
    pub car_pred: f64,
    pub car_sigma: f64,
    pub lower_bound: bool,
    pub duration_s: f64,
    pub coincidences: u64,
    pub accidentals_raw: u64,
    pub singles1_hz: f64,
    pub singles2_hz: f64,
}

/// Full pipeline at each pump power: emission, detection, correlation and
/// CAR/PCR extraction, with the closed-form prediction alongside.
pub fn car_scan(
    spec: &SourceSpec,
    chain: &DetectionChain,
    cfg: &HistogramConfig,
    powers_mw: &[f64],
    policy: DurationPolicy,
    seed: u64,
) -> Result<Vec<ScanRow>> {
    if powers_mw.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::invalid("scan powers must be positive"));
    }
    powers_mw
        .par_iter()
        .enumerate()
        .map(|(k, &power_mw)| {
            let duration_s = policy.duration_s(spec, chain, cfg, power_mw);
            let acq = pipeline::acquire(
                spec,
                chain,
                cfg,
                power_mw,
                duration_s,
                derive_seed(seed, Domain::SubRun, k as u64),
                None,
            )?;
            let (r1, r2) = acq.singles_rates_hz();
            let cp = match car_pcr(&acq.histogram) {
                Ok(cp) => cp,
                Err(Error::EmptyHistogram) => CarPcr {
                    coincidences: 0,
                    accidentals_raw: 0,
                    accidentals: 0.0,
                    car: 0.0,
                    car_sigma: f64::INFINITY,
                    pcr_hz: 0.0,
                    lower_bound: true,
                    peak_delay_fs: 0.0,
                },
                Err(e) => return Err(e),
            };
            Ok(ScanRow {
                power_mw,
                pcr_hz: cp.pcr_hz,
                car: cp.car,
                car_pred: car_prediction(cp.pcr_hz, r1, r2, cfg.coincidence_window_fs),
                car_sigma: cp.car_sigma,
                lower_bound: cp.lower_bound,
                duration_s,
                coincidences: cp.coincidences,
                accidentals_raw: cp.accidentals_raw,
                singles1_hz: r1,
                singles2_hz: r2,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(v: &[(u8, i64)]) -> Vec<Tag> {
        v.iter().map(|&(c, t)| Tag::new(c, t)).collect()
    }

    #[test]
    fn coincident_tags_land_in_zero_bin() {
        let cfg = HistogramConfig::default();
        let h = correlate_tags(&tags(&[(1, 1000), (2, 1000)]), 1.0, &cfg).unwrap();
        assert_eq!(h.total(), 1);
        let zero = (cfg.span_fs / cfg.bin_width_fs) as usize;
        assert_eq!(h.counts[zero], 1);
    }

    #[test]
    fn sign_convention_and_span_edges() {
        let cfg = HistogramConfig::default();
        let t = tags(&[(2, 0), (1, 10_000), (2, 10_000 + 499_999), (2, 10_000 + 500_000)]);
        let h = correlate_tags(&t, 1.0, &cfg).unwrap();
        assert_eq!(h, correlate_brute_force(&t, 1.0, &cfg).unwrap());
        assert_eq!(h.total(), 2);
        let centers = h.bin_centers_fs();
        let nonzero: Vec<f64> = (0..h.counts.len()).filter(|&i| h.counts[i] > 0).map(|i| centers[i]).collect();
        assert_eq!(nonzero, vec![-9_000.0, 499_000.0]);
    }

    #[test]
    fn unsorted_input_rejected() {
        let err = correlate_tags(&tags(&[(1, 5), (2, 3)]), 1.0, &HistogramConfig::default());
        assert!(matches!(err, Err(Error::Unordered { index: 1, .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = HistogramConfig::default();
        assert!(c.validate().is_ok());
        c.bin_width_fs = 3000;
        assert!(c.validate().is_err());
        let c = HistogramConfig {
            coincidence_window_fs: 600_000,
            ..HistogramConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn car_of_reported_example() {
        // Two 50 ps accidental windows, so raw accidentals scale by 1/2.
        let cfg = HistogramConfig {
            accidental_window_total_fs: 100_000,
            ..HistogramConfig::default()
        };
        let mut h = CoincidenceHistogram::empty(&cfg, 8.0).unwrap();
        let zero = (cfg.span_fs / cfg.bin_width_fs) as usize;
        h.counts[zero] = 1635;
        h.counts[zero + 140] = 1;
        h.counts[zero - 140] = 1;
        let r = car_pcr(&h).unwrap();
        assert_eq!(r.coincidences, 1635);
        assert_eq!(r.accidentals_raw, 2);
        assert_eq!(r.accidentals, 1.0);
        assert_eq!(r.car, 1635.0);
        assert!((r.pcr_hz - 1635.0 / 8.0).abs() < 1e-12);
        assert!(!r.lower_bound);
    }

    #[test]
    fn zero_accidentals_flag_lower_bound() {
        let cfg = HistogramConfig::default();
        let mut h = CoincidenceHistogram::empty(&cfg, 30.0).unwrap();
        h.counts[250] = 100;
        let r = car_pcr(&h).unwrap();
        assert!(r.lower_bound);
        assert_eq!(r.car, 100.0);
    }

    #[test]
    fn empty_histogram_errors() {
        let h = CoincidenceHistogram::empty(&HistogramConfig::default(), 1.0).unwrap();
        assert!(matches!(car_pcr(&h), Err(Error::EmptyHistogram)));
    }

    #[test]
    fn merge_is_associative() {
        let cfg = HistogramConfig::default();
        let mk = |t: &[(u8, i64)], d| correlate_tags(&tags(t), d, &cfg).unwrap();
        let a = mk(&[(1, 0), (2, 5_000)], 1.0);
        let b = mk(&[(1, 0), (2, -0), (2, 70_000)], 2.0);
        let c = mk(&[(2, 0), (1, 1_000)], 3.0);
        let left = a.merge(&b).unwrap().merge(&c).unwrap();
        let right = a.merge(&b.merge(&c).unwrap()).unwrap();
        assert_eq!(left, right);
        assert_eq!(left.duration_s, 6.0);
    }

    #[test]
    fn prediction_formula() {
        // 1 Hz coincidences, 1 kHz singles, 1 ns window → 1e-3 Hz accidentals.
        assert!((car_prediction(1.0, 1e3, 1e3, 1_000_000) - 1000.0).abs() < 1e-9);
    }
}
