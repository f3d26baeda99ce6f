//! SPDC pair emission: a homogeneous Poisson process of photon pairs whose
//! rate is proportional to pump power, with signal wavelengths drawn from the
//! biphoton spectrum and idlers fixed by energy conservation.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coincidence::HistogramConfig;
use crate::detection::DetectionChain;
use crate::rng::{Domain, Stream};
use crate::units::FS_PER_S;
use crate::{Error, Result};

/// Emission is generated in independent one-second blocks so a run of any
/// length can be reproduced (and parallelized) block by block.
pub const EMISSION_BLOCK_FS: i64 = 1_000_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralShape {
    Gaussian,
    Sinc2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSpec {
    /// Detected (external) coincidence rate per mW of coupled pump.
    pub pcr_slope_hz_per_mw: f64,
    pub center_wavelength_nm: f64,
    pub bandwidth_fwhm_nm: f64,
    pub spectral_shape: SpectralShape,
    pub pump_wavelength_nm: f64,
    pub pump_offset_pm: f64,
    pub pump_coherence_time_s: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            pcr_slope_hz_per_mw: 580.0,
            center_wavelength_nm: 1560.0,
            bandwidth_fwhm_nm: 30.0,
            spectral_shape: SpectralShape::Gaussian,
            pump_wavelength_nm: 780.0,
            pump_offset_pm: 0.0,
            pump_coherence_time_s: 1e-5,
        }
    }
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pcr_slope_hz_per_mw >= 0.0 && self.pcr_slope_hz_per_mw.is_finite()) {
            return Err(Error::invalid("PCR slope must be finite and >= 0"));
        }
        if !(self.bandwidth_fwhm_nm > 0.0) {
            return Err(Error::invalid("source bandwidth must be positive"));
        }
        if !(self.pump_coherence_time_s > 0.0) {
            return Err(Error::invalid("pump coherence time must be positive"));
        }
        let pump = self.pump_nm();
        if !(pump > 0.0 && self.center_wavelength_nm > pump) {
            return Err(Error::invalid(
                "signal centre wavelength must exceed the pump wavelength",
            ));
        }
        Ok(())
    }

    /// Pump wavelength including the offset.
    pub fn pump_nm(&self) -> f64 {
        self.pump_wavelength_nm + self.pump_offset_pm * 1e-3
    }

    /// Emitted pair rate for `power_mw` of coupled pump.
    ///
    /// The configured slope is the rate seen at the detectors, so the emitted
    /// rate divides out the coincidence efficiency of the reference detection
    /// chain and window (defaults of [`DetectionChain`] and
    /// [`HistogramConfig`]).
    pub fn emitted_rate_hz(&self, power_mw: f64) -> f64 {
        self.pcr_slope_hz_per_mw * power_mw / reference_coincidence_efficiency()
    }

    fn sample_signal_nm(&self, rng: &mut Stream) -> f64 {
        let pump = self.pump_nm();
        loop {
            let x = match self.spectral_shape {
                SpectralShape::Gaussian => {
                    let sigma = self.bandwidth_fwhm_nm / (2.0 * (2.0 * 2f64.ln()).sqrt());
                    self.center_wavelength_nm + sigma * rng.sample::<f64, _>(StandardNormal)
                }
                SpectralShape::Sinc2 => {
                    // sinc²(u) ≤ 2/(1+u²): rejection from a Cauchy envelope.
                    let u = (PI_F * (rng.uniform() - 0.5)).tan();
                    let accept = crate::dispersion_qpm::sinc(u).powi(2) * (1.0 + u * u) / 2.0;
                    if rng.uniform() >= accept {
                        continue;
                    }
                    self.center_wavelength_nm + u * self.bandwidth_fwhm_nm / (2.0 * SINC2_HALF_WIDTH)
                }
            };
            // The idler must have positive frequency.
            if x > pump * 1.000_001 {
                return x;
            }
        }
    }
}

const PI_F: f64 = std::f64::consts::PI;
/// `x` with `sinc²(x) = 1/2`.
const SINC2_HALF_WIDTH: f64 = 1.391_557_377_160_35;

/// Coincidence efficiency the emitted-rate calibration is referred to.
pub fn reference_coincidence_efficiency() -> f64 {
    DetectionChain::default().coincidence_efficiency(HistogramConfig::default().coincidence_window_fs)
}

/// Idler wavelength fixed by `1/λs + 1/λi = 1/λp`.
pub fn idler_wavelength_nm(pump_nm: f64, signal_nm: f64) -> f64 {
    1.0 / (1.0 / pump_nm - 1.0 / signal_nm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEvent {
    pub pair_id: u64,
    pub emission_time_fs: i64,
    pub signal_wavelength_nm: f64,
    pub idler_wavelength_nm: f64,
    /// Extra path delays picked up downstream, e.g. in an interferometer.
    pub signal_delay_fs: i64,
    pub idler_delay_fs: i64,
}

/// A finite run of emitted pairs, sorted by emission time.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStream {
    pub events: Vec<PairEvent>,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub seed: u64,
}

/// Lazy pair generator. Each one-second block restarts the exponential gap
/// sequence from its own random stream; by memorylessness the concatenation is
/// still a homogeneous Poisson process.
pub struct PairGenerator {
    spec: SourceSpec,
    rate_hz: f64,
    duration_fs: i64,
    seed: u64,
    block: i64,
    block_end_fs: i64,
    rng: Stream,
    t_rel_s: f64,
    next_id: u64,
    done: bool,
}

impl PairGenerator {
    pub fn new(spec: &SourceSpec, power_mw: f64, duration_s: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        if !(power_mw >= 0.0 && power_mw.is_finite()) {
            return Err(Error::invalid(format!("pump power must be >= 0, got {power_mw}")));
        }
        if !(duration_s > 0.0 && duration_s * FS_PER_S < i64::MAX as f64 / 2.0) {
            return Err(Error::invalid(format!("duration {duration_s} s out of range")));
        }
        let rate_hz = spec.emitted_rate_hz(power_mw);
        let duration_fs = crate::units::s_to_fs(duration_s);
        let mut g = Self {
            spec: spec.clone(),
            rate_hz,
            duration_fs,
            seed,
            block: -1,
            block_end_fs: 0,
            rng: Stream::new(seed, Domain::Emission, 0),
            t_rel_s: 0.0,
            next_id: 0,
            done: rate_hz == 0.0,
        };
        g.advance_block();
        Ok(g)
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    fn advance_block(&mut self) {
        self.block += 1;
        let start = self.block * EMISSION_BLOCK_FS;
        if start >= self.duration_fs {
            self.done = true;
            return;
        }
        self.block_end_fs = (start + EMISSION_BLOCK_FS).min(self.duration_fs);
        self.rng = Stream::new(self.seed, Domain::Emission, self.block as u64);
        self.t_rel_s = 0.0;
    }
}

impl Iterator for PairGenerator {
    type Item = PairEvent;

    fn next(&mut self) -> Option<PairEvent> {
        while !self.done {
            self.t_rel_s += self.rng.sample::<f64, _>(Exp1) / self.rate_hz;
            let start = self.block * EMISSION_BLOCK_FS;
            let t = start as f64 + (self.t_rel_s * FS_PER_S).round();
            if t < self.block_end_fs as f64 {
                let signal = self.spec.sample_signal_nm(&mut self.rng);
                let ev = PairEvent {
                    pair_id: self.next_id,
                    emission_time_fs: t as i64,
                    signal_wavelength_nm: signal,
                    idler_wavelength_nm: idler_wavelength_nm(self.spec.pump_nm(), signal),
                    signal_delay_fs: 0,
                    idler_delay_fs: 0,
                };
                self.next_id += 1;
                return Some(ev);
            }
            self.advance_block();
        }
        None
    }
}

/// Emit pairs for `duration_s` at `power_mw`; deterministic in `seed`.
pub fn generate_pairs(
    spec: &SourceSpec,
    power_mw: f64,
    duration_s: f64,
    seed: u64,
) -> Result<PairStream> {
    let gen = PairGenerator::new(spec, power_mw, duration_s, seed)?;
    let rate_hz = gen.rate_hz();
    Ok(PairStream {
        events: gen.collect(),
        duration_s,
        rate_hz,
        seed,
    })
}

/// Pairs per second per mW of pump per MHz of bandwidth, corrected for the
/// total pair loss: `pcr · 10^(loss/10) / (power · bandwidth)`.
pub fn internal_brightness(
    detected_pcr_hz: f64,
    power_mw: f64,
    bandwidth_mhz: f64,
    loss_db: f64,
) -> Result<f64> {
    if !(power_mw > 0.0) || !(bandwidth_mhz > 0.0) {
        return Err(Error::Domain("power and bandwidth must be positive".into()));
    }
    if !(detected_pcr_hz >= 0.0) || !loss_db.is_finite() {
        return Err(Error::Domain("rate must be >= 0 and loss finite".into()));
    }
    Ok(detected_pcr_hz * 10f64.powf(loss_db / 10.0) / (power_mw * bandwidth_mhz))
}
