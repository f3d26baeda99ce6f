//! Detection chain: loss, routing to two detectors, detector efficiency, dark
//! counts and timing jitter. Turns pair events into a time-tag stream.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pair_source::{PairEvent, PairStream};
use crate::rng::{Domain, Stream};
use crate::units::{db_to_transmission, s_to_fs, FS_PER_S};
use crate::{Error, Result};

/// Jitter draws beyond this many sigma are rejected and redrawn, so a photon
/// never lands further than `JITTER_TRUNCATION * sigma` from its true time.
pub const JITTER_TRUNCATION: f64 = 8.0;

/// Dark counts are generated per channel in blocks of this length.
pub const DARK_BLOCK_FS: i64 = 1_000_000_000_000_000;

/// Per-photon loss between the generation point and the detector fibre.
///
/// The default split (facet, propagation over part of the chip, filtering and
/// coupler) is an assumption; only the 7 dB total is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossBudget {
    pub facet_db: f64,
    pub propagation_db: f64,
    pub filtering_db: f64,
}

impl Default for LossBudget {
    fn default() -> Self {
        Self {
            facet_db: 2.7,
            propagation_db: 1.2,
            filtering_db: 3.1,
        }
    }
}

impl LossBudget {
    pub fn total(db: f64) -> Self {
        Self {
            facet_db: 0.0,
            propagation_db: 0.0,
            filtering_db: db,
        }
    }

    pub fn total_db(&self) -> f64 {
        self.facet_db + self.propagation_db + self.filtering_db
    }

    pub fn transmission(&self) -> f64 {
        db_to_transmission(self.total_db())
    }
}

/// How the two photons of a pair reach the two detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// 50/50 coupler: each photon independently goes to channel 1 or 2.
    Splitter,
    /// Wavelength demultiplexing: idler to channel 1, signal to channel 2.
    ByWavelength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionChain {
    pub loss: LossBudget,
    pub routing: Routing,
    pub detector_efficiency: f64,
    pub dark_count_rate_hz: f64,
    pub jitter_sigma_fs: f64,
}

impl Default for DetectionChain {
    /// Calibrated so the default source reproduces the reported coincidence
    /// slope and CAR; the efficiency is a fitted number, not a device value.
    fn default() -> Self {
        Self {
            loss: LossBudget::default(),
            routing: Routing::Splitter,
            detector_efficiency: 0.0068,
            dark_count_rate_hz: 100.0,
            jitter_sigma_fs: 10_000.0,
        }
    }
}

impl DetectionChain {
    /// Lossless, noiseless, jitter-free chain with deterministic routing.
    pub fn ideal() -> Self {
        Self {
            loss: LossBudget::total(0.0),
            routing: Routing::ByWavelength,
            detector_efficiency: 1.0,
            dark_count_rate_hz: 0.0,
            jitter_sigma_fs: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.loss.transmission();
        if !(t.is_finite() && (0.0..=1.0).contains(&t)) {
            return Err(Error::invalid(format!(
                "loss of {} dB gives transmission {t} outside [0, 1]",
                self.loss.total_db()
            )));
        }
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(Error::invalid("detector efficiency must be in [0, 1]"));
        }
        if !(self.dark_count_rate_hz >= 0.0 && self.dark_count_rate_hz.is_finite()) {
            return Err(Error::invalid("dark count rate must be >= 0"));
        }
        if !(self.jitter_sigma_fs >= 0.0 && self.jitter_sigma_fs.is_finite()) {
            return Err(Error::invalid("jitter sigma must be >= 0"));
        }
        Ok(())
    }

    /// Probability that one photon produces a click.
    pub fn photon_detection_probability(&self) -> f64 {
        self.loss.transmission() * self.detector_efficiency
    }

    /// Probability that both photons click on different channels.
    pub fn cross_channel_probability(&self) -> f64 {
        let p = self.photon_detection_probability();
        match self.routing {
            Routing::Splitter => p * p / 2.0,
            Routing::ByWavelength => p * p,
        }
    }

    /// Fraction of a pair's delay distribution inside a window of full width
    /// `window_fs` centred on the peak. Two independent jitters give a relative
    /// delay with sigma `√2·σ`, so the fraction is `erf(w / (4σ))`.
    pub fn window_capture(&self, window_fs: i64) -> f64 {
        if self.jitter_sigma_fs == 0.0 {
            1.0
        } else {
            libm::erf(window_fs as f64 / (4.0 * self.jitter_sigma_fs))
        }
    }

    /// Expected coincidences inside `window_fs` per emitted pair.
    pub fn coincidence_efficiency(&self, window_fs: i64) -> f64 {
        self.cross_channel_probability() * self.window_capture(window_fs)
    }

    /// Expected singles rate per channel for an emitted pair rate.
    pub fn singles_rate_hz(&self, emitted_hz: f64) -> f64 {
        // Two photons per pair, each reaching a given channel with p/2 (splitter)
        // or one photon per channel with p (demultiplexer): p either way.
        emitted_hz * self.photon_detection_probability() + self.dark_count_rate_hz
    }

    /// Largest distance a click can land from its photon's arrival time.
    pub fn max_jitter_fs(&self) -> i64 {
        (JITTER_TRUNCATION * self.jitter_sigma_fs).ceil() as i64
    }

    /// Channel a photon is routed to. `u` is a uniform draw used by the splitter.
    #[inline]
    pub(crate) fn route(&self, is_signal: bool, u: f64) -> u8 {
        match self.routing {
            Routing::Splitter => {
                if u < 0.5 {
                    1
                } else {
                    2
                }
            }
            Routing::ByWavelength => {
                if is_signal {
                    2
                } else {
                    1
                }
            }
        }
    }

    #[inline]
    pub(crate) fn jitter(&self, rng: &mut Stream) -> i64 {
        if self.jitter_sigma_fs == 0.0 {
            return 0;
        }
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= JITTER_TRUNCATION {
                return (z * self.jitter_sigma_fs).round() as i64;
            }
        }
    }
}

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    pub time_fs: i64,
    pub channel: u8,
}

impl Tag {
    pub fn new(channel: u8, time_fs: i64) -> Self {
        Self { time_fs, channel }
    }
}

/// Sort key of the canonical tag order: time, then channel.
#[inline]
pub fn sort_tags(tags: &mut [Tag]) {
    tags.sort_unstable();
}

/// Time-ordered detector clicks on channels 1 and 2.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTagStream {
    tags: Vec<Tag>,
    pub duration_s: f64,
    pub seed: Option<u64>,
    pub chain: String,
}

impl TimeTagStream {
    /// Validates ordering and channel numbers.
    pub fn new(tags: Vec<Tag>, duration_s: f64) -> Result<Self> {
        for (i, t) in tags.iter().enumerate() {
            if t.channel != 1 && t.channel != 2 {
                return Err(Error::Format(format!(
                    "tag {i} has channel {}, expected 1 or 2",
                    t.channel
                )));
            }
            if i > 0 && t.time_fs < tags[i - 1].time_fs {
                return Err(Error::Unordered {
                    index: i,
                    previous_fs: tags[i - 1].time_fs,
                    time_fs: t.time_fs,
                });
            }
        }
        if !(duration_s >= 0.0 && duration_s.is_finite()) {
            return Err(Error::invalid("duration must be finite and >= 0"));
        }
        Ok(Self {
            tags,
            duration_s,
            seed: None,
            chain: String::new(),
        })
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<Tag> {
        self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Add a constant offset to every time.
    pub fn shifted(&self, offset_fs: i64) -> Self {
        Self {
            tags: self
                .tags
                .iter()
                .map(|t| Tag::new(t.channel, t.time_fs + offset_fs))
                .collect(),
            ..self.clone()
        }
    }
}

/// Clicks of one pair, appended to `out`.
#[inline]
fn detect_pair(ev: &PairEvent, chain: &DetectionChain, p: f64, seed: u64, out: &mut Vec<Tag>) {
    let mut rng = Stream::new(seed, Domain::Detection, ev.pair_id);
    for (is_signal, delay) in [(true, ev.signal_delay_fs), (false, ev.idler_delay_fs)] {
        let survive = rng.uniform();
        let route = rng.uniform();
        let jitter = chain.jitter(&mut rng);
        if survive < p {
            out.push(Tag::new(
                chain.route(is_signal, route),
                ev.emission_time_fs + delay + jitter,
            ));
        }
    }
}

/// Dark clicks of `channel` in block `block` (clipped to `duration_fs`),
/// drawn from the stream keyed by `key`.
pub(crate) fn dark_block(
    rate_hz: f64,
    channel: u8,
    block: u64,
    key: u64,
    duration_fs: i64,
    seed: u64,
    out: &mut Vec<Tag>,
) {
    if rate_hz <= 0.0 {
        return;
    }
    let start = block as i64 * DARK_BLOCK_FS;
    let end = (start + DARK_BLOCK_FS).min(duration_fs);
    let mut rng = Stream::new(seed, Domain::DarkCounts, key * 2 + (channel as u64 - 1));
    let mut t_rel = 0.0;
    loop {
        t_rel += rng.sample::<f64, _>(Exp1) / rate_hz;
        let t = start + (t_rel * FS_PER_S).round() as i64;
        if t >= end {
            break;
        }
        out.push(Tag::new(channel, t));
    }
}

/// Apply the chain to every pair and add dark counts over the run.
pub fn detect(pairs: &PairStream, chain: &DetectionChain, seed: u64) -> Result<TimeTagStream> {
    detect_slabs(pairs, chain, seed, pairs.duration_s.max(1e-15))
}

/// As [`detect`], with pairs processed in parallel time slabs of `slab_s`.
///
/// Every random draw is keyed by pair id or dark-count block, never by slab,
/// and the merged output is put into canonical `(time, channel)` order, so the
/// result does not depend on the slab length.
pub fn detect_slabs(
    pairs: &PairStream,
    chain: &DetectionChain,
    seed: u64,
    slab_s: f64,
) -> Result<TimeTagStream> {
    chain.validate()?;
    if !(slab_s > 0.0) {
        return Err(Error::invalid("slab length must be positive"));
    }
    if let Some(i) = pairs
        .events
        .windows(2)
        .position(|w| w[1].emission_time_fs < w[0].emission_time_fs)
    {
        return Err(Error::Unordered {
            index: i + 1,
            previous_fs: pairs.events[i].emission_time_fs,
            time_fs: pairs.events[i + 1].emission_time_fs,
        });
    }
    let p = chain.photon_detection_probability();
    let slab_fs = s_to_fs(slab_s).max(1);

    let mut slabs: Vec<&[PairEvent]> = Vec::new();
    let mut rest = &pairs.events[..];
    while !rest.is_empty() {
        let slab = rest[0].emission_time_fs.div_euclid(slab_fs);
        let n = rest.partition_point(|e| e.emission_time_fs.div_euclid(slab_fs) == slab);
        slabs.push(&rest[..n]);
        rest = &rest[n..];
    }
    let photon_tags: Vec<Vec<Tag>> = slabs
        .par_iter()
        .map(|slab| {
            let mut out = Vec::with_capacity((slab.len() as f64 * 2.0 * p * 1.1) as usize + 8);
            for ev in *slab {
                detect_pair(ev, chain, p, seed, &mut out);
            }
            out
        })
        .collect();

    let duration_fs = s_to_fs(pairs.duration_s);
    let blocks = (duration_fs + DARK_BLOCK_FS - 1) / DARK_BLOCK_FS;
    let dark_tags: Vec<Vec<Tag>> = (0..blocks as u64)
        .into_par_iter()
        .map(|b| {
            let mut out = Vec::new();
            for ch in [1, 2] {
                dark_block(chain.dark_count_rate_hz, ch, b, b, duration_fs, seed, &mut out);
            }
            out
        })
        .collect();

    let mut tags: Vec<Tag> = photon_tags.into_iter().chain(dark_tags).flatten().collect();
    sort_tags(&mut tags);
    let mut stream = TimeTagStream::new(tags, pairs.duration_s)?;
    stream.seed = Some(seed);
    stream.chain = format!(
        "loss {:.3} dB/photon, efficiency {}, darks {} Hz, jitter {} fs, {:?}",
        chain.loss.total_db(),
        chain.detector_efficiency,
        chain.dark_count_rate_hz,
        chain.jitter_sigma_fs,
        chain.routing
    );
    Ok(stream)
}

/// Counts per second on channels 1 and 2. Zero for an empty or zero-length
/// stream.
pub fn singles_rates(tags: &TimeTagStream) -> (f64, f64) {
    if tags.duration_s <= 0.0 {
        return (0.0, 0.0);
    }
    let n1 = tags.tags.iter().filter(|t| t.channel == 1).count();
    let n2 = tags.tags.len() - n1;
    (n1 as f64 / tags.duration_s, n2 as f64 / tags.duration_s)
}
