//! Fused emission → analyzer → detection → correlation for long acquisitions.
//!
//! Instead of materializing every emitted pair, each one-second block draws
//! only the pairs that leave at least one click: a Poisson process thinned by
//! `q = 1 − (1 − p)²` (times the analyzer's pass probability when one is
//! present), followed by the conditional photon fates. This is equal in
//! distribution to chaining [`generate_pairs`](crate::pair_source::generate_pairs),
//! [`transform_pairs`](crate::franson::transform_pairs) and
//! [`detect`](crate::detection::detect), but draws from different random
//! streams, so the two paths agree statistically, not bit for bit.
//!
//! Blocks are generated in parallel and fed to the correlator in block order
//! through a small merge buffer, so results do not depend on thread count.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::coincidence::{CoincidenceHistogram, Correlator, HistogramConfig};
use crate::detection::{dark_block, sort_tags, DetectionChain, Tag, DARK_BLOCK_FS};
use crate::franson::{outcome_probabilities, sample_delays, FransonConfig, FransonOutcome};
use crate::pair_source::SourceSpec;
use crate::rng::{Domain, Stream};
use crate::units::{s_to_fs, FS_PER_S};
use crate::{Error, Result};

/// Longest single time base; longer acquisitions are split and merged.
pub const MAX_SUBRUN_S: f64 = 1000.0;
const BLOCK_FS: i64 = DARK_BLOCK_FS;
/// Blocks generated per parallel batch.
const BATCH: usize = 16;
/// Sub-run `r` numbers its blocks from `r * SUBRUN_BLOCK_STRIDE`.
const SUBRUN_BLOCK_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub histogram: CoincidenceHistogram,
    /// Clicks on channels 1 and 2.
    pub singles: [u64; 2],
    pub duration_s: f64,
}

impl Acquisition {
    pub fn singles_rates_hz(&self) -> (f64, f64) {
        if self.duration_s <= 0.0 {
            return (0.0, 0.0);
        }
        (
            self.singles[0] as f64 / self.duration_s,
            self.singles[1] as f64 / self.duration_s,
        )
    }
}

struct BlockSampler<'a> {
    chain: &'a DetectionChain,
    franson: Option<(&'a FransonConfig, FransonOutcome)>,
    /// Rate of pairs that pass the analyzer and leave at least one click.
    rate_hz: f64,
    p: f64,
    q: f64,
    duration_fs: i64,
    seed: u64,
}

impl BlockSampler<'_> {
    fn block(&self, local: u64, global: u64) -> Vec<Tag> {
        let start = local as i64 * BLOCK_FS;
        let end = (start + BLOCK_FS).min(self.duration_fs);
        let mut out = Vec::new();
        if self.rate_hz > 0.0 {
            let mut rng = Stream::new(self.seed, Domain::Acquisition, global);
            let both = self.p * self.p / self.q;
            let mut t_rel = 0.0;
            loop {
                t_rel += rng.sample::<f64, _>(Exp1) / self.rate_hz;
                let t = start + (t_rel * FS_PER_S).round() as i64;
                if t >= end {
                    break;
                }
                let (sd, id) = match &self.franson {
                    Some((cfg, outcome)) => loop {
                        // Conditioned on passing the analyzer.
                        if let Some(d) = sample_delays(outcome, cfg.arm_delay_fs, &mut rng) {
                            break d;
                        }
                    },
                    None => (0, 0),
                };
                let u = rng.uniform();
                let (signal, idler) = if u < both {
                    (true, true)
                } else if u < both + (1.0 - both) / 2.0 {
                    (true, false)
                } else {
                    (false, true)
                };
                for (is_signal, alive, delay) in [(true, signal, sd), (false, idler, id)] {
                    if alive {
                        let ch = self.chain.route(is_signal, rng.uniform());
                        out.push(Tag::new(ch, t + delay + self.chain.jitter(&mut rng)));
                    }
                }
            }
        }
        for ch in [1, 2] {
            dark_block(self.chain.dark_count_rate_hz, ch, local, global, self.duration_fs, self.seed, &mut out);
        }
        sort_tags(&mut out);
        out
    }
}

/// Merge two sorted runs.
fn merge_sorted(a: Vec<Tag>, b: Vec<Tag>) -> Vec<Tag> {
    if a.is_empty() {
        return b;
    }
    if b.is_empty() {
        return a;
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Simulate an acquisition of `duration_s` at `power_mw` and correlate it.
///
/// With `franson` set, pairs first pass through the analyzer (see
/// [`crate::franson`]) and only the post-selected ones are detected.
pub fn acquire(
    spec: &SourceSpec,
    chain: &DetectionChain,
    hist: &HistogramConfig,
    power_mw: f64,
    duration_s: f64,
    seed: u64,
    franson: Option<&FransonConfig>,
) -> Result<Acquisition> {
    acquire_with_sink(spec, chain, hist, power_mw, duration_s, seed, franson, |_| {})
}

/// As [`acquire`], also handing every tag, in order, to `sink`. Tags of
/// successive sub-runs each start from time zero.
#[allow(clippy::too_many_arguments)]
pub fn acquire_with_sink(
    spec: &SourceSpec,
    chain: &DetectionChain,
    hist: &HistogramConfig,
    power_mw: f64,
    duration_s: f64,
    seed: u64,
    franson: Option<&FransonConfig>,
    mut sink: impl FnMut(Tag),
) -> Result<Acquisition> {
    spec.validate()?;
    chain.validate()?;
    hist.validate()?;
    if let Some(f) = franson {
        f.validate()?;
    }
    if !(power_mw >= 0.0 && power_mw.is_finite()) {
        return Err(Error::invalid(format!("pump power must be >= 0, got {power_mw}")));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::invalid(format!("duration must be positive, got {duration_s}")));
    }

    let p = chain.photon_detection_probability();
    let q = 1.0 - (1.0 - p) * (1.0 - p);
    let outcome = franson.map(|f| (f, outcome_probabilities(f)));
    let pass = outcome.map_or(1.0, |(_, o)| 1.0 - o.dropped());
    let subruns = (duration_s / MAX_SUBRUN_S).ceil().max(1.0) as u64;
    let sub_s = duration_s / subruns as f64;
    let duration_fs = s_to_fs(sub_s);
    let sampler = BlockSampler {
        chain,
        franson: outcome,
        rate_hz: spec.emitted_rate_hz(power_mw) * q * pass,
        p,
        q,
        duration_fs,
        seed,
    };
    let blocks = ((duration_fs + BLOCK_FS - 1) / BLOCK_FS) as u64;
    let reach = chain.max_jitter_fs();

    let mut total = CoincidenceHistogram::empty(hist, 0.0)?;
    let mut singles = [0u64; 2];
    for r in 0..subruns {
        let mut corr = Correlator::new(hist)?;
        let mut pending: Vec<Tag> = Vec::new();
        let mut feed = |tags: &[Tag], corr: &mut Correlator| -> Result<()> {
            for &t in tags {
                singles[(t.channel - 1) as usize] += 1;
                corr.push(t)?;
                sink(t);
            }
            Ok(())
        };
        let ids: Vec<u64> = (0..blocks).collect();
        for batch in ids.chunks(BATCH) {
            let outs: Vec<Vec<Tag>> = batch
                .par_iter()
                .map(|&b| sampler.block(b, r * SUBRUN_BLOCK_STRIDE + b))
                .collect();
            for (&b, out) in batch.iter().zip(outs) {
                pending = merge_sorted(std::mem::take(&mut pending), out);
                // Later blocks cannot produce anything before this.
                let safe = (b as i64 + 1) * BLOCK_FS - reach;
                let n = pending.partition_point(|t| t.time_fs < safe);
                feed(&pending[..n], &mut corr)?;
                pending.drain(..n);
            }
        }
        feed(&pending, &mut corr)?;
        total = total.merge(&corr.finish(sub_s))?;
    }
    Ok(Acquisition {
        histogram: total,
        singles,
        duration_s,
    })
}
