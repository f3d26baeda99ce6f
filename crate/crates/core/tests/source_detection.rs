//! Statistical oracles for pair emission and the detection chain.

use spdc_core::coincidence::{correlate, HistogramConfig};
use spdc_core::detection::*;
use spdc_core::franson::{analyzer_histogram_config, peak_counts, transform_pairs, FransonConfig};
use spdc_core::pair_source::*;
use spdc_core::pipeline::acquire;
use spdc_core::units::bandwidth_nm_to_mhz;

fn within_sigma(x: f64, expected: f64, sigma: f64, k: f64) -> bool {
    (x - expected).abs() <= k * sigma
}

#[test]
fn zero_power_gives_no_pairs() {
    let s = generate_pairs(&SourceSpec::default(), 0.0, 1.0, 1).unwrap();
    assert!(s.events.is_empty());
}

#[test]
fn inter_arrivals_are_exponential() {
    let spec = SourceSpec::default();
    let power = 1e-3;
    let rate = spec.emitted_rate_hz(power);
    let s = generate_pairs(&spec, power, 1.0e6 / rate, 42).unwrap();
    let n = s.events.len();
    assert!(within_sigma(n as f64, 1e6, 1e3, 4.0), "{n}");

    let mut gaps: Vec<f64> = s
        .events
        .windows(2)
        .map(|w| (w[1].emission_time_fs - w[0].emission_time_fs) as f64 * 1e-15)
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean * rate - 1.0).abs() < 0.005, "{}", mean * rate);

    // One-sample Kolmogorov–Smirnov against Exp(rate).
    gaps.sort_by(f64::total_cmp);
    let m = gaps.len() as f64;
    let d = gaps
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let f = 1.0 - (-rate * g).exp();
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic 1% critical value.
    assert!(d * m.sqrt() < 1.628, "KS statistic {}", d * m.sqrt());
}

#[test]
fn every_pair_conserves_energy_and_times_are_ordered() {
    for shape in [SpectralShape::Gaussian, SpectralShape::Sinc2] {
        let spec = SourceSpec {
            spectral_shape: shape,
            pump_offset_pm: 7.35,
            ..SourceSpec::default()
        };
        let s = generate_pairs(&spec, 1e-4, 0.5, 3).unwrap();
        assert!(!s.events.is_empty());
        let inv_p = 1.0 / spec.pump_nm();
        for w in s.events.windows(2) {
            assert!(w[1].emission_time_fs >= w[0].emission_time_fs);
        }
        for e in &s.events {
            let sum = 1.0 / e.signal_wavelength_nm + 1.0 / e.idler_wavelength_nm;
            assert!((sum - inv_p).abs() <= 1e-12 * inv_p);
        }
    }
}

#[test]
fn gaussian_spectrum_has_configured_width() {
    let spec = SourceSpec::default();
    let s = generate_pairs(&spec, 1e-4, 2.0, 8).unwrap();
    let n = s.events.len() as f64;
    let mean = s.events.iter().map(|e| e.signal_wavelength_nm).sum::<f64>() / n;
    let var = s.events.iter().map(|e| (e.signal_wavelength_nm - mean).powi(2)).sum::<f64>() / n;
    let sigma = 30.0 / (2.0 * (2.0 * 2f64.ln()).sqrt());
    assert!((mean - 1560.0).abs() < 5.0 * sigma / n.sqrt());
    assert!((var.sqrt() / sigma - 1.0).abs() < 0.01);
}

#[test]
fn same_seed_same_stream() {
    let spec = SourceSpec::default();
    let a = generate_pairs(&spec, 1e-4, 0.3, 9).unwrap();
    let b = generate_pairs(&spec, 1e-4, 0.3, 9).unwrap();
    let c = generate_pairs(&spec, 1e-4, 0.3, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.events, c.events);
}

#[test]
fn detected_pcr_at_36_uw_is_about_21_hz() {
    let spec = SourceSpec::default();
    let chain = DetectionChain::default();
    let h = HistogramConfig::default();
    let acq = acquire(&spec, &chain, &h, 0.036, 200.0, 11, None).unwrap();
    let cp = spdc_core::coincidence::car_pcr(&acq.histogram).unwrap();
    let expected = 580.0 * 0.036;
    let sigma = (cp.coincidences as f64).sqrt() / 200.0;
    // Accidentals add about 0.06 Hz on top of the true rate.
    assert!(within_sigma(cp.pcr_hz - cp.accidentals / 200.0, expected, sigma, 3.0), "{}", cp.pcr_hz);
}

#[test]
fn coincidence_ratio_matches_probability_oracle() {
    let chain = DetectionChain {
        loss: LossBudget::total(7.0),
        detector_efficiency: 0.85,
        dark_count_rate_hz: 0.0,
        jitter_sigma_fs: 0.0,
        routing: Routing::Splitter,
    };
    let pairs = generate_pairs(&SourceSpec::default(), 1e-4, 30.0, 5).unwrap();
    let tags = detect(&pairs, &chain, 6).unwrap();
    let h = correlate(&tags, &HistogramConfig::default()).unwrap();
    // Without jitter every true coincidence sits in the zero-delay bin.
    let c = h.window_counts(1000.0, 2000).unwrap() as f64;
    let ratio = c / pairs.events.len() as f64;
    let oracle = (10f64.powf(-0.7) * 0.85).powi(2) / 2.0;
    assert!((ratio / oracle - 1.0).abs() < 0.02, "{ratio} vs {oracle}");
}

#[test]
fn ideal_chain_gives_one_click_per_channel_at_emission() {
    let pairs = generate_pairs(&SourceSpec::default(), 1e-5, 0.1, 2).unwrap();
    let tags = detect(&pairs, &DetectionChain::ideal(), 3).unwrap();
    assert_eq!(tags.len(), 2 * pairs.events.len());
    for (e, two) in pairs.events.iter().zip(tags.tags().chunks(2)) {
        assert_eq!(two[0], Tag::new(1, e.emission_time_fs));
        assert_eq!(two[1], Tag::new(2, e.emission_time_fs));
    }
}

#[test]
fn darks_only_rate_is_poisson() {
    let chain = DetectionChain::default();
    let empty = PairStream {
        events: vec![],
        duration_s: 10.0,
        rate_hz: 0.0,
        seed: 0,
    };
    let tags = detect(&empty, &chain, 77).unwrap();
    let (r1, r2) = singles_rates(&tags);
    let sigma = (1000.0f64).sqrt() / 10.0;
    assert!(within_sigma(r1, 100.0, sigma, 3.0), "{r1}");
    assert!(within_sigma(r2, 100.0, sigma, 3.0), "{r2}");
}

#[test]
fn singles_are_pair_clicks_plus_darks() {
    let chain = DetectionChain {
        dark_count_rate_hz: 5000.0,
        ..DetectionChain::default()
    };
    let spec = SourceSpec::default();
    let power = 2e-3;
    let pairs = generate_pairs(&spec, power, 2.0, 12).unwrap();
    let tags = detect(&pairs, &chain, 13).unwrap();
    let (r1, r2) = singles_rates(&tags);
    let expected = chain.singles_rate_hz(pairs.events.len() as f64 / 2.0);
    let sigma = (expected * 2.0).sqrt() / 2.0;
    assert!(within_sigma(r1, expected, sigma, 3.0), "{r1} vs {expected}");
    assert!(within_sigma(r2, expected, sigma, 3.0), "{r2} vs {expected}");
}

#[test]
fn loss_composes_additively_in_db() {
    let split = LossBudget {
        facet_db: 3.0,
        propagation_db: 3.0,
        filtering_db: 0.0,
    };
    assert_eq!(split.transmission(), LossBudget::total(6.0).transmission());
    let t3 = LossBudget::total(3.0).transmission();
    assert!((t3 * t3 / LossBudget::total(6.0).transmission() - 1.0).abs() < 1e-15);
}

#[test]
fn output_is_sorted_under_adversarial_jitter_and_slab_independent() {
    let chain = DetectionChain {
        jitter_sigma_fs: 1.0e6,
        detector_efficiency: 1.0,
        loss: LossBudget::total(0.0),
        ..DetectionChain::default()
    };
    let pairs = generate_pairs(&SourceSpec::default(), 1e-4, 0.05, 4).unwrap();
    let whole = detect(&pairs, &chain, 21).unwrap();
    assert!(whole.tags().windows(2).all(|w| w[0].time_fs <= w[1].time_fs));
    for slab in [1e-3, 7e-3, 0.02] {
        assert_eq!(detect_slabs(&pairs, &chain, 21, slab).unwrap(), whole);
    }
}

#[test]
fn brightness_back_solve_is_consistent() {
    let bw = bandwidth_nm_to_mhz(30.0, 1560.0);
    assert!((bw / 3.7e6 - 1.0).abs() < 0.01, "{bw}");
    // Power that makes 400 Hz at 14 dB correspond to 5e-3 pairs/s/mW/MHz.
    let power = 400.0 * 10f64.powf(1.4) / (5e-3 * bw);
    assert!((power - 0.5437).abs() < 0.002, "{power}");
    let b = internal_brightness(400.0, power, bw, 14.0).unwrap();
    assert!((b - 5e-3).abs() < 1e-12);
    assert_eq!(internal_brightness(1.0, 1.0, 1.0, 0.0).unwrap(), 1.0);
    let r = internal_brightness(1.0, 1.0, 1.0, 20.0).unwrap() / internal_brightness(1.0, 1.0, 1.0, 10.0).unwrap();
    assert!((r - 10.0).abs() < 1e-12);
    assert!(internal_brightness(1.0, 0.0, 1.0, 0.0).is_err());
    assert!(internal_brightness(1.0, 1.0, 0.0, 0.0).is_err());
}

/// The fused sampler and the literal emit → detect → correlate chain must
/// agree in distribution.
#[test]
fn fused_sampler_agrees_with_literal_chain() {
    let spec = SourceSpec::default();
    let chain = DetectionChain {
        loss: LossBudget::total(3.0),
        detector_efficiency: 1.0,
        ..DetectionChain::default()
    };
    let h = HistogramConfig::default();
    let (power, dur) = (1e-4, 20.0);

    let pairs = generate_pairs(&spec, power, dur, 31).unwrap();
    let tags = detect(&pairs, &chain, 32).unwrap();
    let lit = correlate(&tags, &h).unwrap();
    let (l1, l2) = singles_rates(&tags);
    let fused = acquire(&spec, &chain, &h, power, dur, 33, None).unwrap();
    let (f1, f2) = fused.singles_rates_hz();

    let close = |a: f64, b: f64| (a - b).abs() <= 4.0 * (a + b).sqrt();
    assert!(close(l1 * dur, f1 * dur) && close(l2 * dur, f2 * dur), "{l1} {f1} {l2} {f2}");
    let lc = lit.window_counts(0.0, 50_000).unwrap() as f64;
    let fc = fused.histogram.window_counts(0.0, 50_000).unwrap() as f64;
    assert!(close(lc, fc), "{lc} vs {fc}");
    let la = lit.window_counts(300_000.0, 120_000).unwrap() as f64;
    let fa = fused.histogram.window_counts(300_000.0, 120_000).unwrap() as f64;
    assert!(close(la, fa), "{la} vs {fa}");
}

#[test]
fn fused_analyzer_agrees_with_literal_chain() {
    let spec = SourceSpec::default();
    let cfg = FransonConfig::default();
    let chain = cfg.analyzer_chain(&DetectionChain {
        loss: LossBudget::total(3.0),
        detector_efficiency: 1.0,
        ..DetectionChain::default()
    });
    let h = analyzer_histogram_config(&cfg, &HistogramConfig::default()).unwrap();
    let (power, dur) = (1e-4, 10.0);

    let pairs = transform_pairs(&generate_pairs(&spec, power, dur, 41).unwrap(), &cfg, 42).unwrap();
    let lit = peak_counts(&correlate(&detect(&pairs, &chain, 43).unwrap(), &h).unwrap(), &cfg).unwrap();
    let fused = peak_counts(
        &acquire(&spec, &chain, &h, power, dur, 44, Some(&cfg)).unwrap().histogram,
        &cfg,
    )
    .unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 4.0 * (a + b).sqrt();
    assert!(close(lit.early, fused.early), "{lit:?} {fused:?}");
    assert!(close(lit.central, fused.central), "{lit:?} {fused:?}");
    assert!(close(lit.late, fused.late), "{lit:?} {fused:?}");
}
