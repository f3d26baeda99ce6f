//! Independent oracles for the phase-mismatch and conversion-efficiency model.

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;
use spdc_core::dispersion_qpm::*;
use spdc_core::units::{SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

/// Horner evaluation of a micrometre power series in exact arithmetic.
fn poly(coeffs: &[f64], reference_nm: &BigRational, nm: &BigRational) -> BigRational {
    let u = (nm - reference_nm) / BigRational::from_integer(BigInt::from(1000));
    coeffs
        .iter()
        .rev()
        .fold(BigRational::zero(), |acc, &c| acc * &u + rat(c))
}

#[test]
fn delta_k_matches_exact_rational_evaluation() {
    let disp = DispersionModel::builtin();
    let period_m = DEFAULT_PERIOD_UM * 1e-6;
    // Same coefficients as the built-in model, rebuilt here from their
    // definition rather than read back from it.
    let c0_sh = 1.80 + 1561.0 / (2.0 * DEFAULT_PERIOD_UM * 1000.0);
    for nm in [1459.0, 1530.0, 1559.0, 1561.0, 1600.25, 1649.0] {
        let l = BigRational::from_integer(BigInt::from((nm * 4.0) as i64))
            / BigRational::from_integer(BigInt::from(4));
        let half = &l / BigRational::from_integer(BigInt::from(2));
        let n_p = poly(&[1.80, -0.16, 0.05], &rat(1561.0), &l);
        let n_sh = poly(&[c0_sh, -0.13, 0.08], &rat(780.5), &half);
        let lambda_m = &l / BigRational::from_integer(BigInt::from(1_000_000_000));
        let two = BigRational::from_integer(BigInt::from(2));
        let per_m = two * (n_sh - n_p) / lambda_m - BigRational::one() / rat(period_m);
        let oracle = 2.0 * PI * per_m.to_f64().unwrap();
        let dk = delta_k(&disp, nm, period_m).unwrap();
        assert!((dk - oracle).abs() < 1e-7, "{nm} nm: {dk} vs {oracle}");
    }
}

#[test]
fn prefactor_matches_term_by_term_form() {
    let disp = DispersionModel::builtin();
    let g = GratingParams::default();
    let a = ModeAreas::default();
    for nm in [1500.0, 1561.0, 1620.0] {
        let (n_p, n_sh) = disp.indices(nm).unwrap();
        let lambda = nm * 1e-9;
        let d = g.chi2_eff_pm_per_v * 1e-12;
        let l = g.length_mm * 1e-3;
        // 2π² d² L² A_SH / (ε₀ c λ² n_P² n_SH A_FH²)
        let oracle = 2.0 * PI * PI * d * d * l * l * (a.sh_um2 * 1e-12)
            / (VACUUM_PERMITTIVITY * SPEED_OF_LIGHT * lambda * lambda * n_p * n_p * n_sh)
            / (a.fh_um2 * 1e-12).powi(2);
        let got = ce_peak(&disp, &g, &a, nm).unwrap();
        assert!((got / oracle - 1.0).abs() < 1e-12, "{got} vs {oracle}");
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn main_lobe_fwhm_matches_bisection() {
    let disp = DispersionModel::builtin();
    let g = GratingParams::default();
    let a = ModeAreas::default();
    let x_half = bisect(1.0, 2.0, |x| sinc(x).powi(2) - 0.5);
    assert!((x_half - 1.391_557).abs() < 1e-6);

    // Wavelengths where |Δk|·L/2 = x_half on either side of the peak.
    let f = |nm: f64| (delta_k(&disp, nm, g.period_m()).unwrap() * g.length_m() / 2.0).abs() - x_half;
    let left = bisect(1556.0, 1561.0, f);
    let right = bisect(1561.0, 1566.0, f);
    let oracle = (right - left).abs();

    let spectrum = ce_spectrum(&disp, &g, &a, &linear_grid(1558.0, 1564.0, 6001), None).unwrap();
    let fwhm = spectrum.main_lobe_fwhm_nm().unwrap();
    assert!((fwhm - oracle).abs() < 1e-4, "{fwhm} vs {oracle}");
    // The half-maximum points are genuinely at half maximum.
    let peak = ce_peak(&disp, &g, &a, 1561.0).unwrap();
    for nm in [left, right] {
        let ratio = conversion_efficiency(&disp, &g, &a, nm).unwrap() / ce_peak(&disp, &g, &a, nm).unwrap();
        assert!((ratio - 0.5).abs() < 1e-9);
        assert!(conversion_efficiency(&disp, &g, &a, nm).unwrap() < peak);
    }
}

#[test]
fn first_null_is_exactly_zero() {
    let disp = DispersionModel::builtin();
    let g = GratingParams::default();
    let a = ModeAreas::default();
    let arg = |nm: f64| delta_k(&disp, nm, g.period_m()).unwrap() * g.length_m() / 2.0;
    let null = bisect(1561.0, 1566.0, |nm| arg(nm).abs() - PI);
    assert!((arg(null).abs() - PI).abs() < 1e-9);
    let ce = conversion_efficiency(&disp, &g, &a, null).unwrap();
    assert!(ce < 1e-15 * ce_peak(&disp, &g, &a, null).unwrap(), "{ce}");
}

#[test]
fn longer_grating_narrows_the_lobe() {
    let disp = DispersionModel::builtin();
    let a = ModeAreas::default();
    let grid = linear_grid(1555.0, 1567.0, 4001);
    let width = |mm: f64| {
        let g = GratingParams::new(mm, DEFAULT_PERIOD_UM, 0.05).unwrap();
        ce_spectrum(&disp, &g, &a, &grid, None).unwrap().main_lobe_fwhm_nm().unwrap()
    };
    let (w1, w2) = (width(34.5), width(69.0));
    assert!(w2 < w1);
    // Width scales as 1/L near the centre of a slowly varying Δk.
    assert!((w1 / w2 - 2.0).abs() < 0.05, "{}", w1 / w2);
}

#[test]
fn lobe_is_nearly_symmetric_about_qpm() {
    let disp = DispersionModel::builtin();
    let g = GratingParams::default();
    let a = ModeAreas::default();
    for d in [0.1, 0.3, 0.5] {
        let l = conversion_efficiency(&disp, &g, &a, 1561.0 - d).unwrap();
        let r = conversion_efficiency(&disp, &g, &a, 1561.0 + d).unwrap();
        assert!((l / r - 1.0).abs() < 0.02, "{d}: {l} {r}");
    }
}

#[test]
fn sh_power_scales_with_pump_squared() {
    let disp = DispersionModel::builtin();
    let s = ce_spectrum(
        &disp,
        &GratingParams::default(),
        &ModeAreas::default(),
        &linear_grid(1559.0, 1563.0, 41),
        None,
    )
    .unwrap();
    let a = shg_powers(&s, 0.01);
    let b = shg_powers(&s, 0.02);
    for ((x, y), p) in a.iter().zip(&b).zip(s.points()) {
        assert!((y.sh_w - 4.0 * x.sh_w).abs() <= 1e-12 * y.sh_w.abs().max(1e-300));
        assert!((x.conversion_efficiency() - p.ce_per_w).abs() <= 1e-12 * p.ce_per_w.max(1e-300));
    }
}

proptest! {
    #[test]
    fn qpm_period_round_trip(nm in 1451.0f64..1649.0) {
        let disp = DispersionModel::builtin();
        let period = qpm_period_for(&disp, nm).unwrap();
        let dk = delta_k(&disp, nm, period).unwrap();
        prop_assert!(dk.abs() < 1e-9, "{} nm: {}", nm, dk);
    }

    #[test]
    fn ce_never_exceeds_prefactor(nm in 1451.0f64..1649.0, mm in 1.0f64..70.0) {
        let disp = DispersionModel::builtin();
        let g = GratingParams::new(mm, DEFAULT_PERIOD_UM, 0.05).unwrap();
        let a = ModeAreas::default();
        let ce = conversion_efficiency(&disp, &g, &a, nm).unwrap();
        prop_assert!(ce >= 0.0 && ce <= ce_peak(&disp, &g, &a, nm).unwrap() * (1.0 + 1e-12));
    }
}
