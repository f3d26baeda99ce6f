//! Quasi-phase-matched second-harmonic generation: wavevector mismatch,
//! conversion-efficiency spectrum and grating-period solving.
//!
//! The conversion efficiency of a grating of length `L`, period `Λ` and
//! effective nonlinearity `χ` is
//!
//! ```text
//! CE = (ω L χ)² / (2 ε₀ c³ n_P² n_SH) · S_SH / S_P² · sinc²(Δk L / 2)
//! Δk = k_SH − 2 k_P − 2π/Λ,   k = 2π n / λ
//! ```
//!
//! with `ω` the fundamental angular frequency, `n_P`/`n_SH` the effective
//! indices at the fundamental and at the second harmonic and `S_P`/`S_SH` the
//! effective mode areas.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{Domain, Stream};
use crate::units::{nm_to_m, SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use crate::{Error, Result};

/// Closed wavelength interval in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub min_nm: f64,
    pub max_nm: f64,
}

impl Band {
    pub fn new(min_nm: f64, max_nm: f64) -> Result<Self> {
        if !(min_nm.is_finite() && max_nm.is_finite() && min_nm < max_nm && min_nm > 0.0) {
            return Err(Error::invalid(format!("bad band [{min_nm}, {max_nm}] nm")));
        }
        Ok(Self { min_nm, max_nm })
    }

    pub fn contains(&self, nm: f64) -> bool {
        nm >= self.min_nm && nm <= self.max_nm
    }

    fn check(&self, nm: f64) -> Result<()> {
        if self.contains(nm) {
            Ok(())
        } else {
            Err(Error::OutOfBand {
                wavelength_nm: nm,
                min_nm: self.min_nm,
                max_nm: self.max_nm,
            })
        }
    }
}

/// Natural cubic spline through a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::invalid("spline needs at least 3 knots with matching values"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spline grid must be strictly increasing"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("spline knots must be finite"));
        }

        // Tridiagonal system for the natural spline (m[0] = m[n-1] = 0).
        let mut m = vec![0.0; n];
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let a = h0;
            let b = 2.0 * (h0 + h1);
            let c = h1;
            let d = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            let denom = b - a * c_prime[i - 1];
            c_prime[i] = c / denom;
            d_prime[i] = (d - a * d_prime[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m[i] = d_prime[i] - c_prime[i] * m[i + 1];
        }
        Ok(Self { x, y, m })
    }

    pub fn band(&self) -> Band {
        Band {
            min_nm: self.x[0],
            max_nm: self.x[self.x.len() - 1],
        }
    }

    /// Caller guarantees `x` lies inside the knot range.
    fn eval(&self, x: f64) -> f64 {
        let i = match self.x.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - x) / h;
        let b = (x - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Effective index as a function of vacuum wavelength.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexCurve {
    /// `n(λ) = Σ cᵢ · ((λ − reference) / 1000 nm)ⁱ`, i.e. a power series in
    /// micrometres about `reference_nm`.
    Polynomial {
        reference_nm: f64,
        coefficients: Vec<f64>,
        band: Band,
    },
    Spline(CubicSpline),
}

impl IndexCurve {
    pub fn band(&self) -> Band {
        match self {
            IndexCurve::Polynomial { band, .. } => *band,
            IndexCurve::Spline(s) => s.band(),
        }
    }

    pub fn index(&self, wavelength_nm: f64) -> Result<f64> {
        self.band().check(wavelength_nm)?;
        Ok(match self {
            IndexCurve::Polynomial {
                reference_nm,
                coefficients,
                ..
            } => {
                let u = (wavelength_nm - reference_nm) / 1000.0;
                coefficients.iter().rev().fold(0.0, |acc, c| acc * u + c)
            }
            IndexCurve::Spline(s) => s.eval(wavelength_nm),
        })
    }

    fn validate(&self, label: &str) -> Result<()> {
        let band = self.band();
        const SAMPLES: usize = 512;
        for i in 0..=SAMPLES {
            let nm = band.min_nm + (band.max_nm - band.min_nm) * i as f64 / SAMPLES as f64;
            let n = self.index(nm)?;
            if !(n.is_finite() && n > 1.0) {
                return Err(Error::invalid(format!(
                    "{label} index {n} at {nm} nm is not finite and > 1"
                )));
            }
        }
        Ok(())
    }
}

/// Effective refractive indices of the fundamental (pump) and second-harmonic
/// modes.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionModel {
    fh: IndexCurve,
    sh: IndexCurve,
}

/// Fundamental wavelength at which the default dispersion model is exactly
/// phase matched by the default grating period.
pub const DEFAULT_QPM_WAVELENGTH_NM: f64 = 1561.0;
/// Grating period of the default model (µm).
#[allow(clippy::approx_constant)] // a grating period, not π
pub const DEFAULT_PERIOD_UM: f64 = 3.14;

impl DispersionModel {
    pub fn new(fh: IndexCurve, sh: IndexCurve) -> Result<Self> {
        fh.validate("fundamental")?;
        sh.validate("second-harmonic")?;
        Ok(Self { fh, sh })
    }

    /// Build from a table sampled at fundamental wavelengths: each row holds
    /// `n_fh(λ)` and `n_sh(λ/2)`. Both curves are natural cubic splines; the SH
    /// band is the FH band halved.
    pub fn from_table(lambda_nm: &[f64], n_fh: &[f64], n_sh: &[f64]) -> Result<Self> {
        let fh = CubicSpline::new(lambda_nm.to_vec(), n_fh.to_vec())?;
        let sh = CubicSpline::new(lambda_nm.iter().map(|l| l / 2.0).collect(), n_sh.to_vec())?;
        Self::new(IndexCurve::Spline(fh), IndexCurve::Spline(sh))
    }

    /// Synthetic dispersion consistent with the reported device: TE00 indices
    /// near 1.80 (FH) and 2.05 (SH) with group-index mismatch of about 0.1,
    /// constrained so that `n_SH(λ/2) − n_P(λ) = λ / (2Λ)` holds exactly at
    /// 1561 nm for Λ = 3.14 µm. The device's index curves were not published,
    /// so the absolute CE prefactor is model dependent.
    pub fn builtin() -> Self {
        let qpm_delta_n = DEFAULT_QPM_WAVELENGTH_NM / (2.0 * DEFAULT_PERIOD_UM * 1000.0);
        let fh = IndexCurve::Polynomial {
            reference_nm: DEFAULT_QPM_WAVELENGTH_NM,
            coefficients: vec![1.80, -0.16, 0.05],
            band: Band {
                min_nm: 1450.0,
                max_nm: 1650.0,
            },
        };
        let sh = IndexCurve::Polynomial {
            reference_nm: DEFAULT_QPM_WAVELENGTH_NM / 2.0,
            coefficients: vec![1.80 + qpm_delta_n, -0.13, 0.08],
            band: Band {
                min_nm: 725.0,
                max_nm: 825.0,
            },
        };
        Self::new(fh, sh).expect("built-in dispersion is valid")
    }

    pub fn fh_band(&self) -> Band {
        self.fh.band()
    }

    pub fn sh_band(&self) -> Band {
        self.sh.band()
    }

    /// `(n_P(λ), n_SH(λ/2))`.
    pub fn indices(&self, lambda_fh_nm: f64) -> Result<(f64, f64)> {
        Ok((
            self.fh.index(lambda_fh_nm)?,
            self.sh.index(lambda_fh_nm / 2.0)?,
        ))
    }

    /// Propagation constants `(k_P, k_SH)` in rad/m.
    pub fn propagation_constants(&self, lambda_fh_nm: f64) -> Result<(f64, f64)> {
        let (n_p, n_sh) = self.indices(lambda_fh_nm)?;
        let lambda = nm_to_m(lambda_fh_nm);
        Ok((2.0 * PI * n_p / lambda, 2.0 * PI * n_sh / (lambda / 2.0)))
    }
}

impl Default for DispersionModel {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GratingParams {
    pub length_mm: f64,
    pub period_um: f64,
    pub chi2_eff_pm_per_v: f64,
}

impl GratingParams {
    pub fn new(length_mm: f64, period_um: f64, chi2_eff_pm_per_v: f64) -> Result<Self> {
        let g = Self {
            length_mm,
            period_um,
            chi2_eff_pm_per_v,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("grating length", self.length_mm),
            ("grating period", self.period_um),
            ("chi2_eff", self.chi2_eff_pm_per_v),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Reject gratings longer than the waveguide that hosts them.
    pub fn check_fits_waveguide(&self, waveguide_mm: f64) -> Result<()> {
        if self.length_mm > waveguide_mm {
            return Err(Error::invalid(format!(
                "grating length {} mm exceeds waveguide length {waveguide_mm} mm",
                self.length_mm
            )));
        }
        Ok(())
    }

    pub fn length_m(&self) -> f64 {
        self.length_mm * 1e-3
    }

    pub fn period_m(&self) -> f64 {
        self.period_um * 1e-6
    }

    pub fn chi2_eff_m_per_v(&self) -> f64 {
        self.chi2_eff_pm_per_v * 1e-12
    }
}

impl Default for GratingParams {
    /// Reported fit of the poled waveguide: 69 mm, 3.14 µm, 0.05 pm/V.
    fn default() -> Self {
        Self {
            length_mm: 69.0,
            period_um: DEFAULT_PERIOD_UM,
            chi2_eff_pm_per_v: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeAreas {
    pub fh_um2: f64,
    pub sh_um2: f64,
}

impl ModeAreas {
    pub fn validate(&self) -> Result<()> {
        if !(self.fh_um2 > 0.0 && self.sh_um2 > 0.0) {
            return Err(Error::invalid("mode areas must be positive"));
        }
        Ok(())
    }

    pub fn fh_m2(&self) -> f64 {
        self.fh_um2 * 1e-12
    }

    pub fn sh_m2(&self) -> f64 {
        self.sh_um2 * 1e-12
    }
}

impl Default for ModeAreas {
    fn default() -> Self {
        Self {
            fh_um2: 0.74,
            sh_um2: 0.32,
        }
    }
}

/// `sin(x)/x` with the removable singularity handled by its Taylor series.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Net wavevector mismatch `k_SH − 2k_P − 2π/Λ` in rad/m. An infinite period
/// removes the grating term.
pub fn delta_k(disp: &DispersionModel, lambda_fh_nm: f64, period_m: f64) -> Result<f64> {
    if !(period_m > 0.0) {
        return Err(Error::invalid(format!("grating period must be positive, got {period_m}")));
    }
    // k_SH − 2k_P − 2π/Λ = 2π (2(n_SH − n_P)/λ − 1/Λ); the bracket is formed
    // first so the large k terms never cancel.
    Ok(2.0 * PI * (grating_wavenumber(disp, lambda_fh_nm)? - 1.0 / period_m))
}

/// `(k_SH − 2k_P) / 2π` in 1/m: the inverse of the phase-matching period.
fn grating_wavenumber(disp: &DispersionModel, lambda_fh_nm: f64) -> Result<f64> {
    let (n_p, n_sh) = disp.indices(lambda_fh_nm)?;
    Ok(2.0 * (n_sh - n_p) / nm_to_m(lambda_fh_nm))
}

/// Phase-matched conversion efficiency (W⁻¹), i.e. the CE prefactor.
pub fn ce_peak(
    disp: &DispersionModel,
    g: &GratingParams,
    areas: &ModeAreas,
    lambda_fh_nm: f64,
) -> Result<f64> {
    let (n_p, n_sh) = disp.indices(lambda_fh_nm)?;
    let omega = 2.0 * PI * SPEED_OF_LIGHT / nm_to_m(lambda_fh_nm);
    let coupling = omega * g.length_m() * g.chi2_eff_m_per_v();
    Ok(coupling * coupling
        / (2.0 * VACUUM_PERMITTIVITY * SPEED_OF_LIGHT.powi(3) * n_p * n_p * n_sh)
        * areas.sh_m2()
        / (areas.fh_m2() * areas.fh_m2()))
}

/// Second-harmonic conversion efficiency `P_SH / P_P²` in W⁻¹.
pub fn conversion_efficiency(
    disp: &DispersionModel,
    g: &GratingParams,
    areas: &ModeAreas,
    lambda_fh_nm: f64,
) -> Result<f64> {
    let peak = ce_peak(disp, g, areas, lambda_fh_nm)?;
    let dk = delta_k(disp, lambda_fh_nm, g.period_m())?;
    let s = sinc(dk * g.length_m() / 2.0);
    Ok(peak * s * s)
}

/// Grating period (m) that phase matches `lambda_fh_nm`: `2π / (k_SH − 2k_P)`.
pub fn qpm_period_for(disp: &DispersionModel, lambda_fh_nm: f64) -> Result<f64> {
    let q = grating_wavenumber(disp, lambda_fh_nm)?;
    if !(q > 0.0) {
        return Err(Error::NoQpm {
            mismatch: 2.0 * PI * q,
        });
    }
    Ok(1.0 / q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CePoint {
    pub lambda_nm: f64,
    pub ce_per_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

/// Conversion efficiency sampled on a strictly increasing wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CESpectrum {
    points: Vec<CePoint>,
}

impl CESpectrum {
    pub fn new(points: Vec<CePoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].lambda_nm > w[0].lambda_nm)) {
            return Err(Error::invalid("CE spectrum wavelengths must be strictly increasing"));
        }
        for p in &points {
            if !(p.ce_per_w.is_finite() && p.ce_per_w >= 0.0) {
                return Err(Error::invalid(format!(
                    "CE must be finite and >= 0, got {} at {} nm",
                    p.ce_per_w, p.lambda_nm
                )));
            }
            if let Some(s) = p.sigma {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::invalid(format!("sigma must be positive, got {s}")));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the largest CE value.
    pub fn peak_index(&self) -> Option<usize> {
        self.points
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.ce_per_w.total_cmp(&b.1.ce_per_w))
            .map(|(i, _)| i)
    }

    /// Full width at half maximum of the lobe containing the maximum, using
    /// linear interpolation between samples. `None` if either half-maximum
    /// crossing lies outside the grid.
    pub fn main_lobe_fwhm_nm(&self) -> Option<f64> {
        let ip = self.peak_index()?;
        let half = self.points[ip].ce_per_w / 2.0;
        let cross = |i: usize, j: usize| {
            let (a, b) = (&self.points[i], &self.points[j]);
            a.lambda_nm + (half - a.ce_per_w) * (b.lambda_nm - a.lambda_nm) / (b.ce_per_w - a.ce_per_w)
        };
        let left = (1..=ip)
            .rev()
            .find(|&i| self.points[i - 1].ce_per_w < half)
            .map(|i| cross(i - 1, i))?;
        let right = (ip..self.points.len() - 1)
            .find(|&i| self.points[i + 1].ce_per_w < half)
            .map(|i| cross(i, i + 1))?;
        Some(right - left)
    }
}

/// Additive Gaussian noise for synthetic spectra. Noisy values are clipped at
/// zero so the spectrum stays a valid (non-negative) efficiency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeNoise {
    pub sigma_per_w: f64,
    pub seed: u64,
}

/// Evaluate the CE model on `grid_nm`, optionally adding seeded noise. Noisy
/// points carry `sigma` so downstream fits weight them.
pub fn ce_spectrum(
    disp: &DispersionModel,
    g: &GratingParams,
    areas: &ModeAreas,
    grid_nm: &[f64],
    noise: Option<CeNoise>,
) -> Result<CESpectrum> {
    if grid_nm.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("wavelength grid must be strictly increasing"));
    }
    let sampler = match noise {
        Some(n) if n.sigma_per_w > 0.0 => Some((
            Normal::new(0.0, n.sigma_per_w).map_err(|e| Error::invalid(e.to_string()))?,
            Stream::new(n.seed, Domain::Noise, 0),
            n.sigma_per_w,
        )),
        Some(n) if n.sigma_per_w < 0.0 => return Err(Error::invalid("noise sigma must be >= 0")),
        _ => None,
    };
    let mut sampler = sampler;
    let points = grid_nm
        .iter()
        .map(|&l| {
            let ce = conversion_efficiency(disp, g, areas, l)?;
            Ok(match sampler.as_mut() {
                Some((dist, rng, sigma)) => CePoint {
                    lambda_nm: l,
                    ce_per_w: (ce + dist.sample(rng)).max(0.0),
                    sigma: Some(*sigma),
                },
                None => CePoint {
                    lambda_nm: l,
                    ce_per_w: ce,
                    sigma: None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CESpectrum::new(points)
}

/// Evenly spaced grid of `points` wavelengths over `[start_nm, stop_nm]`.
pub fn linear_grid(start_nm: f64, stop_nm: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start_nm],
        n => (0..n)
            .map(|i| start_nm + (stop_nm - start_nm) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// One SHG power measurement: on-chip pump and second-harmonic powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShgMeasurement {
    pub lambda_nm: f64,
    pub pump_w: f64,
    pub sh_w: f64,
}

impl ShgMeasurement {
    pub fn conversion_efficiency(&self) -> f64 {
        self.sh_w / (self.pump_w * self.pump_w)
    }
}

/// Power readings a CE spectrum implies at a fixed pump power.
pub fn shg_powers(spectrum: &CESpectrum, pump_w: f64) -> Vec<ShgMeasurement> {
    spectrum
        .points()
        .iter()
        .map(|p| ShgMeasurement {
            lambda_nm: p.lambda_nm,
            pump_w,
            sh_w: p.ce_per_w * pump_w * pump_w,
        })
        .collect()
}
