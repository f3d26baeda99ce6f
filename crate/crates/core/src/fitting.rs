//! Bounded nonlinear least squares (projected Levenberg–Marquardt) and the
//! model adapters built on it: the QPM sinc² spectrum, the two-photon fringe
//! and the CAR-vs-PCR power law.
//!
//! The engine minimises `½ Σ (wᵢ rᵢ(p))²` subject to box bounds. Parameters
//! sitting on a bound with the gradient pushing outward are frozen for the
//! step; trial points are projected back into the box. Standard errors are
//! `sqrt(diag((JᵀJ)⁻¹) · χ²_red)` with `J` the weighted residual Jacobian at
//! the optimum, so a fit to noise-free data reports zero errors.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dispersion_qpm::{
    conversion_efficiency, qpm_period_for, CESpectrum, DispersionModel, GratingParams, ModeAreas,
};
use crate::{Error, Result};

/// A vector-valued residual function.
pub trait Residuals {
    /// Number of residuals.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn eval(&self, params: &[f64], out: &mut [f64]);

    /// Fill `out` (len × params) with ∂r/∂p. Returns `false` when no analytic
    /// Jacobian exists and finite differences should be used.
    fn jacobian(&self, _params: &[f64], _out: &mut DMatrix<f64>) -> bool {
        false
    }
}

/// Adapter turning a closure into [`Residuals`].
pub struct FnResiduals<F> {
    len: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnResiduals<F> {
    pub fn new(len: usize, f: F) -> Self {
        Self { len, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> Residuals for FnResiduals<F> {
    fn len(&self) -> usize {
        self.len
    }

    fn eval(&self, params: &[f64], out: &mut [f64]) {
        (self.f)(params, out)
    }
}

pub struct FitProblem<R> {
    pub residuals: R,
    pub initial: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Per-residual weights, typically `1/σᵢ`.
    pub weights: Option<Vec<f64>>,
}

impl<R: Residuals> FitProblem<R> {
    /// Unbounded problem.
    pub fn new(residuals: R, initial: Vec<f64>) -> Self {
        let n = initial.len();
        Self {
            residuals,
            initial,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            weights: None,
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.initial.len();
        if n == 0 {
            return Err(Error::invalid("fit needs at least one parameter"));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::invalid("bounds must match the parameter count"));
        }
        for i in 0..n {
            let (lo, hi, x) = (self.lower[i], self.upper[i], self.initial[i]);
            if !(lo <= hi) {
                return Err(Error::invalid(format!("bounds of parameter {i} are not ordered")));
            }
            if !(x >= lo && x <= hi) || !x.is_finite() {
                return Err(Error::invalid(format!(
                    "initial value {x} of parameter {i} outside [{lo}, {hi}]"
                )));
            }
        }
        if self.residuals.len() < n {
            return Err(Error::invalid(format!(
                "{} residuals cannot determine {n} parameters",
                self.residuals.len()
            )));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.residuals.len() || w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("weights must be positive, one per residual"));
            }
        }
        Ok(())
    }

    fn weighted(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.residuals.eval(x, out);
        if let Some(w) = &self.weights {
            out.iter_mut().zip(w).for_each(|(r, w)| *r *= w);
        }
        if out.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite { params: x.to_vec() });
        }
        Ok(())
    }

    fn weighted_jacobian(&self, x: &[f64], r0: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.residuals.len();
        let mut jac = DMatrix::zeros(m, x.len());
        if self.residuals.jacobian(x, &mut jac) {
            if let Some(w) = &self.weights {
                for (i, wi) in w.iter().enumerate() {
                    jac.row_mut(i).scale_mut(*wi);
                }
            }
            if jac.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { params: x.to_vec() });
            }
            return Ok(jac);
        }
        let mut probe = x.to_vec();
        let mut r1 = vec![0.0; m];
        for j in 0..x.len() {
            let h = fd_step(x[j], self.upper[j]);
            probe[j] = x[j] + h;
            self.weighted(&probe, &mut r1)?;
            for i in 0..m {
                jac[(i, j)] = (r1[i] - r0[i]) / h;
            }
            probe[j] = x[j];
        }
        Ok(jac)
    }
}

/// Forward-difference step `max(1e-8, 1e-8·|x|)`, flipped to a backward step
/// when the forward probe would leave the box.
fn fd_step(x: f64, upper: f64) -> f64 {
    let h = (1e-8 * x.abs()).max(1e-8);
    if x + h > upper {
        -h
    } else {
        h
    }
}

/// Forward-difference Jacobian of unweighted residuals.
pub fn numerical_jacobian<R: Residuals>(residuals: &R, x: &[f64]) -> DMatrix<f64> {
    let m = residuals.len();
    let mut r0 = vec![0.0; m];
    let mut r1 = vec![0.0; m];
    residuals.eval(x, &mut r0);
    let mut jac = DMatrix::zeros(m, x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = fd_step(x[j], f64::INFINITY);
        probe[j] = x[j] + h;
        residuals.eval(&probe, &mut r1);
        for i in 0..m {
            jac[(i, j)] = (r1[i] - r0[i]) / h;
        }
        probe[j] = x[j];
    }
    jac
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    /// Relative tolerance for the gradient test `‖g‖∞ ≤ tol·(1 + cost)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub stderr: Vec<f64>,
    pub chi2_reduced: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Which parameters finished on a bound.
    pub at_bound: Vec<bool>,
    pub initial_cost: f64,
    /// `½ Σ (wᵢ rᵢ)²` at the optimum.
    pub cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn bound_active(&self) -> bool {
        self.at_bound.iter().any(|&b| b)
    }
}

/// Projected Levenberg–Marquardt.
pub fn least_squares<R: Residuals>(p: &FitProblem<R>, opts: LmOptions) -> Result<FitResult> {
    p.validate()?;
    let n = p.initial.len();
    let m = p.residuals.len();
    let clamp = |x: &mut [f64]| {
        for ((xi, lo), hi) in x.iter_mut().zip(&p.lower).zip(&p.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    };

    let mut x = p.initial.clone();
    let mut r = vec![0.0; m];
    p.weighted(&x, &mut r)?;
    let mut cost = half_sq(&r);
    let initial_cost = cost;
    let mut history = vec![cost];

    let mut lambda = -1.0;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut r_trial = vec![0.0; m];

    while iterations < opts.max_iter {
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jac = p.weighted_jacobian(&x, &r)?;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);

        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let pinned_low = x[i] <= p.lower[i] && g[i] > 0.0;
                let pinned_high = x[i] >= p.upper[i] && g[i] < 0.0;
                !(pinned_low || pinned_high)
            })
            .collect();
        let grad_norm = free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        if grad_norm <= opts.tol * (1.0 + cost) {
            converged = true;
            break;
        }
        if lambda < 0.0 {
            lambda = 1e-3 * (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max).max(1e-300);
        }

        let mut accepted = false;
        while lambda < 1e300 {
            let k = free.len();
            let mut sys = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (ii, &i) in free.iter().enumerate() {
                rhs[ii] = -g[i];
                for (jj, &j) in free.iter().enumerate() {
                    sys[(ii, jj)] = a[(i, j)];
                }
                sys[(ii, ii)] += lambda * a[(i, i)].max(1e-12 * lambda.max(1.0));
            }
            let step = sys
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| sys.lu().solve(&rhs));
            let Some(step) = step else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };

            let mut x_trial = x.clone();
            for (ii, &i) in free.iter().enumerate() {
                x_trial[i] += step[ii];
            }
            clamp(&mut x_trial);
            let delta: Vec<f64> = x_trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if delta.iter().all(|&d| d == 0.0) {
                // Step vanished in floating point: nothing left to gain.
                lambda = f64::INFINITY;
                break;
            }
            p.weighted(&x_trial, &mut r_trial)?;
            let cost_trial = half_sq(&r_trial);

            if cost_trial < cost {
                let d = DVector::from_column_slice(&delta);
                let predicted = -(g.dot(&d) + 0.5 * d.dot(&(&a * &d)));
                let rho = if predicted > 0.0 {
                    (cost - cost_trial) / predicted
                } else {
                    0.0
                };
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let small_step = delta
                    .iter()
                    .zip(&x)
                    .all(|(d, xi)| d.abs() <= 1e-14 * (xi.abs() + 1e-14));
                let small_gain = cost - cost_trial <= 1e-15 * cost;
                x = x_trial;
                std::mem::swap(&mut r, &mut r_trial);
                cost = cost_trial;
                history.push(cost);
                accepted = true;
                if small_step && small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= nu;
            nu *= 2.0;
        }
        iterations += 1;
        if !accepted {
            // No descent possible at working precision: a numerical minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let jac = p.weighted_jacobian(&x, &r)?;
    let dof = m.saturating_sub(n).max(1);
    let chi2_reduced = 2.0 * cost / dof as f64;
    let cov = pseudo_inverse(&(jac.transpose() * &jac));
    let stderr = (0..n)
        .map(|i| (cov[(i, i)].max(0.0) * chi2_reduced).sqrt())
        .collect();
    let at_bound = (0..n)
        .map(|i| x[i] <= p.lower[i] || x[i] >= p.upper[i])
        .collect();

    Ok(FitResult {
        params: x,
        stderr,
        chi2_reduced,
        converged,
        iterations,
        at_bound,
        initial_cost,
        cost,
        cost_history: history,
    })
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Pseudo-inverse of a normal matrix after scaling it to unit diagonal, so
/// parameters of very different sensitivity are not truncated as rank loss.
fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n)
        .map(|i| if a[(i, i)] > 0.0 { 1.0 / a[(i, i)].sqrt() } else { 0.0 })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * d[i] * d[j]);
    let svd = scaled.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let inv = svd
        .pseudo_inverse(max_sv * 1e-14)
        .unwrap_or_else(|_| DMatrix::zeros(n, n));
    DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * d[i] * d[j])
}

/// Serializable fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub model: String,
    pub params: BTreeMap<String, ParamEstimate>,
    pub chi2_reduced: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEstimate {
    pub value: f64,
    pub stderr: f64,
}

impl FitReport {
    pub fn new(model: &str, names: &[&str], result: &FitResult) -> Self {
        Self::from_values(model, names, &result.params, &result.stderr, result)
    }

    fn from_values(
        model: &str,
        names: &[&str],
        values: &[f64],
        stderr: &[f64],
        result: &FitResult,
    ) -> Self {
        Self {
            model: model.to_string(),
            params: names
                .iter()
                .zip(values.iter().zip(stderr))
                .map(|(n, (&value, &stderr))| (n.to_string(), ParamEstimate { value, stderr }))
                .collect(),
            chi2_reduced: result.chi2_reduced,
            converged: result.converged,
            iterations: result.iterations,
        }
    }
}

// ---------------------------------------------------------------------------
// QPM spectrum

pub const CE_PARAM_NAMES: [&str; 3] = ["grating_length_mm", "period_um", "chi2_eff_pm_per_v"];

struct CeResiduals<'a> {
    lambda_nm: Vec<f64>,
    ce: Vec<f64>,
    disp: &'a DispersionModel,
    areas: &'a ModeAreas,
}

impl CeResiduals<'_> {
    fn grating(p: &[f64]) -> GratingParams {
        GratingParams {
            length_mm: p[0],
            period_um: p[1],
            chi2_eff_pm_per_v: p[2],
        }
    }
}

impl Residuals for CeResiduals<'_> {
    fn len(&self) -> usize {
        self.ce.len()
    }

    fn eval(&self, params: &[f64], out: &mut [f64]) {
        let g = Self::grating(params);
        for ((o, &l), &y) in out.iter_mut().zip(&self.lambda_nm).zip(&self.ce) {
            // Band membership was checked up front; NaN here surfaces as a
            // numeric error rather than a panic.
            *o = conversion_efficiency(self.disp, &g, self.areas, l)
                .map(|model| y - model)
                .unwrap_or(f64::NAN);
        }
    }
}

#[derive(Debug, Clone)]
pub struct CeFit {
    pub grating: GratingParams,
    pub result: FitResult,
}

impl CeFit {
    pub fn report(&self) -> FitReport {
        FitReport::new("qpm_sinc2", &CE_PARAM_NAMES, &self.result)
    }
}

/// Fit grating length, period and χ⁽²⁾_eff to a measured CE spectrum.
///
/// The period is seeded from the wavelength of the maximum (the lobe centre is
/// far too sharp in Λ for a local optimizer to find from a distant start) and
/// χ⁽²⁾_eff is rescaled so the initial peak height matches the data; the
/// grating length starts at `init`. Points carrying `sigma` are weighted by
/// `1/σ`; otherwise all points share the weight `1/max(CE)`.
pub fn fit_ce_spectrum(
    spectrum: &CESpectrum,
    disp: &DispersionModel,
    areas: &ModeAreas,
    init: &GratingParams,
) -> Result<CeFit> {
    fit_ce_spectrum_with(spectrum, disp, areas, init, LmOptions::default())
}

pub fn fit_ce_spectrum_with(
    spectrum: &CESpectrum,
    disp: &DispersionModel,
    areas: &ModeAreas,
    init: &GratingParams,
    opts: LmOptions,
) -> Result<CeFit> {
    init.validate()?;
    areas.validate()?;
    let pts = spectrum.points();
    if pts.len() < 10 {
        return Err(Error::IllPosed(format!(
            "need at least 10 CE points, got {}",
            pts.len()
        )));
    }
    for p in pts {
        disp.indices(p.lambda_nm)?;
    }
    let ip = spectrum.peak_index().expect("non-empty");
    let peak = pts[ip].ce_per_w;
    if !(peak > 0.0) {
        return Err(Error::IllPosed("CE spectrum is identically zero".into()));
    }
    let below_half = |p: &crate::dispersion_qpm::CePoint| p.ce_per_w < peak / 2.0;
    if !(pts[..ip].iter().any(below_half) && pts[ip + 1..].iter().any(below_half)) {
        return Err(Error::IllPosed(
            "spectrum does not span a full sinc² lobe (half maximum not reached on both sides of the peak)"
                .into(),
        ));
    }

    let mut seed = *init;
    if let Ok(period_m) = qpm_period_for(disp, pts[ip].lambda_nm) {
        seed.period_um = period_m * 1e6;
    }
    let model_peak = conversion_efficiency(disp, &seed, areas, pts[ip].lambda_nm)?;
    if model_peak > 0.0 {
        seed.chi2_eff_pm_per_v *= (peak / model_peak).sqrt();
    }

    let weights = if pts.iter().all(|p| p.sigma.is_some()) {
        pts.iter().map(|p| 1.0 / p.sigma.unwrap()).collect()
    } else {
        vec![1.0 / peak; pts.len()]
    };
    let residuals = CeResiduals {
        lambda_nm: pts.iter().map(|p| p.lambda_nm).collect(),
        ce: pts.iter().map(|p| p.ce_per_w).collect(),
        disp,
        areas,
    };
    let problem = FitProblem::new(
        residuals,
        vec![seed.length_mm, seed.period_um, seed.chi2_eff_pm_per_v],
    )
    .with_bounds(vec![1e-6; 3], vec![f64::INFINITY; 3])
    .with_weights(weights);
    let result = least_squares(&problem, opts)?;
    Ok(CeFit {
        grating: CeResiduals::grating(&result.params),
        result,
    })
}

// ---------------------------------------------------------------------------
// Two-photon fringe

pub const FRINGE_PARAM_NAMES: [&str; 4] = ["amplitude", "visibility", "period_pm", "phase_rad"];

/// Visibility above which a CHSH-type Bell inequality is violated, `1/√2`
/// (about 71 %).
pub const BELL_VISIBILITY_THRESHOLD: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// `N(δ) = A · (1 + V · cos(2πδ/Λ + φ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeParams {
    pub amplitude: f64,
    pub visibility: f64,
    pub period_pm: f64,
    pub phase_rad: f64,
}

impl FringeParams {
    pub fn eval(&self, offset_pm: f64) -> f64 {
        self.amplitude
            * (1.0 + self.visibility * (2.0 * PI * offset_pm / self.period_pm + self.phase_rad).cos())
    }

    /// Moment-based starting point for a known period; the phase is the best
    /// of 32 trial values.
    pub fn guess(points: &[(f64, f64)], period_pm: f64) -> Self {
        let (min, max) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        let amplitude = (max + min) / 2.0;
        let visibility = if max + min > 0.0 {
            ((max - min) / (max + min)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let phase_rad = (0..32)
            .map(|k| -PI + 2.0 * PI * k as f64 / 32.0)
            .min_by(|a, b| {
                let sse = |phase: f64| {
                    let f = Self {
                        amplitude,
                        visibility,
                        period_pm,
                        phase_rad: phase,
                    };
                    points.iter().map(|p| (p.1 - f.eval(p.0)).powi(2)).sum::<f64>()
                };
                sse(*a).total_cmp(&sse(*b))
            })
            .unwrap();
        Self {
            amplitude,
            visibility,
            period_pm,
            phase_rad,
        }
    }
}

pub struct FringeResiduals {
    offsets: Vec<f64>,
    counts: Vec<f64>,
}

impl FringeResiduals {
    pub fn new(points: &[(f64, f64)]) -> Self {
        Self {
            offsets: points.iter().map(|p| p.0).collect(),
            counts: points.iter().map(|p| p.1).collect(),
        }
    }

    fn params(p: &[f64]) -> FringeParams {
        FringeParams {
            amplitude: p[0],
            visibility: p[1],
            period_pm: p[2],
            phase_rad: p[3],
        }
    }
}

impl Residuals for FringeResiduals {
    fn len(&self) -> usize {
        self.counts.len()
    }

    fn eval(&self, params: &[f64], out: &mut [f64]) {
        let f = Self::params(params);
        for ((o, &d), &y) in out.iter_mut().zip(&self.offsets).zip(&self.counts) {
            *o = y - f.eval(d);
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) -> bool {
        let (a, v, period, phase) = (p[0], p[1], p[2], p[3]);
        for (i, &d) in self.offsets.iter().enumerate() {
            let arg = 2.0 * PI * d / period + phase;
            let (s, c) = arg.sin_cos();
            out[(i, 0)] = -(1.0 + v * c);
            out[(i, 1)] = -a * c;
            out[(i, 2)] = -a * v * s * 2.0 * PI * d / (period * period);
            out[(i, 3)] = a * v * s;
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct FringeFit {
    pub params: FringeParams,
    pub result: FitResult,
}

impl FringeFit {
    pub fn visibility(&self) -> f64 {
        self.params.visibility
    }

    pub fn visibility_stderr(&self) -> f64 {
        self.result.stderr[1]
    }

    pub fn violates_bell(&self) -> bool {
        self.params.visibility > BELL_VISIBILITY_THRESHOLD
    }

    pub fn report(&self) -> FitReport {
        let p = &self.params;
        FitReport::from_values(
            "fringe",
            &FRINGE_PARAM_NAMES,
            &[p.amplitude, p.visibility, p.period_pm, p.phase_rad],
            &self.result.stderr,
            &self.result,
        )
    }
}

/// Fit `A(1 + V cos(2πδ/Λ + φ))` to `(offset_pm, counts)` with Poisson weights
/// `1/√max(counts, 1)`. Visibility is confined to `[0, 1]`; an inverted fringe
/// is absorbed by the phase. The returned phase is wrapped to `(−π, π]`.
pub fn fit_fringe(points: &[(f64, f64)], init: &FringeParams) -> Result<FringeFit> {
    if points.len() < 8 {
        return Err(Error::IllPosed(format!(
            "fringe fit needs at least 8 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.1 >= 0.0) || !p.0.is_finite()) {
        return Err(Error::Domain("fringe counts must be finite and >= 0".into()));
    }
    if points.windows(2).all(|w| w[0].1 == w[1].1) {
        return Err(Error::Degenerate("all fringe counts are equal".into()));
    }
    if !(init.period_pm > 0.0) {
        return Err(Error::invalid("fringe period must be positive"));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let n = points.len() as f64;
    if (hi - lo) * n / (n - 1.0) < init.period_pm * (1.0 - 1e-9) {
        return Err(Error::IllPosed(format!(
            "offsets span {} pm, less than one period of {} pm",
            hi - lo,
            init.period_pm
        )));
    }

    let weights: Vec<f64> = points.iter().map(|p| 1.0 / p.1.max(1.0).sqrt()).collect();
    // A start half a period off sends V to its zero bound, where the phase
    // gradient vanishes. Fitting from both phases avoids that trap.
    let mut best: Option<FitResult> = None;
    for shift in [0.0, PI] {
        let problem = FitProblem::new(
            FringeResiduals::new(points),
            vec![
                init.amplitude.max(0.0),
                init.visibility.clamp(0.0, 1.0),
                init.period_pm,
                init.phase_rad + shift,
            ],
        )
        .with_bounds(
            vec![0.0, 0.0, 1e-9, f64::NEG_INFINITY],
            vec![f64::INFINITY, 1.0, f64::INFINITY, f64::INFINITY],
        )
        .with_weights(weights.clone());
        let r = least_squares(&problem, LmOptions::default())?;
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    let result = best.expect("two attempts");
    let mut params = FringeResiduals::params(&result.params);
    params.phase_rad = wrap_phase(params.phase_rad);
    Ok(FringeFit { params, result })
}

/// Wrap to `(−π, π]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

// ---------------------------------------------------------------------------
// Power law

pub const POWER_LAW_PARAM_NAMES: [&str; 2] = ["kappa", "exponent"];

#[derive(Debug, Clone)]
pub struct PowerLawFit {
    pub kappa: f64,
    pub kappa_stderr: f64,
    pub exponent: f64,
    pub exponent_stderr: f64,
    /// Fit of `ln y = ln κ + e · ln x`; parameters `[ln κ, e]`.
    pub result: FitResult,
}

impl PowerLawFit {
    pub fn report(&self) -> FitReport {
        FitReport::from_values(
            "inverse_power_law",
            &POWER_LAW_PARAM_NAMES,
            &[self.kappa, self.exponent],
            &[self.kappa_stderr, self.exponent_stderr],
            &self.result,
        )
    }
}

/// Fit `CAR = κ · PCR^e` in log-log space.
pub fn fit_inverse_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    fit_inverse_law_weighted(points, None)
}

/// As [`fit_inverse_law`], with optional per-point uncertainties of `ln CAR`.
pub fn fit_inverse_law_weighted(
    points: &[(f64, f64)],
    sigma_ln: Option<&[f64]>,
) -> Result<PowerLawFit> {
    if points.len() < 4 {
        return Err(Error::Domain(format!(
            "power-law fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0 && p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::Domain("power-law data must be finite and positive".into()));
    }
    if points.windows(2).all(|w| w[0].0 == w[1].0) {
        return Err(Error::Degenerate("all abscissae are equal".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let residuals = FnResiduals::new(points.len(), move |p: &[f64], out: &mut [f64]| {
        for i in 0..out.len() {
            out[i] = ly[i] - (p[0] + p[1] * lx[i]);
        }
    });
    let mut problem = FitProblem::new(residuals, vec![0.0, 0.0]);
    if let Some(s) = sigma_ln {
        if s.len() != points.len() {
            return Err(Error::invalid("one sigma per point required"));
        }
        problem = problem.with_weights(s.iter().map(|v| 1.0 / v).collect());
    }
    let result = least_squares(&problem, LmOptions::default())?;
    let kappa = result.params[0].exp();
    Ok(PowerLawFit {
        kappa,
        kappa_stderr: kappa * result.stderr[0],
        exponent: result.params[1],
        exponent_stderr: result.stderr[1],
        result,
    })
}
