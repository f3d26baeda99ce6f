//! One function per subcommand. Each writes its outputs into the output
//! directory and reports whether every fit it ran converged.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use spdc_core::coincidence::{
    car_pcr, car_prediction, car_scan, correlate, correlate_brute_force, correlate_tags, CarPcr,
    CoincidenceHistogram, DurationPolicy,
};
use spdc_core::detection::{singles_rates, Tag};
use spdc_core::dispersion_qpm::{
    ce_spectrum, conversion_efficiency, linear_grid, CESpectrum, CeNoise, CePoint, DispersionModel,
};
use spdc_core::fitting::{
    fit_ce_spectrum, fit_fringe, fit_inverse_law_weighted, FitReport, FringeParams,
    BELL_VISIBILITY_THRESHOLD,
};
use spdc_core::franson::{
    acquire_histogram, analyzer_histogram_config, fringe_scan, outcome_probabilities, ScanMode,
    CONSTRUCTIVE_OFFSET_PM, DESTRUCTIVE_OFFSET_PM,
};
use spdc_core::io;
use spdc_core::pipeline::{acquire_with_sink, MAX_SUBRUN_S};
use spdc_core::rng::{derive_seed, Domain};

use crate::scenario::Scenario;
use crate::Format;

/// Tag files are always written in the binary record format.
pub const TAG_FILE: &str = "tags.bin";

/// Everything a command needs besides its own arguments.
pub struct Ctx {
    pub scenario: Scenario,
    pub out: PathBuf,
    pub format: Format,
}

/// Whether every fit a command ran converged.
#[must_use]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

impl Status {
    fn from_converged(ok: bool) -> Self {
        if ok {
            Status::Ok
        } else {
            Status::NotConverged
        }
    }
}

impl Ctx {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("cannot create {}", p.display()))?;
        println!("wrote {}", p.display());
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// A table as `<stem>.csv` or `<stem>.json` depending on the format.
    fn write_table<T: Serialize>(&self, stem: &str, rows: &[T]) -> Result<()> {
        match self.format {
            Format::Csv => {
                let mut w = self.create(&format!("{stem}.csv"))?;
                io::write_rows(&mut w, rows)?;
                w.flush()?;
            }
            Format::Json => self.write_json(&format!("{stem}.json"), rows)?,
        }
        Ok(())
    }

    fn write_histogram(&self, stem: &str, h: &CoincidenceHistogram) -> Result<()> {
        self.write_table(stem, &io::histogram_rows(h))
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn dispersion(s: &Scenario) -> Result<DispersionModel> {
    match &s.shg.dispersion_csv {
        Some(p) => io::read_dispersion_csv(open(p)?).with_context(|| format!("in {}", p.display())),
        None => Ok(DispersionModel::builtin()),
    }
}

fn read_ce(path: &Path) -> Result<CESpectrum> {
    io::read_ce_csv(open(path)?).with_context(|| format!("in {}", path.display()))
}

/// Noisy synthetic CE spectrum from the scenario grating.
fn synthetic_ce(s: &Scenario, disp: &DispersionModel) -> Result<CESpectrum> {
    let grid = linear_grid(s.shg.start_nm, s.shg.stop_nm, s.shg.points);
    let clean = ce_spectrum(disp, &s.grating, &s.mode_areas, &grid, None)?;
    if s.shg.noise_fraction == 0.0 {
        return Ok(clean);
    }
    let peak = clean.points().iter().map(|p| p.ce_per_w).fold(0.0, f64::max);
    let noise = CeNoise {
        sigma_per_w: s.shg.noise_fraction * peak,
        seed: derive_seed(s.seed, Domain::Noise, 0),
    };
    Ok(ce_spectrum(disp, &s.grating, &s.mode_areas, &grid, Some(noise))?)
}

/// Synthesize (or load) a CE spectrum and fit it.
pub fn shg(ctx: &Ctx) -> Result<Status> {
    let s = &ctx.scenario;
    let disp = dispersion(s)?;
    let spectrum = match &s.shg.input_csv {
        Some(p) => read_ce(p)?,
        None => synthetic_ce(s, &disp)?,
    };
    match ctx.format {
        Format::Csv => {
            let mut w = ctx.create("ce_spectrum.csv")?;
            io::write_ce_csv(&mut w, &spectrum)?;
            w.flush()?;
        }
        Format::Json => ctx.write_json("ce_spectrum.json", spectrum.points())?,
    }
    fit_and_report_ce(ctx, &disp, &spectrum)
}

/// Fit a measured CE spectrum.
pub fn fit_ce(ctx: &Ctx, input: Option<&Path>) -> Result<Status> {
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| ctx.scenario.shg.input_csv.clone())
        .context("fit-ce needs --input or shg.input_csv")?;
    let spectrum = read_ce(&path)?;
    fit_and_report_ce(ctx, &dispersion(&ctx.scenario)?, &spectrum)
}

fn fit_and_report_ce(ctx: &Ctx, disp: &DispersionModel, spectrum: &CESpectrum) -> Result<Status> {
    let s = &ctx.scenario;
    let fit = fit_ce_spectrum(spectrum, disp, &s.mode_areas, &s.shg.fit_init)?;
    ctx.write_json("fit_ce.json", &fit.report())?;
    let model = spectrum
        .points()
        .iter()
        .map(|p| {
            Ok(CePoint {
                lambda_nm: p.lambda_nm,
                ce_per_w: conversion_efficiency(disp, &fit.grating, &s.mode_areas, p.lambda_nm)?,
                sigma: None,
            })
        })
        .collect::<spdc_core::Result<Vec<_>>>()?;
    ctx.write_table("ce_model", &model)?;
    let g = fit.grating;
    println!(
        "L = {:.3} mm, period = {:.5} um, chi2_eff = {:.5} pm/V, chi2_red {:.3}, converged {}",
        g.length_mm, g.period_um, g.chi2_eff_pm_per_v, fit.result.chi2_reduced, fit.result.converged
    );
    Ok(Status::from_converged(fit.result.converged))
}

#[derive(Serialize)]
struct PairsSummary {
    power_mw: f64,
    duration_s: f64,
    emitted_rate_hz: f64,
    through_analyzer: bool,
    tags: usize,
    singles1_hz: f64,
    singles2_hz: f64,
    tag_file: &'static str,
}

/// Simulate one acquisition and write its time tags.
pub fn pairs(ctx: &Ctx) -> Result<Status> {
    let s = &ctx.scenario;
    let p = &s.pairs;
    if p.duration_s > MAX_SUBRUN_S {
        bail!("pairs.duration_s is limited to {MAX_SUBRUN_S} s per tag file");
    }
    let (chain, hist, franson) = if p.through_analyzer {
        (
            s.franson.analyzer_chain(&s.detection),
            analyzer_histogram_config(&s.franson, &s.histogram)?,
            Some(&s.franson),
        )
    } else {
        (s.detection.clone(), s.histogram.clone(), None)
    };
    let mut tags: Vec<Tag> = Vec::new();
    let acq = acquire_with_sink(&s.source, &chain, &hist, p.power_mw, p.duration_s, s.seed, franson, |t| {
        tags.push(t)
    })?;
    let path = ctx.path(TAG_FILE);
    io::write_tag_file(&path, &tags).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {}", path.display());
    let (r1, r2) = acq.singles_rates_hz();
    ctx.write_json(
        "pairs_summary.json",
        &PairsSummary {
            power_mw: p.power_mw,
            duration_s: p.duration_s,
            emitted_rate_hz: s.source.emitted_rate_hz(p.power_mw),
            through_analyzer: p.through_analyzer,
            tags: tags.len(),
            singles1_hz: r1,
            singles2_hz: r2,
            tag_file: TAG_FILE,
        },
    )?;
    println!("{} tags, singles {:.1} / {:.1} Hz", tags.len(), r1, r2);
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct CorrelateSummary {
    #[serde(flatten)]
    car: CarPcr,
    car_pred: f64,
    singles1_hz: f64,
    singles2_hz: f64,
    duration_s: f64,
}

/// Correlate a tag file.
pub fn correlate_cmd(ctx: &Ctx, input: Option<&Path>) -> Result<Status> {
    let s = &ctx.scenario;
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| s.correlate.input.clone())
        .unwrap_or_else(|| ctx.path(TAG_FILE));
    let duration_s = s.correlate.duration_s.unwrap_or(s.pairs.duration_s);
    let tags = io::read_tag_file(&path, duration_s).with_context(|| format!("in {}", path.display()))?;
    let h = correlate(&tags, &s.histogram)?;
    ctx.write_histogram("histogram", &h)?;
    let (r1, r2) = singles_rates(&tags);
    let cp = car_pcr(&h)?;
    ctx.write_json(
        "car_pcr.json",
        &CorrelateSummary {
            car: cp,
            car_pred: car_prediction(cp.pcr_hz, r1, r2, s.histogram.coincidence_window_fs),
            singles1_hz: r1,
            singles2_hz: r2,
            duration_s,
        },
    )?;
    println!(
        "CAR {:.1}{} at PCR {:.3} Hz ({} coincidences)",
        cp.car,
        if cp.lower_bound { " (lower bound)" } else { "" },
        cp.pcr_hz,
        cp.coincidences
    );
    Ok(Status::Ok)
}

/// CAR and PCR against pump power, with the inverse-law fit.
pub fn car_scan_cmd(ctx: &Ctx) -> Result<Status> {
    let s = &ctx.scenario;
    let rows = car_scan(
        &s.source,
        &s.detection,
        &s.histogram,
        &s.car_scan.powers_mw,
        s.car_scan.duration,
        s.seed,
    )?;
    match ctx.format {
        Format::Csv => {
            let mut w = ctx.create("scan.csv")?;
            io::write_scan_csv(&mut w, &rows)?;
            w.flush()?;
        }
        Format::Json => ctx.write_json("scan.json", &rows)?,
    }
    for r in &rows {
        println!(
            "{:.4} mW: PCR {:.3} Hz, CAR {:.1} (pred {:.1}){}",
            r.power_mw,
            r.pcr_hz,
            r.car,
            r.car_pred,
            if r.lower_bound { ", lower bound" } else { "" }
        );
    }
    let usable: Vec<_> = rows.iter().filter(|r| !r.lower_bound && r.pcr_hz > 0.0).collect();
    if usable.len() < 4 {
        bail!(
            "only {} scan points have measured accidentals; the inverse-law fit needs 4",
            usable.len()
        );
    }
    let pts: Vec<(f64, f64)> = usable.iter().map(|r| (r.pcr_hz, r.car)).collect();
    let sig: Vec<f64> = usable.iter().map(|r| r.car_sigma / r.car).collect();
    let fit = fit_inverse_law_weighted(&pts, Some(&sig))?;
    ctx.write_json("car_fit.json", &fit.report())?;
    println!("CAR exponent {:.3} ± {:.3}", fit.exponent, fit.exponent_stderr);
    Ok(Status::from_converged(fit.result.converged))
}

#[derive(Serialize)]
struct NormalizedPoint {
    offset_pm: f64,
    /// Counts over twice the fitted amplitude, so a perfect fringe spans 0 to 1.
    normalized: f64,
}

#[derive(Serialize)]
struct VisibilitySummary {
    fit: FitReport,
    visibility: f64,
    visibility_stderr: f64,
    bell_threshold: f64,
    violates_bell: bool,
    normalized: Vec<NormalizedPoint>,
}

fn report_visibility(ctx: &Ctx, points: &[(f64, f64)]) -> Result<Status> {
    let init = FringeParams::guess(points, ctx.scenario.franson.fringe_period_pm);
    let fit = fit_fringe(points, &init)?;
    let a = fit.params.amplitude;
    ctx.write_json(
        "visibility.json",
        &VisibilitySummary {
            fit: fit.report(),
            visibility: fit.visibility(),
            visibility_stderr: fit.visibility_stderr(),
            bell_threshold: BELL_VISIBILITY_THRESHOLD,
            violates_bell: fit.violates_bell(),
            normalized: points
                .iter()
                .map(|&(offset_pm, c)| NormalizedPoint {
                    offset_pm,
                    normalized: if a > 0.0 { c / (2.0 * a) } else { 0.0 },
                })
                .collect(),
        },
    )?;
    println!(
        "V = {:.4} ± {:.4}, {} the Bell threshold {:.4}",
        fit.visibility(),
        fit.visibility_stderr(),
        if fit.violates_bell() { "above" } else { "not above" },
        BELL_VISIBILITY_THRESHOLD
    );
    Ok(Status::from_converged(fit.result.converged))
}

/// Three-peak histograms at the two reference offsets, the fringe scan and
/// its visibility fit.
pub fn franson(ctx: &Ctx) -> Result<Status> {
    let s = &ctx.scenario;
    let f = &s.fringe;
    for (k, (stem, offset)) in [
        ("histogram_constructive", CONSTRUCTIVE_OFFSET_PM),
        ("histogram_destructive", DESTRUCTIVE_OFFSET_PM),
    ]
    .into_iter()
    .enumerate()
    {
        let h = acquire_histogram(
            &s.source,
            &s.detection,
            &s.histogram,
            &s.franson.with_offset(offset),
            f.power_mw,
            f.duration_s,
            derive_seed(s.seed, Domain::Acquisition, k as u64),
        )?;
        ctx.write_histogram(stem, &h)?;
    }
    let rows = fringe_scan(
        &s.source,
        &s.detection,
        &s.histogram,
        &s.franson,
        &f.offsets_pm,
        f.power_mw,
        f.duration_s,
        f.mode,
        s.seed,
    )?;
    ctx.write_table("fringe", &rows)?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.offset_pm, r.central_counts)).collect();
    report_visibility(ctx, &pts)
}

/// Fit a fringe table.
pub fn fringe_fit(ctx: &Ctx, input: Option<&Path>) -> Result<Status> {
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| ctx.scenario.fringe.input_csv.clone())
        .context("fringe-fit needs --input or fringe.input_csv")?;
    let pts = io::read_fringe_csv(open(&path)?).with_context(|| format!("in {}", path.display()))?;
    report_visibility(ctx, &pts)
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e:#}")));
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Check { name, pass, detail }
}

/// Quick built-in checks of the physics and the plumbing.
pub fn selftest(ctx: &Ctx) -> Result<Status> {
    let s = &ctx.scenario;
    let checks = vec![
        check("ce_fit_recovers_grating", || {
            let disp = DispersionModel::builtin();
            let truth = Scenario::default();
            let grid = linear_grid(1560.0, 1562.0, 201);
            let spec = ce_spectrum(&disp, &truth.grating, &truth.mode_areas, &grid, None)?;
            let fit = fit_ce_spectrum(&spec, &disp, &truth.mode_areas, &truth.shg.fit_init)?;
            let err = (fit.grating.length_mm / truth.grating.length_mm - 1.0).abs();
            Ok((fit.result.converged && err < 1e-4, format!("length error {err:.2e}")))
        }),
        check("correlator_matches_brute_force", || {
            let cfg = &s.histogram;
            let mut worst = 0u64;
            for seed in 0..5 {
                let mut tags = Vec::new();
                acquire_with_sink(&s.source, &s.detection, cfg, 0.5, 0.01, seed, None, |t| tags.push(t))?;
                let fast = correlate_tags(&tags, 0.01, cfg)?;
                let slow = correlate_brute_force(&tags, 0.01, cfg)?;
                let diff = fast.counts.iter().zip(&slow.counts).map(|(a, b)| a.abs_diff(*b)).sum();
                worst = worst.max(diff);
            }
            Ok((worst == 0, format!("max count difference {worst}")))
        }),
        check("franson_probabilities", || {
            let c = outcome_probabilities(&s.franson.with_offset(CONSTRUCTIVE_OFFSET_PM));
            let d = outcome_probabilities(&s.franson.with_offset(DESTRUCTIVE_OFFSET_PM));
            let v = s.franson.effective_visibility();
            let ok = (c.central - (2.0 + 2.0 * v) / 16.0).abs() < 1e-12
                && (d.central - (2.0 - 2.0 * v) / 16.0).abs() < 1e-12
                && (c.early + c.late - 2.0 / 16.0).abs() < 1e-15;
            Ok((ok, format!("central {:.4} / {:.4}", c.central, d.central)))
        }),
        check("corrupted_scenario_rejected", || {
            let mut v: serde_json::Value = serde_json::from_str(&s.to_json())?;
            v["source"]["unexpected_key"] = serde_json::json!(1);
            let unknown = Scenario::from_json(&v.to_string()).is_err();
            v = serde_json::from_str(&s.to_json())?;
            v["schema_version"] = serde_json::json!(99);
            let version = Scenario::from_json(&v.to_string()).is_err();
            Ok((unknown && version, format!("unknown key rejected {unknown}, bad version rejected {version}")))
        }),
        check("rerun_is_identical", || {
            let run = || {
                car_scan(
                    &s.source,
                    &s.detection,
                    &s.histogram,
                    &[0.05, 0.2],
                    DurationPolicy::Fixed { duration_s: 2.0 },
                    s.seed,
                )
            };
            let (a, b) = (run()?, run()?);
            Ok((a == b, format!("{} rows compared", a.len())))
        }),
        check("analytic_fringe_fit", || {
            let offsets: Vec<f64> = (0..12).map(|k| 5.0 + 0.66 * k as f64).collect();
            let rows = fringe_scan(
                &s.source,
                &s.detection,
                &s.histogram,
                &s.franson,
                &offsets,
                0.02,
                100.0,
                ScanMode::Analytic,
                s.seed,
            )?;
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.offset_pm, r.central_counts)).collect();
            let fit = fit_fringe(&pts, &FringeParams::guess(&pts, s.franson.fringe_period_pm))?;
            let v = s.franson.effective_visibility();
            let err = (fit.visibility() - v).abs();
            Ok((fit.result.converged && err < 1e-6, format!("V = {:.6}, expected {v:.6}", fit.visibility())))
        }),
        check("fringe_monte_carlo_matches_analytic", || {
            let offsets: Vec<f64> = (0..12).map(|k| 5.0 + 0.66 * k as f64).collect();
            let scan = |mode| {
                fringe_scan(&s.source, &s.detection, &s.histogram, &s.franson, &offsets, 0.05, 50.0, mode, s.seed)
            };
            let (mc, exact) = (scan(ScanMode::MonteCarlo)?, scan(ScanMode::Analytic)?);
            let worst = mc
                .iter()
                .zip(&exact)
                .map(|(m, e)| (m.central_counts - e.central_counts).abs() / e.central_counts.max(1.0).sqrt())
                .fold(0.0, f64::max);
            Ok((worst < 4.5, format!("worst central deviation {worst:.2} sigma")))
        }),
        check("car_monte_carlo_matches_prediction", || {
            let rows = car_scan(
                &s.source,
                &s.detection,
                &s.histogram,
                &[0.2],
                DurationPolicy::Fixed { duration_s: 30.0 },
                s.seed,
            )?;
            let r = &rows[0];
            let z = (r.car - r.car_pred) / r.car_sigma;
            Ok((z.abs() < 4.0, format!("CAR {:.1} vs {:.1}, z = {z:.2}", r.car, r.car_pred)))
        }),
    ];
    let all = checks.iter().all(|c| c.pass);
    ctx.write_json("selftest.json", &checks)?;
    if !all {
        bail!("selftest failed");
    }
    Ok(Status::Ok)
}
