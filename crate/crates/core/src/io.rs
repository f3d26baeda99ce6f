//! File formats: dispersion tables, CE spectra, time tags (binary and CSV),
//! histograms, scans and fringe tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coincidence::{CoincidenceHistogram, ScanRow};
use crate::detection::{Tag, TimeTagStream};
use crate::dispersion_qpm::{CESpectrum, CePoint, DispersionModel};
use crate::franson::FringeRow;
use crate::{Error, Result};

/// Bytes per binary tag record: `u8` channel then `i64` time, little-endian.
pub const TAG_RECORD_BYTES: usize = 9;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DispersionRow {
    lambda_nm: f64,
    n_fh: f64,
    n_sh: f64,
}

/// Read `lambda_nm,n_fh,n_sh`. `n_sh` is tabulated at `lambda_nm / 2`.
pub fn read_dispersion_csv(r: impl Read) -> Result<DispersionModel> {
    let rows: Vec<DispersionRow> = csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let l: Vec<f64> = rows.iter().map(|r| r.lambda_nm).collect();
    let fh: Vec<f64> = rows.iter().map(|r| r.n_fh).collect();
    let sh: Vec<f64> = rows.iter().map(|r| r.n_sh).collect();
    DispersionModel::from_table(&l, &fh, &sh)
}

pub fn write_dispersion_csv(
    w: impl Write,
    model: &DispersionModel,
    lambda_nm: &[f64],
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for &l in lambda_nm {
        let (n_fh, n_sh) = model.indices(l)?;
        wr.serialize(DispersionRow {
            lambda_nm: l,
            n_fh,
            n_sh,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Read `lambda_nm,ce_per_w[,sigma]`.
pub fn read_ce_csv(r: impl Read) -> Result<CESpectrum> {
    let mut rd = csv::ReaderBuilder::new().flexible(false).from_reader(r);
    let headers = rd.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["lambda_nm", "ce_per_w"] && names != ["lambda_nm", "ce_per_w", "sigma"] {
        return Err(Error::Format(format!(
            "expected header lambda_nm,ce_per_w[,sigma], got {}",
            names.join(",")
        )));
    }
    let points: Vec<CePoint> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
    CESpectrum::new(points)
}

pub fn write_ce_csv(w: impl Write, spectrum: &CESpectrum) -> Result<()> {
    let with_sigma = spectrum.points().iter().all(|p| p.sigma.is_some()) && !spectrum.is_empty();
    let mut wr = csv::Writer::from_writer(w);
    if with_sigma {
        wr.write_record(["lambda_nm", "ce_per_w", "sigma"])?;
    } else {
        wr.write_record(["lambda_nm", "ce_per_w"])?;
    }
    for p in spectrum.points() {
        let mut rec = vec![p.lambda_nm.to_string(), p.ce_per_w.to_string()];
        if with_sigma {
            rec.push(p.sigma.unwrap().to_string());
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_tags_binary(mut w: impl Write, tags: &[Tag]) -> Result<()> {
    let mut buf = [0u8; TAG_RECORD_BYTES];
    for t in tags {
        buf[0] = t.channel;
        buf[1..].copy_from_slice(&t.time_fs.to_le_bytes());
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tags_binary(mut r: impl Read) -> Result<Vec<Tag>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % TAG_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "binary tag file of {} bytes is not a whole number of {TAG_RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(TAG_RECORD_BYTES)
        .map(|c| Tag::new(c[0], i64::from_le_bytes(c[1..].try_into().unwrap())))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TagRow {
    channel: u8,
    time_fs: i64,
}

pub fn write_tags_csv(w: impl Write, tags: &[Tag]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for t in tags {
        wr.serialize(TagRow {
            channel: t.channel,
            time_fs: t.time_fs,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_tags_csv(r: impl Read) -> Result<Vec<Tag>> {
    csv::Reader::from_reader(r)
        .deserialize::<TagRow>()
        .map(|row| row.map(|r| Tag::new(r.channel, r.time_fs)).map_err(Error::from))
        .collect()
}

/// Read a tag file, choosing CSV for a `.csv` extension and binary otherwise.
pub fn read_tag_file(path: &Path, duration_s: f64) -> Result<TimeTagStream> {
    let f = BufReader::new(File::open(path)?);
    let tags = if is_csv(path) {
        read_tags_csv(f)?
    } else {
        read_tags_binary(f)?
    };
    TimeTagStream::new(tags, duration_s)
}

pub fn write_tag_file(path: &Path, tags: &[Tag]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_tags_csv(f, tags)
    } else {
        write_tags_binary(f, tags)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub delay_fs: f64,
    pub counts: u64,
}

pub fn histogram_rows(h: &CoincidenceHistogram) -> Vec<HistogramRow> {
    h.bin_centers_fs()
        .into_iter()
        .zip(&h.counts)
        .map(|(delay_fs, &counts)| HistogramRow { delay_fs, counts })
        .collect()
}

/// `delay_fs,counts` with bin centres.
pub fn write_histogram_csv(w: impl Write, h: &CoincidenceHistogram) -> Result<()> {
    write_rows(w, &histogram_rows(h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanCsvRow {
    pub power_mw: f64,
    pub pcr_hz: f64,
    pub car: f64,
    pub car_pred: f64,
}

impl From<&ScanRow> for ScanCsvRow {
    fn from(r: &ScanRow) -> Self {
        Self {
            power_mw: r.power_mw,
            pcr_hz: r.pcr_hz,
            car: r.car,
            car_pred: r.car_pred,
        }
    }
}

/// `power_mw,pcr_hz,car,car_pred`.
pub fn write_scan_csv(w: impl Write, rows: &[ScanRow]) -> Result<()> {
    let rows: Vec<ScanCsvRow> = rows.iter().map(ScanCsvRow::from).collect();
    write_rows(w, &rows)
}

/// `offset_pm,central_counts,side_early,side_late`.
pub fn write_fringe_csv(w: impl Write, rows: &[FringeRow]) -> Result<()> {
    write_rows(w, rows)
}

#[derive(Debug, Deserialize)]
struct FringeInRow {
    offset_pm: f64,
    central_counts: f64,
    #[serde(default)]
    #[allow(dead_code)]
    side_early: Option<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    side_late: Option<f64>,
}

/// Read `(offset_pm, central_counts)`; side-peak columns are optional.
pub fn read_fringe_csv(r: impl Read) -> Result<Vec<(f64, f64)>> {
    csv::Reader::from_reader(r)
        .deserialize::<FringeInRow>()
        .map(|row| row.map(|r| (r.offset_pm, r.central_counts)).map_err(Error::from))
        .collect()
}

/// Serialize any rows with a header derived from field names.
pub fn write_rows<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
