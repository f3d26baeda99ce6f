//! Physical constants and unit conversions.

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Vacuum permittivity (F/m), CODATA 2018.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

pub const FS_PER_S: f64 = 1e15;
pub const FS_PER_PS: i64 = 1_000;

pub fn nm_to_m(nm: f64) -> f64 {
    nm * 1e-9
}

pub fn s_to_fs(s: f64) -> i64 {
    (s * FS_PER_S).round() as i64
}

pub fn fs_to_s(fs: i64) -> f64 {
    fs as f64 / FS_PER_S
}

/// Power ratio for a loss in dB: `10^(-db/10)`.
pub fn db_to_transmission(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Optical bandwidth in MHz of a wavelength span `bandwidth_nm` centred at
/// `center_nm`, using `dnu = c * dlambda / lambda^2`.
pub fn bandwidth_nm_to_mhz(bandwidth_nm: f64, center_nm: f64) -> f64 {
    SPEED_OF_LIGHT * nm_to_m(bandwidth_nm) / nm_to_m(center_nm).powi(2) / 1e6
}
