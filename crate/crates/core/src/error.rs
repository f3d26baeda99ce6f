use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("wavelength {wavelength_nm} nm outside dispersion band [{min_nm}, {max_nm}] nm")]
    OutOfBand {
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },

    #[error("no quasi-phase-matching possible: k_SH - 2 k_P = {mismatch} rad/m is not positive")]
    NoQpm { mismatch: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite residual at parameters {params:?}")]
    NonFinite { params: Vec<f64> },

    #[error("ill-posed fit: {0}")]
    IllPosed(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("time tags out of order at index {index}: {time_fs} fs follows {previous_fs} fs")]
    Unordered {
        index: usize,
        previous_fs: i64,
        time_fs: i64,
    },

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
