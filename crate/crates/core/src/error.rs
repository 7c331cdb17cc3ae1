use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Fock truncation residual {residual:.3e} exceeds {limit:.1e}; increase n_max")]
    Truncation { residual: f64, limit: f64 },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("frequency grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("spectral leakage {0:.4} of the field energy lies outside the sampled band")]
    SpectralLeakage(f64),

    #[error("time bins overlap: separation {separation:e} s < bin width {fwhm:e} s")]
    OverlappingBins { separation: f64, fwhm: f64 },

    #[error("no heralds after {0} trials")]
    NoHeralds(u64),

    #[error("calibration anchor `{anchor}` unreachable: {detail}")]
    AnchorUnreachable { anchor: String, detail: String },

    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),

    #[error("missing calibration: {0}")]
    MissingCalibration(String),

    #[error("oracle check failed: {0}")]
    OracleFailed(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("config serialize: {0}")]
    ConfigSerialize(#[from] toml::ser::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
