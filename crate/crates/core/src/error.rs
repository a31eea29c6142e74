use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown currency code `{0}`")]
    UnknownCurrency(String),

    #[error("{what} must be {constraint}, got {value}")]
    Domain {
        what: &'static str,
        constraint: &'static str,
        value: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("game has an empty genre set")]
    EmptyGenreSet,

    #[error("no usable rows: {0}")]
    EmptyData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sampler initialization failed after {attempts} attempts: {detail}")]
    Initialization { attempts: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, constraint: &'static str, value: impl Into<f64>) -> Self {
        Error::Domain {
            what,
            constraint,
            value: value.into(),
        }
    }

    /// True for errors caused by the content of input files rather than by
    /// configuration.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}
