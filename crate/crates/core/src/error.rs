use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("seeding error: {0}")]
    Seeding(String),
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// One-word machine-parsable category used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Alignment(_) => "alignment",
            Error::EmptyCorpus(_) => "empty-corpus",
            Error::Decode(_) => "decode",
            Error::Parameter(_) => "parameter",
            Error::Format(_) => "format",
            Error::Parse(_) => "parse",
            Error::Normalization(_) => "normalization",
            Error::Seeding(_) => "seeding",
            Error::DegenerateCorpus(_) => "degenerate-corpus",
            Error::Index(_) => "index",
            Error::DegenerateBatch(_) => "degenerate-batch",
            Error::Divergence(_) => "divergence",
            Error::Pairing(_) => "pairing",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
