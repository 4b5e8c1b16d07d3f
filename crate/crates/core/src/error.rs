use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate spectrum: top eigenvalue {0:e} is at or below the floor")]
    DegenerateSpectrum(f64),

    #[error("weight initialisation `data_dependent` needs a data matrix")]
    MissingData,

    #[error("row {0} has zero norm")]
    ZeroRow(usize),

    #[error("residue vector is identically zero")]
    ZeroResidue,

    #[error("alignment of a zero vector is undefined")]
    ZeroVector,

    #[error("basis is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("iterative solver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("training diverged at epoch {epoch}: loss {loss:e}")]
    DivergenceDetected { epoch: usize, loss: f64 },

    #[error("bad IDX magic number 0x{0:08X}")]
    BadMagic(u32),

    #[error("truncated file: header promises {expected} bytes of payload, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("ragged rows: row {row} has {found} fields, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },

    #[error("parse failure at row {row}: {msg}")]
    ParseFailure { row: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("linear algebra backend: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::MissingData => 2,
            Error::Io(_)
            | Error::BadMagic(_)
            | Error::TruncatedFile { .. }
            | Error::RaggedRows { .. }
            | Error::ParseFailure { .. } => 3,
            _ => 4,
        }
    }
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
