use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian: asymmetry {asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not unitary: defect {defect:.3e} exceeds {tolerance:.3e}")]
    NotUnitary { defect: f64, tolerance: f64 },

    #[error("eigensolver did not converge (residual {residual:.3e})")]
    EigenNonConvergence { residual: f64 },

    #[error("eigenvalue pinned at zero on [{t_start}, {t_end}]")]
    PinnedZero { t_start: f64, t_end: f64 },

    #[error("refinement exceeded depth {depth} on [{t_start}, {t_end}]")]
    MaxDepthExceeded {
        depth: usize,
        t_start: f64,
        t_end: f64,
    },

    #[error("winding number is not resolved: integral {value:.6} is {residual:.3e} from an integer")]
    WindingUnresolved { value: f64, residual: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("boundary endomorphism: {0}")]
    InvalidSplitting(String),

    #[error("gauge map: {0}")]
    InvalidGauge(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scenario '{scenario}': {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_scenario(self, name: &str) -> Self {
        Error::Scenario {
            scenario: name.to_string(),
            source: Box::new(self),
        }
    }
}
