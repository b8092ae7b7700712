use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate triangle {triangle} (signed area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("subdomain {0} has no triangles")]
    EmptySubdomain(u32),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("node {node} has zero lumped mass; it is not covered by any triangle with positive range")]
    ZeroLumpedMass { node: usize },

    #[error("observations outside the mesh: {indices:?}")]
    OutsideMesh { indices: Vec<usize> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no grid point produced a finite objective")]
    GridSearchFailed,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier, used for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::DegenerateTriangle { .. } => "degenerate_triangle",
            Error::EmptySubdomain(_) => "empty_subdomain",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::ZeroLumpedMass { .. } => "zero_lumped_mass",
            Error::OutsideMesh { .. } => "outside_mesh",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::GridSearchFailed => "grid_search_failed",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
