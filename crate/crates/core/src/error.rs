use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Schema,
    Numeric,
    Reference,
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("covariate mismatch: expected {expected}, got {found}")]
    CovariateMismatch { expected: String, found: String },

    #[error("SingularDesign: {0}")]
    SingularDesign(String),

    #[error("region sets differ between datasets: {0}")]
    RegionMismatch(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("unknown site `{0}`")]
    UnknownSite(String),

    #[error("DegenerateVariance: {0}")]
    DegenerateVariance(String),

    #[error("ConvergenceFailure: site `{site}` did not converge after {iterations} iterations (last change {last_change:e})")]
    ConvergenceFailure {
        site: String,
        iterations: usize,
        last_change: f64,
        /// Last posterior location and scale iterates, one per region.
        last_gamma: Vec<f64>,
        last_delta2: Vec<f64>,
    },

    #[error("InsufficientRegions: {0}")]
    InsufficientRegions(String),

    #[error("alignment mismatch: {0}")]
    AlignmentError(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("region `{region}`: {source}")]
    Region {
        region: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{} region(s) failed: {}", .0.len(), region_list(.0))]
    Regions(Vec<(String, Error)>),
}

fn region_list(failures: &[(String, Error)]) -> String {
    failures
        .iter()
        .map(|(r, e)| format!("{r} ({e})"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub fn in_region(self, region: &str) -> Error {
        Error::Region {
            region: region.to_string(),
            source: Box::new(self),
        }
    }

    /// Strips region annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Region { source, .. } => source.root(),
            Error::Regions(v) if v.len() == 1 => v[0].1.root(),
            e => e,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::CovariateMismatch { .. }
            | Error::UnknownRegion(_)
            | Error::UnknownSite(_)
            | Error::RegionMismatch(_) => ErrorClass::Reference,
            Error::InvalidInput(_) | Error::AlignmentError(_) => ErrorClass::Schema,
            Error::Region { source, .. } => source.class(),
            Error::Regions(v) => v
                .iter()
                .map(|(_, e)| e.class())
                .find(|c| *c != ErrorClass::Numeric)
                .unwrap_or(ErrorClass::Numeric),
            _ => ErrorClass::Numeric,
        }
    }

    /// Region identifiers carried by the error, if any.
    pub fn regions(&self) -> Vec<String> {
        match self {
            Error::Region { region, .. } => vec![region.clone()],
            Error::Regions(v) => v.iter().map(|(r, _)| r.clone()).collect(),
            _ => Vec::new(),
        }
    }
}
