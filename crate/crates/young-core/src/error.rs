use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum YoungError {
    #[error("point outside the map domain: {0}")]
    Domain(String),
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("base parameter {0} lies outside every component")]
    NotInComponent(f64),
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("no bracket: {0}")]
    NoBracket(String),
    #[error("no intersection: {0}")]
    NoIntersection(String),
    #[error("containment: {0}")]
    Containment(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("net coverage: {0}")]
    NetCoverage(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("fit undefined: {0}")]
    FitUndefined(String),
    #[error("degenerate return system: {0}")]
    Degenerate(String),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error("leaves not comparable: {0}")]
    NotComparable(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, YoungError>;

impl From<std::io::Error> for YoungError {
    fn from(e: std::io::Error) -> Self {
        YoungError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for YoungError {
    fn from(e: serde_json::Error) -> Self {
        YoungError::Io(e.to_string())
    }
}
