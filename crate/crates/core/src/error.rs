use thiserror::Error;

#[derive(Debug, Error)]
pub enum FmmError {
    #[error("empty particle set")]
    EmptyParticleSet,
    #[error("index overflow: grid index does not fit the key level")]
    IndexOverflow,
    #[error("max depth exceeded: more than ncrit bodies remain at level 21")]
    MaxDepthExceeded,
    #[error("expansion order mismatch: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },
    #[error("invalid expansion order {0}")]
    InvalidOrder(usize),
    #[error("coincident expansion centers")]
    CoincidentCenters,
    #[error("body coincides with the expansion center")]
    CoincidentBody,
    #[error("ListFmm requires cubic cells")]
    ListFmmRequiresCubic,
    #[error("target accuracy unreachable at this p (p = {p})")]
    TargetUnreachable { p: usize },
    #[error("target accuracy unreachable for every candidate order")]
    AllCandidatesUnreachable,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("particle file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FmmError> = std::result::Result<T, E>;
