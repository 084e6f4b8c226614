use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("covariance is singular or not positive definite")]
    SingularCovariance,

    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    AsymmetricCovariance(f64),

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("mixture has {weights} weights but {components} components")]
    LengthMismatch { weights: usize, components: usize },

    #[error("invalid mixture weight {0}")]
    InvalidWeight(f64),

    #[error("degenerate mixture: no strictly positive weight")]
    DegenerateMixture,

    #[error("transformed value is not finite at cubature point {point}")]
    NonFinite { point: String },

    #[error("near-singular transition jacobian {jacobian:e} at grid point {at}")]
    NearSingularJacobian { at: f64, jacobian: f64 },

    #[error("model '{0}' has no additive time shift structure; rebuild the decomposition instead")]
    UnsupportedModel(String),

    #[error("ill-conditioned decomposition: {0}")]
    IllConditioned(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("posterior support does not overlap the decomposition terms")]
    SupportMismatch,

    #[error("measurement update degenerate: all evidence terms underflow")]
    DegenerateUpdate,

    #[error("particle weights degenerate: all likelihoods underflow")]
    DegenerateParticles,

    #[error("point-mass grid degenerate: total mass vanished")]
    DegenerateGrid,

    #[error("cache format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
