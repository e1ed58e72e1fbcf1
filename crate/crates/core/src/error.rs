use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes shared by every module.
///
/// Variant names double as the error names the CLI prints on stderr.
#[derive(Debug, Error)]
pub enum Error {
    #[error("StripExceeded: |Im z| = {im} must stay below {limit}")]
    StripExceeded { im: f64, limit: f64 },

    #[error("SingularEnergy: log|det(A_Λ - E)| = {log_det:.3} is below the floor {floor}")]
    SingularEnergy { log_det: f64, floor: f64 },

    #[error("PavingFailed: no admissible window for sites {sites:?}")]
    PavingFailed { sites: Vec<i64> },

    #[error("IterationDiverged: contraction factor {factor:.4} is not below 1/2")]
    IterationDiverged { factor: f64 },

    #[error("SigmaOutOfRange: sigma = {sigma} outside {allowed}")]
    SigmaOutOfRange { sigma: f64, allowed: &'static str },

    #[error("PotentialConstant: every non-constant Fourier coefficient vanishes")]
    PotentialConstant,

    #[error("HypothesisUnmet: {inequality} fails ({detail})")]
    HypothesisUnmet {
        inequality: &'static str,
        detail: String,
    },

    #[error("DescentExhausted: scale descent reached n0 = {reached} <= sqrt(n) = {floor:.2}")]
    DescentExhausted { reached: usize, floor: f64 },

    #[error("GateFailed: L_n = {l:.4} <= 1000 rho log(1+|v|) = {required:.4} at n = {n}")]
    GateFailed { n: usize, l: f64, required: f64 },

    #[error("DropExceeded: L drops by {drop:.4} between n = {from} and n = {to}, allowed {allowed:.4}")]
    DropExceeded {
        from: usize,
        to: usize,
        drop: f64,
        allowed: f64,
    },

    #[error("ConfigInvalid at {path}: {reason}")]
    ConfigInvalid { path: String, reason: String },

    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),

    #[error("EmptyResult: {0}")]
    EmptyResult(String),

    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short name of the variant, as printed by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::StripExceeded { .. } => "StripExceeded",
            Error::SingularEnergy { .. } => "SingularEnergy",
            Error::PavingFailed { .. } => "PavingFailed",
            Error::IterationDiverged { .. } => "IterationDiverged",
            Error::SigmaOutOfRange { .. } => "SigmaOutOfRange",
            Error::PotentialConstant => "PotentialConstant",
            Error::HypothesisUnmet { .. } => "HypothesisUnmet",
            Error::DescentExhausted { .. } => "DescentExhausted",
            Error::GateFailed { .. } => "GateFailed",
            Error::DropExceeded { .. } => "DropExceeded",
            Error::ConfigInvalid { .. } => "ConfigInvalid",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::EmptyResult(_) => "EmptyResult",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
