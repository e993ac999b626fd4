use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum UmpsError {
    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("cannot reduce an empty matrix chain")]
    EmptyChain,

    #[error("symbol {0:?} is not in the alphabet")]
    UnknownSymbol(char),

    #[error("regex parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("Kleene star over a subexpression that accepts the empty string always diverges")]
    NullableStar,

    #[error("closure diverges: spectral radius {rho:.6} is not below 1")]
    DivergentClosure { rho: f64 },

    #[error("closure system is ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("regex has zero probability mass under the model")]
    ZeroMass,

    #[error("star repetition budget of {0} exceeded")]
    StarBudget(usize),

    #[error("string {0:?} has zero amplitude")]
    ZeroAmplitude(String),

    #[error("training produced non-finite values: {0}")]
    NonFinite(String),

    #[error("no strings of the grammar fall in the requested length range")]
    EmptyLanguage,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl UmpsError {
    /// True for the errors that signal a closure which cannot be summed.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            UmpsError::DivergentClosure { .. } | UmpsError::IllConditioned { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, UmpsError>;
