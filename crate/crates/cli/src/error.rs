use thiserror::Error;
use umps::UmpsError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Umps(#[from] UmpsError),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    AtPath {
        path: String,
        #[source]
        source: UmpsError,
    },

    /// A dataset with no strings in it.
    #[error("dataset {0} is empty")]
    EmptyData(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 64,
            CliError::EmptyData(_) => 2,
            CliError::AtPath { source, .. } => CliError::code_of(source),
            CliError::Umps(e) => CliError::code_of(e),
        }
    }

    fn code_of(e: &UmpsError) -> i32 {
        match e {
            UmpsError::EmptyLanguage => 2,
            UmpsError::Io(_) | UmpsError::Format(_) => 3,
            UmpsError::ZeroAmplitude(_) | UmpsError::NonFinite(_) => 4,
            UmpsError::DivergentClosure { .. }
            | UmpsError::IllConditioned { .. }
            | UmpsError::ZeroMass
            | UmpsError::StarBudget(_) => 5,
            UmpsError::Parse { .. } | UmpsError::UnknownSymbol(_) | UmpsError::NullableStar => 65,
            UmpsError::Dim(_) | UmpsError::EmptyChain | UmpsError::Config(_) => 64,
        }
    }

    /// Attaches the file that an error came from.
    pub fn at(path: &std::path::Path) -> impl FnOnce(UmpsError) -> CliError + '_ {
        move |source| CliError::AtPath {
            path: path.display().to_string(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        let cases: Vec<(CliError, i32)> = vec![
            (UmpsError::EmptyLanguage.into(), 2),
            (UmpsError::Io(io).into(), 3),
            (UmpsError::ZeroAmplitude("01".into()).into(), 4),
            (UmpsError::DivergentClosure { rho: 1.5 }.into(), 5),
            (UmpsError::StarBudget(3).into(), 5),
            (UmpsError::ZeroMass.into(), 5),
            (UmpsError::Parse { offset: 0, message: "x".into() }.into(), 65),
            (UmpsError::UnknownSymbol('z').into(), 65),
            (UmpsError::Config("x".into()).into(), 64),
            (CliError::Usage("x".into()), 64),
            (CliError::at(std::path::Path::new("m"))(UmpsError::Format("x".into())), 3),
        ];
        for (e, code) in cases {
            assert_eq!(e.exit_code(), code, "{e}");
        }
    }
}
