use std::fmt;
use std::process::ExitCode;

use complaint_core::Error;

/// A command failure together with its exit code class.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation or configuration (exit 1).
    Usage(String),
    /// Missing or malformed input data (exit 2).
    Data(anyhow::Error),
    /// NaN/Inf during training or checking (exit 3).
    Numerical(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Data(e) | Failure::Numerical(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.into())
        } else if matches!(e, Error::Config(_)) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.into())
        }
    }
}

pub fn io_failure(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::Data(anyhow::anyhow!("{}: {e}", path.display()))
}
