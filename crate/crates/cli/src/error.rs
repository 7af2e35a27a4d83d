use std::fmt;
use std::path::Path;

use sobl::SoblError;

#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent input. Exit code 2.
    Input(String),
    /// Well-formed input the numerics cannot handle. Exit code 3.
    Numerical(String),
    /// A broken internal invariant. Exit code 4.
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) | CliError::Internal(m) => m,
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "code": self.exit_code(), "error": self.kind(), "message": self.message() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl From<SoblError> for CliError {
    fn from(e: SoblError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}
