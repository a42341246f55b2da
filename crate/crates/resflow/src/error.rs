use std::fmt;
use std::path::PathBuf;

/// One invalid configuration entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted key, e.g. `model.task[1].pos_weight`.
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  ")
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] resflow_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration in {path}:\n  {}", join_issues(.issues))]
    Config { path: PathBuf, issues: Vec<ConfigIssue> },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 1 usage/configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use resflow_core::Error as E;
        match self {
            CliError::Core(E::Config(_) | E::Usage(_)) | CliError::Config { .. } | CliError::Usage(_) => 1,
            CliError::Core(E::NonFiniteLoss { .. }) | CliError::Gradcheck(_) => 3,
            CliError::Core(_)
            | CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::Checkpoint { .. }
            | CliError::Data(_) => 2,
        }
    }
}
