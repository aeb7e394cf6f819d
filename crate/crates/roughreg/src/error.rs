use std::fmt;

/// Failure of a scenario run, mapped onto the process exit code.
#[derive(Clone, Debug, PartialEq)]
pub enum CliError {
    /// Bad key, bad value, unreadable config or output path.
    Config(String),
    /// A core routine failed, or a computed quantity is not finite.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub(crate) fn num<E: fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

pub(crate) fn cfg<E: fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}
