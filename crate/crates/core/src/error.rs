use std::path::PathBuf;

use thiserror::Error;

use crate::agent::Role;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid rubric: {0}")]
    InvalidRubric(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("agent error ({role}): {message}")]
    Agent { role: Role, message: String },

    #[error("no fixture for role {role} at call #{ordinal}")]
    FixtureMiss { role: Role, ordinal: usize },

    #[error("malformed {schema} output: {reason}")]
    MalformedOutput {
        schema: String,
        reason: String,
        raw: String,
    },

    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by the caller's input or configuration rather than
    /// by a provider, the sandbox, or an internal fault.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self.root(),
            Error::InvalidInput(_)
                | Error::InvalidRubric(_)
                | Error::InvalidConfig(_)
                | Error::DegenerateVector(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidRubric(_) => "invalid-rubric",
            Error::InvalidState(_) => "invalid-state",
            Error::InvalidConfig(_) => "invalid-config",
            Error::DegenerateVector(_) => "degenerate-vector",
            Error::Agent { .. } => "agent-error",
            Error::FixtureMiss { .. } => "fixture-miss",
            Error::MalformedOutput { .. } => "malformed-output",
            Error::SandboxUnavailable(_) => "sandbox-unavailable",
            Error::Io { .. } => "io-error",
            Error::Json(_) => "json-error",
            Error::Context { .. } => unreachable!("root never returns a context layer"),
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(context()))
    }
}
