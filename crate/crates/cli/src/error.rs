use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {message}", path.display())]
    Io { path: PathBuf, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },

    #[error("no [loss.N] table: at least one loss is required")]
    NoLosses,
}

impl ConfigError {
    pub(crate) fn from_toml(text: &str, e: &toml::de::Error) -> Self {
        let line = e
            .span()
            .map_or(0, |span| text[..span.start.min(text.len())].matches('\n').count() + 1);
        let message = e.message().trim().to_owned();
        match message.strip_prefix("unknown field `") {
            Some(rest) => Self::UnknownKey {
                line,
                key: rest.split('`').next().unwrap_or_default().to_owned(),
            },
            None => Self::Parse { line, message },
        }
    }
}

/// Failures of a CLI verb, each mapped to a stable exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("gradient check failed for {0}")]
    Verification(String),

    #[error("training diverged for {0}")]
    Diverged(String),

    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] svsoftmax_core::Error),
}

impl CliError {
    pub const EXIT_VERIFICATION: i32 = 1;
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_DIVERGED: i32 = 3;

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => Self::EXIT_CONFIG,
            Self::Diverged(_) => Self::EXIT_DIVERGED,
            Self::Verification(_)
            | Self::MissingArtifacts(_)
            | Self::Io { .. }
            | Self::Format { .. }
            | Self::Core(_) => Self::EXIT_VERIFICATION,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}
