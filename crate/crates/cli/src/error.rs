use std::fmt;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", ConfigDisplay { path, line: *line, column: *column, key: key.as_deref(), message })]
    Config {
        path: PathBuf,
        /// 1-based; 0 when unknown.
        line: usize,
        column: usize,
        key: Option<String>,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run failed: {0}")]
    Run(String),
    #[error("oracle verification failed: {0}")]
    Verify(String),
}

impl CliError {
    /// Process exit code: 1 configuration, 2 run, 3 verification.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } => 1,
            Self::Io { .. } | Self::Run(_) => 2,
            Self::Verify(_) => 3,
        }
    }
}

impl From<ircr_core::Error> for CliError {
    fn from(e: ircr_core::Error) -> Self {
        Self::Run(e.to_string())
    }
}

struct ConfigDisplay<'a> {
    path: &'a PathBuf,
    line: usize,
    column: usize,
    key: Option<&'a str>,
    message: &'a str,
}

impl fmt::Display for ConfigDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if self.line > 0 {
            write!(f, ":{}", self.line)?;
            if self.column > 0 {
                write!(f, ":{}", self.column)?;
            }
        }
        if let Some(key) = self.key.filter(|k| !k.is_empty()) {
            write!(f, ": key `{key}`")?;
        }
        write!(f, ": {}", self.message)
    }
}
