use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] ris_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{}:{line}: {reason}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Core(_) => "core",
            HarnessError::Config(_) => "config",
            HarnessError::Manifest(_) => "manifest",
            HarnessError::Format { .. } => "format",
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
