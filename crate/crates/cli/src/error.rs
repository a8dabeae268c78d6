use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("threshold not met: denoised/baseline ratio {ratio:.4} > {threshold}")]
    Threshold { ratio: f64, threshold: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    /// 0 success, 1 threshold failure, 2 configuration error, 3 I/O or data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Threshold { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Stage { .. } => 3,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Wraps a stage error with the stage name.
pub(crate) fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Stage {
        stage,
        message: e.to_string(),
    }
}
