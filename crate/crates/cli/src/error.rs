use std::path::PathBuf;

/// Errors surfaced by the command runners, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: safedpc::Error,
    },
    #[error("{0}")]
    Domain(String),
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn stage(stage: impl Into<String>) -> impl FnOnce(safedpc::Error) -> CliError {
        let stage = stage.into();
        move |source| CliError::Stage { stage, source }
    }

    /// 0 success, 1 domain failure, 2 usage or config error.
    pub fn exit_code(&self) -> i32 {
        use safedpc::Error as E;
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Stage { source, .. } => match source {
                E::InvalidParameter(_)
                | E::Shape(_)
                | E::UnsupportedModel(_)
                | E::MissingDependency { .. }
                | E::WeightFormat(_)
                | E::Io(_) => 2,
                _ => 1,
            },
            CliError::Domain(_) | CliError::Write { .. } => 1,
        }
    }
}
