use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for CLI reporting. Each pipeline stage gets a
    /// distinct code so callers can tell where a run aborted.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { stage, .. } => match *stage {
                "load" => 10,
                "split" => 11,
                "attack" => 12,
                "fit" => 13,
                "defense" => 14,
                "train" => 15,
                "emit" => 16,
                _ => 2,
            },
            Error::Config(_) => 3,
            Error::Parse { .. } => 4,
            _ => 2,
        }
    }
}
