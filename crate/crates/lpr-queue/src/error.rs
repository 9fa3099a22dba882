use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    BadRecord {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    BadSchema { path: PathBuf, message: String },

    #[error("detected time {detected_time} falls outside all signal cycles")]
    OutsideCycles { detected_time: f64 },

    #[error("{context}: need at least {need} samples, got {got}")]
    TooFewSamples {
        context: &'static str,
        need: usize,
        got: usize,
    },

    #[error("constraint system is infeasible; minimal infeasible rows: {rows:?}")]
    Infeasible { rows: Vec<usize> },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("sampler stuck: acceptance rate {acceptance:.4} over {window} proposals; relax the constraint system")]
    SamplerStuck { acceptance: f64, window: usize },

    #[error("all samples have zero density under the joint pdf")]
    ZeroDensity,

    #[error("no feasible exact cover for the cluster")]
    NoFeasibleCover,

    #[error("cover search timed out before finding any feasible selection")]
    CoverTimeout,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
