use std::fmt;

use crate::trajstore::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a propagated error came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Anchors,
    Stage1Pilots,
    Refine,
    Stage2Pilots,
    Scoring,
    Sweep,
    Asha,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Anchors => "anchors",
            Stage::Stage1Pilots => "stage-1 pilots",
            Stage::Refine => "refine",
            Stage::Stage2Pilots => "stage-2 pilots",
            Stage::Scoring => "scoring",
            Stage::Sweep => "full sweep",
            Stage::Asha => "asha",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("generation failure: {0}")]
    Generation(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("fit error at L={window}: {reason}")]
    Fit { window: usize, reason: String },
    #[error("diagnostics error: {0}")]
    Diagnostics(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("[{stage}] {source}")]
    InStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: Stage) -> Error {
        Error::InStage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
