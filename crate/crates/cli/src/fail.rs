use posecheck::Error;

/// Which part of the run failed; decides the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Train,
    Eval,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Config => 2,
            Stage::Data => 3,
            Stage::Train => 4,
            Stage::Eval => 5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{msg}")]
pub struct Fail {
    pub stage: Stage,
    pub msg: String,
}

impl Fail {
    pub fn new(stage: Stage, msg: impl Into<String>) -> Self {
        Self { stage, msg: msg.into() }
    }

    /// Maps a library error raised while running `stage`. Input problems
    /// are data errors wherever they surface.
    pub fn at(stage: Stage) -> impl Fn(Error) -> Fail {
        move |e| {
            let kind = match &e {
                _ if stage == Stage::Config => Stage::Config,
                Error::Io(_) | Error::Parse { .. } | Error::Format(_) | Error::Json(_) => Stage::Data,
                Error::InvalidPose(_) | Error::InvalidSymmetry(_) | Error::InvalidCamera(_) => Stage::Config,
                Error::Architecture(_) => Stage::Train,
                Error::SingleClass { .. } if stage == Stage::Train => Stage::Train,
                Error::SingleClass { .. } => Stage::Data,
                Error::NoGroundTruth => Stage::Eval,
                _ => stage,
            };
            Fail::new(kind, e.to_string())
        }
    }
}
