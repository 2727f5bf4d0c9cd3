use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] spacedreplay_core::Error),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("performance matrix incomplete: {0}")]
    IncompleteMatrix(String),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}
