use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("user index {index} out of range for population of {n_users}")]
    UserOutOfRange { index: usize, n_users: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("estimate for user {0} is undefined; exclude it from aggregation")]
    UndefinedUser(usize),

    #[error("user {0} sent in every round; background estimate is undefined")]
    BackgroundUndefined(usize),

    #[error("user {0} has frequency 1; background profile is undefined")]
    NoBackground(usize),

    #[error("user {0} has zero sending frequency")]
    ZeroFrequency(usize),

    #[error("normal-equation matrix is singular: rank {rank} of {n}")]
    Singular { rank: usize, n: usize },

    #[error("no user has a defined estimate")]
    EmptyReport,

    #[error("empty sample set")]
    EmptySamples,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
