use thiserror::Error;

use crate::domain::ToolId;
use crate::validate::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported {tool} report: {reason}")]
    UnsupportedReport { tool: ToolId, reason: String },

    #[error("no report adapter for tool `{0}`")]
    UnknownTool(String),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("malformed app profile: {0}")]
    MalformedProfile(String),

    /// A shipped or user-supplied data file (taxonomy, lexicon, catalog,
    /// category map, impact rules, weights) failed to parse or validate.
    #[error("malformed {what}: {reason}")]
    MalformedData { what: &'static str, reason: String },

    #[error("malformed mitigation knowledge base: {0}")]
    MalformedKb(String),

    #[error("mitigation `{entry}` references unknown category `{category}`")]
    DanglingCategory { entry: String, category: String },

    #[error("tool `{0}` supplied more than once")]
    DuplicateTool(ToolId),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("unknown {kind} `{id}`")]
    UnknownEntity { kind: &'static str, id: String },

    #[error("illegal transition: {0}")]
    IllegalTransition(String),

    #[error("corrupt session: {0}")]
    CorruptSession(String),

    #[error("session violates {} invariant(s): {}", .0.len(), summarize(.0))]
    InvalidSession(Vec<Violation>),

    #[error("corpus contains no sessions")]
    EmptyCorpus,
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .take(3)
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn data(what: &'static str, reason: impl ToString) -> Self {
        Error::MalformedData {
            what,
            reason: reason.to_string(),
        }
    }
}
