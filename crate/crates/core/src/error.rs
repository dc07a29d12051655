use std::fmt;

use crate::cfquestion::GateAttempt;
use crate::model::EditType;

/// Failures raised by agent, scoring and edit backends.
#[derive(Debug, Clone, PartialEq, thiserror::Error, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendError {
    #[error("{endpoint} returned status {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("{endpoint} timed out after {attempts} attempts")]
    Timeout { endpoint: String, attempts: u32 },
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("malformed reply from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("unsupported by this backend: {0}")]
    Unsupported(String),
}

impl BackendError {
    /// Whether a retry has a reasonable chance of succeeding.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Status { status, .. } => matches!(status, 408 | 425 | 429) || (500..600).contains(status),
            BackendError::Timeout { .. } | BackendError::Transport { .. } => true,
            BackendError::Protocol { .. } | BackendError::Unsupported(_) => false,
        }
    }
}

/// Game phase names used in error and transcript records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseName {
    Reasoning,
    Defense,
    Voting,
    Summarization,
}

impl fmt::Display for PhaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PhaseName::Reasoning => "reasoning",
            PhaseName::Defense => "defense",
            PhaseName::Voting => "voting",
            PhaseName::Summarization => "summarization",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("counterfactual image is missing; run the generation gate first")]
    GateNotRun,
    #[error("round mismatch: state is at round {expected}, record is for round {got}")]
    Sequence { expected: u32, got: u32 },
    #[error("invalid mode transition from {from} to {to}")]
    ModeTransition { from: String, to: String },
    #[error("edit type classification failed, backend replied {raw:?}")]
    Classification { raw: String },
    #[error("no edit targets found for {edit_type:?}")]
    NoTarget { edit_type: EditType },
    #[error("edit instruction {last:?} failed lint after {attempts} attempts: {reason}")]
    InstructionLint {
        attempts: u32,
        last: String,
        reason: String,
    },
    #[error("all {attempts} generation attempts were rejected (best combined score {best_combined:.4})", best_combined = best.gate.combined)]
    GateExhausted { attempts: u32, best: Box<GateAttempt> },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{phase} phase aborted: {reason}")]
    Phase { phase: PhaseName, reason: String },
    #[error("vote error: {0}")]
    Vote(String),
    #[error("template {template}: missing value for placeholder {{{placeholder}}}")]
    Template { template: String, placeholder: String },
    #[error("scripted agent: {0}")]
    Script(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("{name} = {value} is outside [0, 1]")]
    Domain { name: &'static str, value: f64 },
    #[error("no records to score")]
    EmptyRun,
    #[error("mixed transcript schema versions: {offenders:?}")]
    Version { offenders: Vec<String> },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable snake_case name of the variant, used in transcripts.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::GateNotRun => "gate_not_run",
            Error::Sequence { .. } => "sequence",
            Error::ModeTransition { .. } => "mode_transition",
            Error::Classification { .. } => "classification",
            Error::NoTarget { .. } => "no_target",
            Error::InstructionLint { .. } => "instruction_lint",
            Error::GateExhausted { .. } => "gate_exhausted",
            Error::Backend(_) => "backend",
            Error::Phase { .. } => "phase",
            Error::Vote(_) => "vote",
            Error::Template { .. } => "template",
            Error::Script(_) => "script",
            Error::Ingest(_) => "ingest",
            Error::Domain { .. } => "domain",
            Error::EmptyRun => "empty_run",
            Error::Version { .. } => "version",
            Error::Invalid(_) => "invalid",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
