//! Self-contained, versioned record of one item under one protocol.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{CallRecord, CallResult, Task};
use crate::bench::{Dataset, Protocol};
use crate::cfquestion::{EditPlan, GateAttempt};
use crate::error::{Error, Result};
use crate::model::{AgentProfile, CfQuestion, GameConfig, GameOutcome, Response, RoundRecord, TerminationCause};

pub const SCHEMA_VERSION: &str = "mug-transcript/1";

/// Dataset-side facts about the item, enough to rescore it offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: String,
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRound {
    pub round: u32,
    pub responses: Vec<Response>,
    /// Every surviving answer agreed after this round.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub consensus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_cause: Option<TerminationCause>,
}

impl ErrorRecord {
    pub fn from_error(e: &Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
            abort_cause: matches!(e, Error::Phase { .. }).then_some(TerminationCause::Timeout),
        }
    }
}

/// Call counts only; wall-clock time would break byte-identical reruns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub calls_by_task: BTreeMap<Task, u32>,
    pub failed_calls: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: String,
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<ItemMeta>,
    pub config: GameConfig,
    pub backends: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<CfQuestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<EditPlan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gate_attempts: Vec<GateAttempt>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<RoundRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summarization: Vec<SummaryRound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_response: Option<Response>,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<GameOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    pub timing: Timing,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl Transcript {
    pub fn new(protocol: Protocol, config: GameConfig, backends: Vec<String>, item: Option<ItemMeta>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            protocol,
            item,
            config,
            backends,
            question: None,
            plan: None,
            gate_attempts: Vec::new(),
            agents: Vec::new(),
            rounds: Vec::new(),
            summarization: Vec::new(),
            final_response: None,
            calls: Vec::new(),
            outcome: None,
            prediction: None,
            timing: Timing::default(),
            warnings: Vec::new(),
            error: None,
        }
    }

    /// Appends calls and refreshes the derived counts.
    pub fn record_calls(&mut self, calls: impl IntoIterator<Item = CallRecord>) {
        self.calls.extend(calls);
        let mut timing = Timing::default();
        for c in &self.calls {
            *timing.calls_by_task.entry(c.task).or_default() += 1;
            if matches!(c.result, CallResult::Error(_)) {
                timing.failed_calls += 1;
            }
        }
        self.timing = timing;
    }

    pub fn fail(&mut self, e: &Error) {
        self.error = Some(ErrorRecord::from_error(e));
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a transcript, rejecting any other schema version.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("");
        if version != SCHEMA_VERSION {
            return Err(Error::Version {
                offenders: vec![format!("{version:?} (expected {SCHEMA_VERSION})")],
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The schema tag of a serialized transcript, without full parsing.
    pub fn schema_of(text: &str) -> Option<String> {
        #[derive(Deserialize)]
        struct Tag {
            schema_version: String,
        }
        serde_json::from_str::<Tag>(text).ok().map(|t| t.schema_version)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn other_versions_are_rejected() {
        let t = Transcript::new(Protocol::Single, GameConfig::default(), vec!["x".into()], None);
        let text = t.to_json().unwrap().replace(SCHEMA_VERSION, "mug-transcript/0");
        assert!(matches!(Transcript::from_json(&text), Err(Error::Version { .. })));
        assert_eq!(Transcript::schema_of(&text).as_deref(), Some("mug-transcript/0"));
    }

    #[test]
    fn empty_transcript_round_trips() {
        let t = Transcript::new(Protocol::Mug, GameConfig::default(), vec![], None);
        let text = t.to_json().unwrap();
        let back = Transcript::from_json(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
