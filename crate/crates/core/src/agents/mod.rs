//! Agent backends: a remote chat backend, a deterministic scripted backend
//! over fact sets, and a replay backend fed from recorded calls.

mod extract;
mod remote;
mod scripted;
mod templates;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use extract::{extract_answer, normalize_answer, parse_peer_scores, to_option_letter};
pub use remote::{
    image_description, remote_complete, ChatClient, ChatMessage, ContentPart, DecodeParams, ModelProfile,
    RemoteAgentBackend, RemoteClassifier, RemoteInstructions, RemoteSceneExtractor,
};
pub use scripted::{
    answer_for, candidate_pool, parse_claims, scripted_factor_scores, scripted_reason, CandidateScore, FactorNoise,
    ParsedClaims, PriorClaims, ScriptedAgent, ScriptedConfig, HEDGE_MARKERS,
};
pub use templates::{render_prompt, template, PromptTemplate, TemplateName, ANSWER_LINE, PEER_SCORES_FORMAT};

use crate::error::{BackendError, Error, Result};
use crate::image::ImageRef;
use crate::model::{AgentId, FactorScores, History, QuestionView, Response, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Reason,
    Defend,
    Summarize,
    /// Final-answer synthesis over summarization responses.
    Synthesize,
    Direct,
    Critique,
    Revise,
    Judge,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Task::Reason => "reason",
            Task::Defend => "defend",
            Task::Summarize => "summarize",
            Task::Synthesize => "synthesize",
            Task::Direct => "direct",
            Task::Critique => "critique",
            Task::Revise => "revise",
            Task::Judge => "judge",
        };
        f.write_str(s)
    }
}

/// Everything a backend may look at for one call.
#[derive(Debug, Clone, Copy)]
pub struct AgentRequest<'a> {
    pub task: Task,
    pub agent_id: AgentId,
    pub role: Role,
    pub round: u32,
    /// Per-item seed; scripted noise is derived from it.
    pub seed: u64,
    pub question: &'a QuestionView,
    pub image: &'a ImageRef,
    pub history: &'a History,
    /// Responses this call reacts to: the round's reasoning for a defense,
    /// collected answers for summaries and judges.
    pub current: &'a [Response],
    /// Agents to score in a defense.
    pub candidates: &'a [AgentId],
    /// Scores this agent received in the previous round, keyed by voter.
    pub performance: Option<&'a BTreeMap<AgentId, FactorScores>>,
    pub draft: Option<&'a str>,
    pub feedback: Option<&'a str>,
}

impl<'a> AgentRequest<'a> {
    pub fn new(
        task: Task,
        agent_id: AgentId,
        role: Role,
        question: &'a QuestionView,
        image: &'a ImageRef,
        history: &'a History,
    ) -> Self {
        Self {
            task,
            agent_id,
            role,
            round: 1,
            seed: 0,
            question,
            image,
            history,
            current: &[],
            candidates: &[],
            performance: None,
            draft: None,
            feedback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_scores: Option<BTreeMap<AgentId, FactorScores>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AgentReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            peer_scores: None,
            warnings: Vec::new(),
        }
    }
}

pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;
    fn respond(&self, req: &AgentRequest<'_>) -> Result<AgentReply, BackendError>;
    /// Calls the engine may have outstanding against this backend at once.
    fn max_in_flight(&self) -> usize {
        1
    }
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Backends by seat: agent `i` talks to `seats[i % seats.len()]`.
#[derive(Clone)]
pub struct AgentPool {
    seats: Vec<Arc<dyn AgentBackend>>,
}

impl fmt::Debug for AgentPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.seats.iter().map(|s| s.name())).finish()
    }
}

impl AgentPool {
    pub fn uniform(backend: Arc<dyn AgentBackend>) -> Self {
        Self { seats: vec![backend] }
    }

    pub fn per_seat(seats: Vec<Arc<dyn AgentBackend>>) -> Result<Self> {
        if seats.is_empty() {
            return Err(Error::Config("agent pool needs at least one backend".into()));
        }
        Ok(Self { seats })
    }

    pub fn for_agent(&self, id: AgentId) -> &Arc<dyn AgentBackend> {
        &self.seats[id.0 % self.seats.len()]
    }

    pub fn max_in_flight(&self) -> usize {
        self.seats.iter().map(|s| s.max_in_flight()).min().unwrap_or(1).max(1)
    }

    pub fn names(&self) -> Vec<String> {
        self.seats.iter().map(|s| s.name().to_string()).collect()
    }
}

/// One backend call as recorded in a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub task: Task,
    pub agent_id: AgentId,
    pub round: u32,
    pub backend: String,
    pub result: CallResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallResult {
    Reply(AgentReply),
    Error(BackendError),
}

impl CallRecord {
    pub fn new(req: &AgentRequest<'_>, backend: &str, result: &Result<AgentReply, BackendError>) -> Self {
        Self {
            task: req.task,
            agent_id: req.agent_id,
            round: req.round,
            backend: backend.to_string(),
            result: match result {
                Ok(r) => CallResult::Reply(r.clone()),
                Err(e) => CallResult::Error(e.clone()),
            },
        }
    }
}

type ReplayKey = (Task, AgentId, u32);

/// Answers calls from a recorded call list, in recorded order per
/// (task, agent, round).
pub struct ReplayBackend {
    queues: Mutex<BTreeMap<ReplayKey, VecDeque<CallResult>>>,
}

impl ReplayBackend {
    pub fn new(calls: &[CallRecord]) -> Self {
        let mut queues: BTreeMap<ReplayKey, VecDeque<CallResult>> = BTreeMap::new();
        for c in calls {
            queues
                .entry((c.task, c.agent_id, c.round))
                .or_default()
                .push_back(c.result.clone());
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    /// Recorded calls that were never asked for.
    pub fn remaining(&self) -> usize {
        self.queues
            .lock()
            .expect("replay lock")
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

impl AgentBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn respond(&self, req: &AgentRequest<'_>) -> Result<AgentReply, BackendError> {
        let mut queues = self.queues.lock().expect("replay lock");
        let next = queues
            .get_mut(&(req.task, req.agent_id, req.round))
            .and_then(VecDeque::pop_front);
        match next {
            Some(CallResult::Reply(r)) => Ok(r),
            Some(CallResult::Error(e)) => Err(e),
            None => Err(BackendError::Protocol {
                endpoint: "replay".into(),
                message: format!(
                    "no recorded {} call for {} in round {}",
                    req.task, req.agent_id, req.round
                ),
            }),
        }
    }
}
