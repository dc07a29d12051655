//! Domain types and the game-state container.
//!
//! [`GameState`] is single-owner: phases read it, the engine mutates it
//! between phases, and the history is append-only.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Agent {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EditType {
    Quantity,
    Object,
    Attribute,
    Spatial,
    Other,
}

impl EditType {
    pub const ALL: [EditType; 5] = [
        EditType::Quantity,
        EditType::Object,
        EditType::Attribute,
        EditType::Spatial,
        EditType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EditType::Quantity => "quantity",
            EditType::Object => "object",
            EditType::Attribute => "attribute",
            EditType::Spatial => "spatial",
            EditType::Other => "other",
        }
    }
}

/// Acceptance-gate result for one generated counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateScores {
    pub c_vs: f64,
    pub c_sc: f64,
    pub c_na: f64,
    pub combined: f64,
    pub accepted: bool,
    pub attempts: u32,
}

/// The question triple: prompt, factual image and (once generated) its
/// counterfactual variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfQuestion {
    pub prompt_text: String,
    pub factual_image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual_image: Option<ImageRef>,
    pub edit_type: EditType,
    #[serde(default)]
    pub edit_instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_scores: Option<GateScores>,
    #[serde(default)]
    pub options: Vec<String>,
    /// Fact key the question asks about; only meaningful for fact-set images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus_key: Option<String>,
    /// Benchmark label. Never part of [`QuestionView`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

impl CfQuestion {
    pub fn new(prompt_text: impl Into<String>, factual_image: ImageRef) -> Result<Self> {
        let q = Self {
            prompt_text: prompt_text.into(),
            factual_image,
            counterfactual_image: None,
            edit_type: EditType::Other,
            edit_instruction: String::new(),
            gate_scores: None,
            options: Vec::new(),
            focus_key: None,
            gold_answer: None,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_options<S: Into<String>>(mut self, options: impl IntoIterator<Item = S>) -> Self {
        self.options = options.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_focus(mut self, key: impl Into<String>) -> Self {
        self.focus_key = Some(key.into());
        self
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_answer = Some(gold.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_text.trim().is_empty() {
            return Err(Error::Invalid("question prompt is empty".into()));
        }
        match (&self.counterfactual_image, &self.gate_scores) {
            (None, _) => Ok(()),
            (Some(_), Some(g)) if g.accepted => Ok(()),
            (Some(_), _) => Err(Error::Invalid(
                "counterfactual image attached without an accepted gate result".into(),
            )),
        }
    }

    /// Attaches a counterfactual; the gate result must be an acceptance.
    pub fn attach_counterfactual(&mut self, image: ImageRef, scores: GateScores) -> Result<()> {
        if !scores.accepted {
            return Err(Error::Invalid(format!(
                "gate rejected the counterfactual (combined {:.4})",
                scores.combined
            )));
        }
        self.counterfactual_image = Some(image);
        self.gate_scores = Some(scores);
        Ok(())
    }

    /// The agent-visible part of the question.
    pub fn agent_view(&self) -> QuestionView {
        QuestionView {
            prompt_text: self.prompt_text.clone(),
            options: self.options.clone(),
            focus_key: self.focus_key.clone(),
        }
    }

    pub fn image_for(&self, role: Role) -> Option<&ImageRef> {
        match role {
            Role::Debater => Some(&self.factual_image),
            Role::Undercover => self.counterfactual_image.as_ref(),
        }
    }

    pub fn image_by_digest(&self, digest: &str) -> Option<&ImageRef> {
        if self.factual_image.digest == digest {
            return Some(&self.factual_image);
        }
        self.counterfactual_image.as_ref().filter(|img| img.digest == digest)
    }
}

/// What an agent is allowed to see of a question. Has no gold answer field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub prompt_text: String,
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus_key: Option<String>,
}

impl QuestionView {
    /// Prompt text followed by lettered options, as sent to agents.
    pub fn render(&self) -> String {
        if self.options.is_empty() {
            return self.prompt_text.clone();
        }
        let mut out = self.prompt_text.clone();
        out.push_str("\nOptions:");
        for (i, opt) in self.options.iter().enumerate() {
            out.push_str(&format!("\n{}. {}", option_letter(i), opt));
        }
        out
    }
}

pub fn option_letter(index: usize) -> char {
    (b'A' + (index % 26) as u8) as char
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "D")]
    Debater,
    #[serde(rename = "U")]
    Undercover,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Debater => "D",
            Role::Undercover => "U",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: AgentId,
    pub display_name: String,
    pub role: Role,
    /// Digest of the image this agent was given.
    pub assigned_image: String,
    pub backend: String,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Reasoning,
    Defense,
    Summarization,
    Answer,
}

/// Four suspicion factors on a 0..=10 scale: inconsistency, deviation from
/// consensus, detail inaccuracy, behavioural suspicion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactorScores(pub [f64; 4]);

impl FactorScores {
    pub const NEUTRAL: FactorScores = FactorScores([5.0; 4]);
    pub const MAX: f64 = 10.0;

    pub fn clamped(self) -> Self {
        FactorScores(self.0.map(|v| if v.is_nan() { 5.0 } else { v.clamp(0.0, Self::MAX) }))
    }

    pub fn weighted(&self, weights: &VoteWeights) -> f64 {
        self.0.iter().zip(weights.0.iter()).map(|(phi, w)| phi * w).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteWeights(pub [f64; 4]);

impl Default for VoteWeights {
    fn default() -> Self {
        VoteWeights([0.25; 4])
    }
}

impl VoteWeights {
    pub fn scaled(&self, k: f64) -> Self {
        VoteWeights(self.0.map(|w| w * k))
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("vote weights must be >= 0, got {:?}", self.0)));
        }
        if self.0.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("vote weights must not all be zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub agent_id: AgentId,
    pub round: u32,
    pub kind: ResponseKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_scores: Option<BTreeMap<AgentId, FactorScores>>,
    /// Backend gave up for this agent; `text` is empty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub abstained: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Response {
    pub fn new(agent_id: AgentId, round: u32, kind: ResponseKind, text: impl Into<String>) -> Self {
        Self {
            agent_id,
            round,
            kind,
            text: text.into(),
            extracted_answer: None,
            peer_scores: None,
            abstained: false,
            warnings: Vec::new(),
        }
    }

    pub fn abstained(agent_id: AgentId, round: u32, kind: ResponseKind, reason: String) -> Self {
        Self {
            abstained: true,
            warnings: vec![reason],
            ..Self::new(agent_id, round, kind, "")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub voter_id: AgentId,
    pub target_id: AgentId,
    pub round: u32,
    pub factor_scores: FactorScores,
    pub weighted_total: f64,
}

/// Voter x candidate x 4 factor scores for one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<FactorEntry>", try_from = "Vec<FactorEntry>")]
pub struct FactorMatrix {
    entries: BTreeMap<(AgentId, AgentId), FactorScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEntry {
    pub voter: AgentId,
    pub candidate: AgentId,
    pub scores: FactorScores,
}

impl From<FactorMatrix> for Vec<FactorEntry> {
    fn from(m: FactorMatrix) -> Self {
        m.entries
            .into_iter()
            .map(|((voter, candidate), scores)| FactorEntry {
                voter,
                candidate,
                scores,
            })
            .collect()
    }
}

impl TryFrom<Vec<FactorEntry>> for FactorMatrix {
    type Error = Error;

    fn try_from(v: Vec<FactorEntry>) -> Result<Self> {
        let mut m = FactorMatrix::default();
        for e in v {
            m.insert(e.voter, e.candidate, e.scores)?;
        }
        Ok(m)
    }
}

impl FactorMatrix {
    /// Inserts a clamped entry. Self-scoring is rejected.
    pub fn insert(&mut self, voter: AgentId, candidate: AgentId, scores: FactorScores) -> Result<()> {
        if voter == candidate {
            return Err(Error::Invalid(format!("{voter} cannot score itself")));
        }
        self.entries.insert((voter, candidate), scores.clamped());
        Ok(())
    }

    pub fn get(&self, voter: AgentId, candidate: AgentId) -> Option<&FactorScores> {
        self.entries.get(&(voter, candidate))
    }

    /// Scores `voter` gave, ordered by candidate id.
    pub fn row(&self, voter: AgentId) -> impl Iterator<Item = (AgentId, &FactorScores)> {
        self.entries
            .range((voter, AgentId(0))..=(voter, AgentId(usize::MAX)))
            .map(|((_, c), s)| (*c, s))
    }

    /// Scores `candidate` received, ordered by voter id.
    pub fn received(&self, candidate: AgentId) -> impl Iterator<Item = (AgentId, &FactorScores)> {
        self.entries
            .iter()
            .filter(move |((_, c), _)| *c == candidate)
            .map(|((v, _), s)| (*v, s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AgentId, AgentId, &FactorScores)> {
        self.entries.iter().map(|((v, c), s)| (*v, *c, s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub responses: Vec<Response>,
    pub defenses: Vec<Response>,
    pub factor_matrix: FactorMatrix,
    pub votes: Vec<Vote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eliminated_id: Option<AgentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eliminated_role: Option<Role>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RoundRecord {
    pub fn empty(round: u32) -> Self {
        Self {
            round,
            responses: Vec::new(),
            defenses: Vec::new(),
            factor_matrix: FactorMatrix::default(),
            votes: Vec::new(),
            eliminated_id: None,
            eliminated_role: None,
            warnings: Vec::new(),
        }
    }
}

/// Append-only list of closed rounds, indexed contiguously from 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RoundRecord>", into = "Vec<RoundRecord>")]
pub struct History {
    rounds: Vec<RoundRecord>,
}

impl History {
    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn push(&mut self, record: RoundRecord) -> Result<()> {
        let expected = self.rounds.len() as u32 + 1;
        if record.round != expected {
            return Err(Error::Sequence {
                expected,
                got: record.round,
            });
        }
        self.rounds.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&RoundRecord> {
        self.rounds.last()
    }
}

impl TryFrom<Vec<RoundRecord>> for History {
    type Error = Error;

    fn try_from(rounds: Vec<RoundRecord>) -> Result<Self> {
        let mut h = History::default();
        for r in rounds {
            h.push(r)?;
        }
        Ok(h)
    }
}

impl From<History> for Vec<RoundRecord> {
    fn from(h: History) -> Self {
        h.rounds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Detection,
    Summarization,
    Finished,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for GateWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.4,
            gamma: 0.2,
        }
    }
}

/// Heuristic thresholds for labelling rejected edits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureThresholds {
    /// Raw cosine above which both similarities mark an edit as too subtle.
    pub too_subtle_raw: f64,
    /// Mapped semantic score below which the edit is considered failed.
    pub failed_edit_semantic: f64,
    /// Mapped naturalness below which the edit is considered unnatural.
    pub unnatural: f64,
}

impl Default for FailureThresholds {
    fn default() -> Self {
        Self {
            too_subtle_raw: 0.98,
            failed_edit_semantic: 0.5,
            unnatural: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub n_agents: usize,
    pub t_max: u32,
    pub vote_weights: VoteWeights,
    pub gate_weights: GateWeights,
    pub gate_threshold: f64,
    /// Scale of the FID-to-[0,1] naturalness map.
    pub gate_tau: f64,
    pub gate_max_attempts: u32,
    pub failure_labels: FailureThresholds,
    pub sim_lambda: f64,
    pub sim_mu: f64,
    pub max_sum_rounds: u32,
    pub rng_seed: u64,
    /// Extra attempts per agent call before the agent abstains for the round.
    pub agent_retries: u32,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            t_max: 3,
            vote_weights: VoteWeights::default(),
            gate_weights: GateWeights::default(),
            gate_threshold: 0.7,
            gate_tau: 50.0,
            gate_max_attempts: 3,
            failure_labels: FailureThresholds::default(),
            sim_lambda: 0.5,
            sim_mu: 0.5,
            max_sum_rounds: 2,
            rng_seed: 0,
            agent_retries: 0,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 3 {
            return Err(Error::Config(format!("n_agents must be >= 3, got {}", self.n_agents)));
        }
        if self.t_max < 1 {
            return Err(Error::Config("t_max must be >= 1".into()));
        }
        self.vote_weights.validate()?;
        let GateWeights { alpha, beta, gamma } = self.gate_weights;
        if [alpha, beta, gamma].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "gate weights must be >= 0, got ({alpha}, {beta}, {gamma})"
            )));
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return Err(Error::Config(format!(
                "gate threshold must be in [0, 1], got {}",
                self.gate_threshold
            )));
        }
        if self.gate_tau.is_nan() || self.gate_tau <= 0.0 {
            return Err(Error::Config("gate_tau must be > 0".into()));
        }
        if self.gate_max_attempts < 1 {
            return Err(Error::Config("gate_max_attempts must be >= 1".into()));
        }
        if self.sim_lambda.is_nan() || self.sim_mu.is_nan() || self.sim_lambda < 0.0 || self.sim_mu < 0.0 {
            return Err(Error::Config("sim_lambda and sim_mu must be >= 0".into()));
        }
        if self.max_sum_rounds < 1 {
            return Err(Error::Config("max_sum_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    UndercoverFound,
    InsufficientAgents,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub final_answer: String,
    pub detection_succeeded: bool,
    /// Round in which the undercover was eliminated; 0 when it never was.
    pub rounds_to_detection: u32,
    pub eliminated_ids: Vec<AgentId>,
    pub termination_cause: TerminationCause,
    /// The synthesizer reply was unusable and the modal answer was taken.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub answer_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub question: CfQuestion,
    pub agents: Vec<AgentProfile>,
    /// Responses of the round in progress.
    pub responses: Vec<Response>,
    history: History,
    mode: Mode,
    round: u32,
    pub config: GameConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<GameOutcome>,
}

/// Draws the undercover seat from a seeded generator.
pub fn draw_undercover(rng: &mut impl RngCore, n_agents: usize) -> AgentId {
    AgentId(rng.random_range(0..n_agents))
}

/// The seat [`init_game`] picks when driven by `ChaCha8Rng::seed_from_u64(seed)`.
pub fn undercover_seat(seed: u64, n_agents: usize) -> AgentId {
    draw_undercover(&mut ChaCha8Rng::seed_from_u64(seed), n_agents)
}

pub fn init_game(question: CfQuestion, config: GameConfig, rng: &mut impl RngCore) -> Result<GameState> {
    config.validate()?;
    question.validate()?;
    let counterfactual = question
        .counterfactual_image
        .as_ref()
        .ok_or(Error::GateNotRun)?
        .digest
        .clone();
    let undercover = draw_undercover(rng, config.n_agents);
    let agents = (0..config.n_agents)
        .map(|i| {
            let id = AgentId(i);
            let role = if id == undercover {
                Role::Undercover
            } else {
                Role::Debater
            };
            AgentProfile {
                agent_id: id,
                display_name: format!("Agent {i}"),
                role,
                assigned_image: match role {
                    Role::Undercover => counterfactual.clone(),
                    Role::Debater => question.factual_image.digest.clone(),
                },
                backend: "default".into(),
                alive: true,
            }
        })
        .collect();
    Ok(GameState {
        question,
        agents,
        responses: Vec::new(),
        history: History::default(),
        mode: Mode::Detection,
        round: 1,
        config,
        outcome: None,
    })
}

impl GameState {
    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentProfile> {
        self.agents.get(id.0)
    }

    pub fn alive(&self) -> impl Iterator<Item = &AgentProfile> {
        self.agents.iter().filter(|a| a.alive)
    }

    pub fn alive_ids(&self) -> Vec<AgentId> {
        self.alive().map(|a| a.agent_id).collect()
    }

    pub fn alive_debaters(&self) -> usize {
        self.alive().filter(|a| a.role == Role::Debater).count()
    }

    pub fn undercover(&self) -> Option<&AgentProfile> {
        self.agents.iter().find(|a| a.role == Role::Undercover)
    }

    pub fn undercover_alive(&self) -> bool {
        self.undercover().is_some_and(|a| a.alive)
    }

    pub fn image_of(&self, agent: &AgentProfile) -> &ImageRef {
        self.question
            .image_by_digest(&agent.assigned_image)
            .expect("agents are only assigned images of their question")
    }

    /// Closes the current round: appends the record, clears `alive` for the
    /// eliminated agent and advances the round counter.
    pub fn append_round(&mut self, mut record: RoundRecord) -> Result<()> {
        if record.round != self.round {
            return Err(Error::Sequence {
                expected: self.round,
                got: record.round,
            });
        }
        if let Some(id) = record.eliminated_id {
            let agent = self
                .agents
                .get_mut(id.0)
                .filter(|a| a.alive)
                .ok_or_else(|| Error::Invalid(format!("{id} is not an alive agent")))?;
            agent.alive = false;
            record.eliminated_role = Some(agent.role);
        }
        self.history.push(record)?;
        self.round += 1;
        self.responses.clear();
        Ok(())
    }

    /// Moves the mode forward; modes never go backwards.
    pub fn advance_mode(&mut self, to: Mode) -> Result<()> {
        if to <= self.mode {
            return Err(Error::ModeTransition {
                from: self.mode.to_string(),
                to: to.to_string(),
            });
        }
        if to == Mode::Summarization && self.undercover_alive() {
            // only allowed once detection has been given up on
            let gave_up = self.round > self.config.t_max || self.alive_debaters() <= 1;
            if !gave_up {
                return Err(Error::ModeTransition {
                    from: self.mode.to_string(),
                    to: "summarization with an undetected undercover".into(),
                });
            }
        }
        self.mode = to;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::FactSet;

    fn question() -> CfQuestion {
        let mut q = CfQuestion::new(
            "What color is the girl's hair?",
            ImageRef::from_facts(FactSet::uniform([("girl.hair", "red")])),
        )
        .unwrap();
        q.attach_counterfactual(
            ImageRef::from_facts(FactSet::uniform([("girl.hair", "black")])),
            GateScores {
                c_vs: 0.9,
                c_sc: 0.9,
                c_na: 1.0,
                combined: 0.92,
                accepted: true,
                attempts: 1,
            },
        )
        .unwrap();
        q
    }

    fn config(n: usize, seed: u64) -> GameConfig {
        GameConfig {
            n_agents: n,
            rng_seed: seed,
            ..GameConfig::default()
        }
    }

    fn init(n: usize, seed: u64) -> GameState {
        init_game(question(), config(n, seed), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn init_assigns_exactly_one_undercover() {
        let s = init(4, 7);
        let u: Vec<_> = s.agents.iter().filter(|a| a.role == Role::Undercover).collect();
        assert_eq!(u.len(), 1);
        assert_eq!(
            Some(&u[0].assigned_image),
            s.question.counterfactual_image.as_ref().map(|i| &i.digest)
        );
        for a in s.agents.iter().filter(|a| a.role == Role::Debater) {
            assert_eq!(a.assigned_image, s.question.factual_image.digest);
        }
        assert_eq!(s.mode(), Mode::Detection);
        assert_eq!(s.round(), 1);
        assert!(s.history().is_empty());
    }

    #[test]
    fn init_is_deterministic_under_seed() {
        let a = init(3, 99).undercover().unwrap().agent_id;
        let b = init(3, 99).undercover().unwrap().agent_id;
        assert_eq!(a, b);
        assert_eq!(a, undercover_seat(99, 3));
    }

    #[test]
    fn init_requires_counterfactual() {
        let q = CfQuestion::new("Is there a car?", ImageRef::from_url("http://x/1.png")).unwrap();
        let err = init_game(q, config(4, 1), &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::GateNotRun));
    }

    #[test]
    fn init_rejects_small_games() {
        let err = init_game(question(), config(2, 1), &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn append_round_advances_and_eliminates() {
        let mut s = init(4, 7);
        s.append_round(RoundRecord::empty(1)).unwrap();
        assert_eq!(s.history().len(), 1);
        assert_eq!(s.round(), 2);

        let mut r = RoundRecord::empty(2);
        r.eliminated_id = Some(AgentId(2));
        s.append_round(r).unwrap();
        assert!(!s.agents[2].alive);
        assert_eq!(s.alive().count(), 3);
        assert_eq!(s.history().last().unwrap().eliminated_role, Some(s.agents[2].role));
    }

    #[test]
    fn append_round_rejects_out_of_sequence() {
        let mut s = init(4, 7);
        s.append_round(RoundRecord::empty(1)).unwrap();
        let err = s.append_round(RoundRecord::empty(3)).unwrap_err();
        assert!(matches!(err, Error::Sequence { expected: 2, got: 3 }));
    }

    #[test]
    fn modes_only_move_forward() {
        let mut s = init(4, 7);
        let u = s.undercover().unwrap().agent_id;
        let mut r = RoundRecord::empty(1);
        r.eliminated_id = Some(u);
        s.append_round(r).unwrap();
        s.advance_mode(Mode::Summarization).unwrap();
        assert!(s.advance_mode(Mode::Detection).is_err());
        s.advance_mode(Mode::Finished).unwrap();
    }

    #[test]
    fn summarization_with_live_undercover_needs_termination() {
        let mut s = init(4, 7);
        assert!(s.advance_mode(Mode::Summarization).is_err());
    }

    #[test]
    fn agent_view_hides_gold() {
        let q = question().with_gold("A");
        let json = serde_json::to_string(&q.agent_view()).unwrap();
        assert!(!json.contains("gold"));
    }

    #[test]
    fn factor_matrix_serializes_as_entry_list() {
        let mut m = FactorMatrix::default();
        m.insert(AgentId(0), AgentId(1), FactorScores([11.0, -1.0, 3.0, 4.0]))
            .unwrap();
        assert_eq!(m.get(AgentId(0), AgentId(1)).unwrap().0, [10.0, 0.0, 3.0, 4.0]);
        assert!(m.insert(AgentId(1), AgentId(1), FactorScores::NEUTRAL).is_err());
        let json = serde_json::to_string(&m).unwrap();
        let back: FactorMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn history_deserialization_checks_contiguity() {
        let json = serde_json::to_string(&vec![RoundRecord::empty(1), RoundRecord::empty(3)]).unwrap();
        assert!(serde_json::from_str::<History>(&json).is_err());
    }
}
