use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BenchItem, Dataset, Protocol};
use crate::agents::{extract_answer, normalize_answer, AgentRequest, Task};
use crate::engine::{run_game_with, Caller, GameBackends, GameExtras};
use crate::error::{Error, Result};
use crate::image::ImageRef;
use crate::model::{
    undercover_seat, AgentId, AgentProfile, CfQuestion, GameConfig, GameOutcome, History, Response, ResponseKind, Role,
    RoundRecord,
};
use crate::rng::derive_seed;
use crate::transcript::Transcript;

/// One prediction as scored by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredRecord {
    pub item_id: String,
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure_group: Option<String>,
    pub label: String,
    pub protocol: Protocol,
    pub predicted: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<GameOutcome>,
}

impl PredRecord {
    /// Rebuilds the record from a transcript alone. A failed item scores as
    /// incorrect.
    pub fn from_transcript(t: &Transcript) -> Result<Self> {
        let item = t
            .item
            .as_ref()
            .ok_or_else(|| Error::Invalid("transcript has no item metadata".into()))?;
        let predicted = t.prediction.clone().unwrap_or_default();
        Ok(Self {
            item_id: item.item_id.clone(),
            dataset: item.dataset,
            track: item.track.clone(),
            question_group: item.question_group.clone(),
            figure_group: item.figure_group.clone(),
            label: item.label.clone(),
            protocol: t.protocol,
            correct: t.error.is_none() && !predicted.is_empty() && predicted == item.label,
            predicted,
            error: t.error.as_ref().map(|e| e.message.clone()),
            outcome: t.outcome.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Items processed at once.
    pub workers: usize,
    /// Seat the counterfactual image in the multi-agent baselines too, at
    /// the seat MUG would give the undercover.
    pub corrupt_seat: bool,
    pub refine_iterations: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            corrupt_seat: false,
            refine_iterations: 2,
        }
    }
}

/// Most frequent answer; ties go to the answer given by the lowest agent id.
pub fn plurality<'a>(answers: impl IntoIterator<Item = (AgentId, &'a str)>) -> Option<String> {
    let mut counts: BTreeMap<&str, (usize, AgentId)> = BTreeMap::new();
    for (id, a) in answers {
        let e = counts.entry(a).or_insert((0, id));
        e.0 += 1;
        e.1 = e.1.min(id);
    }
    counts
        .into_iter()
        .max_by(|(_, (na, ia)), (_, (nb, ib))| na.cmp(nb).then(ib.cmp(ia)))
        .map(|(a, _)| a.to_string())
}

fn answer_of(text: &str, n_options: usize) -> Option<String> {
    extract_answer(text, n_options).map(|a| normalize_answer(&a))
}

struct Seats<'a> {
    question: &'a CfQuestion,
    view: crate::model::QuestionView,
    corrupt: Option<AgentId>,
    history: History,
}

impl<'a> Seats<'a> {
    fn image(&self, id: AgentId) -> &ImageRef {
        match (self.corrupt, &self.question.counterfactual_image) {
            (Some(c), Some(img)) if c == id => img,
            _ => &self.question.factual_image,
        }
    }

    fn request(&self, task: Task, id: AgentId, round: u32, seed: u64) -> AgentRequest<'_> {
        let mut r = AgentRequest::new(task, id, Role::Debater, &self.view, self.image(id), &self.history);
        r.round = round;
        r.seed = seed;
        r
    }

    fn profiles(&self, n: usize, backends: &GameBackends) -> Vec<AgentProfile> {
        (0..n)
            .map(AgentId)
            .map(|id| AgentProfile {
                agent_id: id,
                display_name: format!("agent-{}", id.0),
                role: if self.corrupt == Some(id) {
                    Role::Undercover
                } else {
                    Role::Debater
                },
                assigned_image: self.image(id).digest.clone(),
                backend: backends.agents.for_agent(id).name().to_string(),
                alive: true,
            })
            .collect()
    }
}

fn reply_response(id: AgentId, round: u32, kind: ResponseKind, n: usize, reply: Result<String, String>) -> Response {
    match reply {
        Ok(text) => {
            let mut r = Response::new(id, round, kind, text);
            r.extracted_answer = answer_of(&r.text, n);
            r
        }
        Err(e) => Response::abstained(id, round, kind, e),
    }
}

fn run_baseline(
    protocol: Protocol,
    question: &CfQuestion,
    config: &GameConfig,
    backends: &GameBackends,
    opts: &RunOptions,
    t: &mut Transcript,
) -> Result<String> {
    let seed = config.rng_seed;
    let n_agents = if protocol.is_multi_agent() { config.n_agents } else { 1 };
    let seats = Seats {
        question,
        view: question.agent_view(),
        corrupt: (opts.corrupt_seat && protocol.is_multi_agent() && question.counterfactual_image.is_some())
            .then(|| undercover_seat(seed, n_agents)),
        history: History::default(),
    };
    let n = seats.view.options.len();
    t.agents = seats.profiles(n_agents, backends);
    let caller = Caller::new(&backends.agents, config.agent_retries);
    let text = |r: Result<crate::agents::AgentReply, crate::error::BackendError>| r.map(|r| r.text);
    let result = (|| -> Result<String> {
        match protocol {
            Protocol::Single => {
                let out = caller.call(&seats.request(Task::Direct, AgentId(0), 1, seed))?;
                let resp = reply_response(AgentId(0), 1, ResponseKind::Answer, n, Ok(out.text));
                let answer = resp.extracted_answer.clone();
                t.final_response = Some(resp);
                answer.ok_or_else(|| Error::Invalid("no answer in reply".into()))
            }
            Protocol::SelfRefine => {
                let id = AgentId(0);
                let mut draft = caller.call(&seats.request(Task::Direct, id, 1, seed))?.text;
                for k in 1..=opts.refine_iterations {
                    let mut c = seats.request(Task::Critique, id, k, seed);
                    c.draft = Some(&draft);
                    let feedback = caller.call(&c)?.text;
                    let mut r = seats.request(Task::Revise, id, k, seed);
                    r.draft = Some(&draft);
                    r.feedback = Some(&feedback);
                    let revised = caller.call(&r)?.text;
                    draft = revised;
                }
                let resp = reply_response(id, opts.refine_iterations, ResponseKind::Answer, n, Ok(draft));
                let answer = resp.extracted_answer.clone();
                t.final_response = Some(resp);
                answer.ok_or_else(|| Error::Invalid("no answer in refined reply".into()))
            }
            Protocol::MadVote | Protocol::MadJudge => {
                let reqs: Vec<_> = (0..n_agents)
                    .map(|i| seats.request(Task::Direct, AgentId(i), 1, seed))
                    .collect();
                let responses: Vec<Response> = caller
                    .fan_out(&reqs)
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| {
                        reply_response(
                            AgentId(i),
                            1,
                            ResponseKind::Reasoning,
                            n,
                            text(r).map_err(|e| e.to_string()),
                        )
                    })
                    .collect();
                let mut record = RoundRecord::empty(1);
                record.responses = responses.clone();
                t.rounds = vec![record];
                if responses.iter().filter(|r| r.abstained).count() * 2 > responses.len() {
                    return Err(Error::Phase {
                        phase: crate::error::PhaseName::Reasoning,
                        reason: "most agents abstained".into(),
                    });
                }
                let vote = plurality(
                    responses
                        .iter()
                        .filter_map(|r| r.extracted_answer.as_deref().map(|a| (r.agent_id, a))),
                );
                if protocol == Protocol::MadVote {
                    return vote.ok_or_else(|| Error::Invalid("no agent gave an answer".into()));
                }
                let mut j = seats.request(Task::Judge, AgentId(0), 1, seed);
                j.current = &responses;
                let judged = reply_response(
                    AgentId(0),
                    1,
                    ResponseKind::Answer,
                    n,
                    text(caller.call(&j)).map_err(|e| e.to_string()),
                );
                let answer = judged.extracted_answer.clone();
                t.final_response = Some(judged);
                match (answer, vote) {
                    (Some(a), _) => Ok(a),
                    (None, Some(v)) => {
                        t.warnings.push("judge gave no answer; plurality used".into());
                        Ok(v)
                    }
                    (None, None) => Err(Error::Invalid("no answer from judge or agents".into())),
                }
            }
            Protocol::Mug => unreachable!("MUG runs through the engine"),
        }
    })();
    t.record_calls(caller.take_log());
    result
}

/// Runs one item under one protocol. Failures are recorded in the returned
/// transcript rather than propagated.
pub fn run_item(
    protocol: Protocol,
    item: &BenchItem,
    backends: &GameBackends,
    config: &GameConfig,
    opts: &RunOptions,
) -> Transcript {
    let mut config = config.clone();
    config.rng_seed = derive_seed(config.rng_seed, &item.item_id);
    if protocol == Protocol::Mug {
        let extras = GameExtras {
            scene: None,
            item: Some(item.meta()),
        };
        return run_game_with(item.question.clone(), &config, backends, extras).1;
    }
    let mut t = Transcript::new(protocol, config.clone(), backends.names(), Some(item.meta()));
    let mut question = item.question.clone();
    let needs_counterfactual =
        opts.corrupt_seat && protocol.is_multi_agent() && question.counterfactual_image.is_none();
    if needs_counterfactual {
        match backends.generation.prepare(question.clone(), None, &config) {
            Ok((q, plan, attempts)) => {
                question = q;
                t.plan = Some(plan);
                t.gate_attempts = attempts;
            }
            Err(e) => {
                t.fail(&e);
                return t;
            }
        }
    }
    t.question = Some(question.clone());
    match run_baseline(protocol, &question, &config, backends, opts, &mut t) {
        Ok(answer) => t.prediction = Some(answer),
        Err(e) => {
            tracing::warn!(item = %item.item_id, %protocol, error = %e, "item failed");
            t.fail(&e);
        }
    }
    t
}

/// Runs every item, in parallel up to `opts.workers`, keeping item order.
pub fn run_protocol(
    protocol: Protocol,
    items: &[BenchItem],
    backends: &GameBackends,
    config: &GameConfig,
    opts: &RunOptions,
) -> Result<Vec<(PredRecord, Transcript)>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let transcripts: Vec<Transcript> = pool.install(|| {
        items
            .par_iter()
            .map(|item| run_item(protocol, item, backends, config, opts))
            .collect()
    });
    transcripts
        .into_iter()
        .map(|t| PredRecord::from_transcript(&t).map(|r| (r, t)))
        .collect()
}
