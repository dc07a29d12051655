//! The detection and summarization game.

mod vote;

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use vote::{check_termination, compute_vote, tally_and_eliminate, TerminationStatus, TIE_TOLERANCE};

use crate::agents::{
    extract_answer, normalize_answer, AgentPool, AgentReply, AgentRequest, CallRecord, RemoteSceneExtractor, Task,
};
use crate::bench::Protocol;
use crate::cfquestion::{GenerationBackends, SceneDescription};
use crate::error::{BackendError, Error, PhaseName, Result};
use crate::model::{
    init_game, AgentId, CfQuestion, FactorMatrix, FactorScores, GameConfig, GameOutcome, GameState, Mode, Response,
    ResponseKind, RoundRecord, TerminationCause,
};
use crate::transcript::{ItemMeta, SummaryRound, Transcript};

/// Issues agent calls with per-call retries and keeps an ordered log.
pub struct Caller<'a> {
    pool: &'a AgentPool,
    retries: u32,
    log: Mutex<Vec<CallRecord>>,
}

impl<'a> Caller<'a> {
    pub fn new(pool: &'a AgentPool, retries: u32) -> Self {
        Self {
            pool,
            retries,
            log: Mutex::new(Vec::new()),
        }
    }

    fn call_logged(&self, req: &AgentRequest<'_>) -> (Result<AgentReply, BackendError>, Vec<CallRecord>) {
        let backend = self.pool.for_agent(req.agent_id);
        let mut log = Vec::new();
        let mut retried = 0;
        loop {
            let result = backend.respond(req);
            log.push(CallRecord::new(req, backend.name(), &result));
            match result {
                Err(e) if e.is_transient() && retried < self.retries => {
                    tracing::debug!(agent = %req.agent_id, task = %req.task, error = %e, "retrying agent call");
                    retried += 1;
                }
                other => return (other, log),
            }
        }
    }

    pub fn call(&self, req: &AgentRequest<'_>) -> Result<AgentReply, BackendError> {
        let (result, log) = self.call_logged(req);
        self.log.lock().expect("call log").extend(log);
        result
    }

    /// Runs the requests with bounded concurrency. Results and log entries
    /// come back in request order whatever the completion order.
    pub fn fan_out(&self, reqs: &[AgentRequest<'_>]) -> Vec<Result<AgentReply, BackendError>> {
        let max = self.pool.max_in_flight();
        let done: Vec<_> = if max <= 1 || reqs.len() <= 1 {
            reqs.iter().map(|r| self.call_logged(r)).collect()
        } else {
            let mut out = Vec::with_capacity(reqs.len());
            for chunk in reqs.chunks(max) {
                std::thread::scope(|s| {
                    let handles: Vec<_> = chunk.iter().map(|r| s.spawn(move || self.call_logged(r))).collect();
                    out.extend(handles.into_iter().map(|h| h.join().expect("agent call panicked")));
                });
            }
            out
        };
        let mut log = self.log.lock().expect("call log");
        done.into_iter()
            .map(|(result, calls)| {
                log.extend(calls);
                result
            })
            .collect()
    }

    pub fn take_log(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.log.lock().expect("call log"))
    }
}

fn to_response(
    agent: AgentId,
    round: u32,
    kind: ResponseKind,
    n_options: usize,
    result: Result<AgentReply, BackendError>,
) -> Response {
    match result {
        Ok(reply) => {
            let mut r = Response::new(agent, round, kind, reply.text);
            r.extracted_answer = extract_answer(&r.text, n_options);
            if r.extracted_answer.is_none() && matches!(kind, ResponseKind::Reasoning | ResponseKind::Summarization) {
                r.warnings.push("no answer could be extracted".into());
            }
            r.peer_scores = reply.peer_scores;
            r.warnings.extend(reply.warnings);
            r
        }
        Err(e) => {
            tracing::warn!(agent = %agent, round, error = %e, "agent abstained");
            Response::abstained(agent, round, kind, e.to_string())
        }
    }
}

fn check_abstentions(phase: PhaseName, responses: &[Response]) -> Result<()> {
    let abstained = responses.iter().filter(|r| r.abstained).count();
    if abstained * 2 > responses.len() {
        return Err(Error::Phase {
            phase,
            reason: format!("{abstained} of {} agents abstained", responses.len()),
        });
    }
    Ok(())
}

/// Scores each alive agent received in the last closed round.
fn performance(state: &GameState) -> BTreeMap<AgentId, BTreeMap<AgentId, FactorScores>> {
    let mut out: BTreeMap<AgentId, BTreeMap<AgentId, FactorScores>> = BTreeMap::new();
    if let Some(last) = state.history().last() {
        for (voter, candidate, s) in last.factor_matrix.iter() {
            out.entry(candidate).or_default().insert(voter, *s);
        }
    }
    out
}

fn request<'a>(
    state: &'a GameState,
    view: &'a crate::model::QuestionView,
    id: AgentId,
    task: Task,
) -> AgentRequest<'a> {
    let agent = state.agent(id).expect("alive ids come from the state");
    let mut req = AgentRequest::new(task, id, agent.role, view, state.image_of(agent), state.history());
    req.round = state.round();
    req.seed = state.config.rng_seed;
    req
}

/// One reasoning response per alive agent, in agent order.
pub fn run_reasoning_phase(state: &GameState, caller: &Caller<'_>) -> Result<Vec<Response>> {
    if state.mode() != Mode::Detection {
        return Err(Error::Phase {
            phase: PhaseName::Reasoning,
            reason: format!("game is in {} mode", state.mode()),
        });
    }
    let alive = state.alive_ids();
    if alive.len() < 3 {
        return Err(Error::Phase {
            phase: PhaseName::Reasoning,
            reason: format!("only {} agents alive", alive.len()),
        });
    }
    let view = state.question.agent_view();
    let perf = performance(state);
    let reqs: Vec<AgentRequest<'_>> = alive
        .iter()
        .map(|id| {
            let mut r = request(state, &view, *id, Task::Reason);
            r.performance = perf.get(id);
            r
        })
        .collect();
    let n = view.options.len();
    let responses: Vec<Response> = caller
        .fan_out(&reqs)
        .into_iter()
        .zip(&alive)
        .map(|(res, id)| to_response(*id, state.round(), ResponseKind::Reasoning, n, res))
        .collect();
    check_abstentions(PhaseName::Reasoning, &responses)?;
    Ok(responses)
}

/// Defenses plus the factor matrix over every alive (voter, candidate) pair.
/// Missing or unparseable scores are neutral and flagged.
pub fn run_defense_phase(
    state: &GameState,
    responses: &[Response],
    caller: &Caller<'_>,
) -> Result<(Vec<Response>, FactorMatrix)> {
    let alive = state.alive_ids();
    let view = state.question.agent_view();
    let perf = performance(state);
    let candidates: Vec<Vec<AgentId>> = alive
        .iter()
        .map(|v| alive.iter().copied().filter(|c| c != v).collect())
        .collect();
    let reqs: Vec<AgentRequest<'_>> = alive
        .iter()
        .zip(&candidates)
        .map(|(id, cands)| {
            let mut r = request(state, &view, *id, Task::Defend);
            r.current = responses;
            r.candidates = cands;
            r.performance = perf.get(id);
            r
        })
        .collect();
    let n = view.options.len();
    let mut defenses = Vec::with_capacity(alive.len());
    let mut matrix = FactorMatrix::default();
    for ((res, voter), cands) in caller.fan_out(&reqs).into_iter().zip(&alive).zip(&candidates) {
        let mut d = to_response(*voter, state.round(), ResponseKind::Defense, n, res);
        let given = d.peer_scores.clone().unwrap_or_default();
        if d.peer_scores.is_none() && !d.abstained {
            d.warnings.push("no peer scores returned; neutral scores used".into());
        }
        let mut row = BTreeMap::new();
        for c in cands {
            let s = match given.get(c) {
                Some(s) => *s,
                None => {
                    if d.peer_scores.is_some() {
                        d.warnings.push(format!("no score for {c}; neutral used"));
                    }
                    FactorScores::NEUTRAL
                }
            };
            matrix.insert(*voter, *c, s)?;
            row.insert(*c, s.clamped());
        }
        d.peer_scores = Some(row);
        defenses.push(d);
    }
    check_abstentions(PhaseName::Defense, &defenses)?;
    Ok((defenses, matrix))
}

fn modal_answer(responses: &[Response]) -> Option<String> {
    let mut counts: BTreeMap<String, (usize, AgentId)> = BTreeMap::new();
    for r in responses {
        if let Some(a) = &r.extracted_answer {
            let e = counts.entry(normalize_answer(a)).or_insert((0, r.agent_id));
            e.0 += 1;
            e.1 = e.1.min(r.agent_id);
        }
    }
    counts
        .into_iter()
        .max_by(|(_, (na, ia)), (_, (nb, ib))| na.cmp(nb).then(ib.cmp(ia)))
        .map(|(a, _)| a)
}

/// Result of the summarization game.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub outcome: GameOutcome,
    pub rounds: Vec<SummaryRound>,
    pub final_response: Option<Response>,
}

/// Collaborative answer rounds over the survivors, stopping early on a
/// unanimous answer, then one synthesis call by the lowest-id survivor.
pub fn run_summarization(state: &mut GameState, cause: TerminationCause, caller: &Caller<'_>) -> Result<Summary> {
    if state.mode() == Mode::Detection {
        state.advance_mode(Mode::Summarization)?;
    }
    let alive = state.alive_ids();
    if alive.is_empty() {
        return Err(Error::Phase {
            phase: PhaseName::Summarization,
            reason: "no agents alive".into(),
        });
    }
    let view = state.question.agent_view();
    let n = view.options.len();
    let mut collected: Vec<Response> = state
        .history()
        .last()
        .map(|r| {
            r.responses
                .iter()
                .filter(|r| alive.contains(&r.agent_id))
                .cloned()
                .collect()
        })
        .unwrap_or_default();
    let mut rounds = Vec::new();
    for s in 1..=state.config.max_sum_rounds {
        let reqs: Vec<AgentRequest<'_>> = alive
            .iter()
            .map(|id| {
                let mut r = request(state, &view, *id, Task::Summarize);
                r.round = s;
                r.current = &collected;
                r
            })
            .collect();
        let responses: Vec<Response> = caller
            .fan_out(&reqs)
            .into_iter()
            .zip(&alive)
            .map(|(res, id)| to_response(*id, s, ResponseKind::Summarization, n, res))
            .collect();
        let answers: Vec<String> = responses
            .iter()
            .filter(|r| !r.abstained)
            .filter_map(|r| r.extracted_answer.as_deref().map(normalize_answer))
            .collect();
        let answered_all = answers.len() == responses.iter().filter(|r| !r.abstained).count();
        let consensus = answered_all && !answers.is_empty() && answers.iter().all(|a| *a == answers[0]);
        drop(reqs);
        collected = responses.clone();
        rounds.push(SummaryRound {
            round: s,
            responses,
            consensus,
        });
        if consensus {
            break;
        }
    }
    let all: Vec<Response> = rounds.iter().flat_map(|r| r.responses.iter().cloned()).collect();
    let synthesizer = alive[0];
    let mut req = request(state, &view, synthesizer, Task::Synthesize);
    req.round = rounds.len() as u32;
    req.current = &all;
    let synth = to_response(synthesizer, req.round, ResponseKind::Answer, n, caller.call(&req));
    let (final_answer, fallback) = match synth.extracted_answer.as_deref().map(normalize_answer) {
        Some(a) if !a.is_empty() => (a, false),
        _ => {
            let last = rounds.last().map(|r| r.responses.as_slice()).unwrap_or_default();
            let detection: Vec<Response> = state
                .history()
                .rounds()
                .iter()
                .flat_map(|r| r.responses.clone())
                .collect();
            let fallback = modal_answer(last)
                .or_else(|| modal_answer(&detection))
                .or_else(|| {
                    let raw = synth.text.trim();
                    (!raw.is_empty()).then(|| raw.lines().last().unwrap_or(raw).trim().to_string())
                })
                .unwrap_or_else(|| "unknown".into());
            (fallback, true)
        }
    };
    let eliminated_ids: Vec<AgentId> = state
        .history()
        .rounds()
        .iter()
        .filter_map(|r| r.eliminated_id)
        .collect();
    let rounds_to_detection = state
        .history()
        .rounds()
        .iter()
        .find(|r| r.eliminated_role == Some(crate::model::Role::Undercover))
        .map(|r| r.round)
        .unwrap_or(0);
    let outcome = GameOutcome {
        final_answer,
        detection_succeeded: cause == TerminationCause::UndercoverFound,
        rounds_to_detection,
        eliminated_ids,
        termination_cause: cause,
        answer_fallback: fallback,
    };
    state.outcome = Some(outcome.clone());
    state.advance_mode(Mode::Finished)?;
    Ok(Summary {
        outcome,
        rounds,
        final_response: Some(synth),
    })
}

/// Backends a full game needs.
#[derive(Clone)]
pub struct GameBackends {
    pub agents: AgentPool,
    pub generation: GenerationBackends,
    /// Scene graphs for pixel images; without it such questions get the
    /// generic edit path.
    pub scenes: Option<RemoteSceneExtractor>,
}

impl GameBackends {
    pub fn new(agents: AgentPool, generation: GenerationBackends) -> Self {
        Self {
            agents,
            generation,
            scenes: None,
        }
    }

    /// Scripted agents over fact sets with the scripted generation chain.
    pub fn scripted(config: crate::agents::ScriptedConfig) -> Self {
        Self::new(
            AgentPool::uniform(std::sync::Arc::new(crate::agents::ScriptedAgent::new(config))),
            GenerationBackends::scripted(),
        )
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = self.agents.names();
        names.push(format!("editor:{}", self.generation.editor.name()));
        names.push(format!("scorer:{}", self.generation.scorer.name()));
        names
    }
}

/// Optional inputs to [`run_game_with`].
#[derive(Debug, Clone, Default)]
pub struct GameExtras<'a> {
    pub scene: Option<&'a SceneDescription>,
    pub item: Option<ItemMeta>,
}

pub fn run_game(
    question: CfQuestion,
    config: &GameConfig,
    backends: &GameBackends,
) -> (Result<GameOutcome>, Transcript) {
    run_game_with(question, config, backends, GameExtras::default())
}

/// Generates the counterfactual if needed, plays detection rounds until a
/// termination condition holds, then summarizes. The transcript is returned
/// even when the game fails part way.
pub fn run_game_with(
    question: CfQuestion,
    config: &GameConfig,
    backends: &GameBackends,
    extras: GameExtras<'_>,
) -> (Result<GameOutcome>, Transcript) {
    let mut transcript = Transcript::new(Protocol::Mug, config.clone(), backends.names(), extras.item);
    let caller = Caller::new(&backends.agents, config.agent_retries);
    let result = play(question, config, backends, extras.scene, &caller, &mut transcript);
    transcript.record_calls(caller.take_log());
    match &result {
        Ok(outcome) => transcript.prediction = Some(outcome.final_answer.clone()),
        Err(e) => {
            tracing::warn!(error = %e, "game failed");
            transcript.fail(e);
        }
    }
    (result, transcript)
}

fn play(
    question: CfQuestion,
    config: &GameConfig,
    backends: &GameBackends,
    scene: Option<&SceneDescription>,
    caller: &Caller<'_>,
    transcript: &mut Transcript,
) -> Result<GameOutcome> {
    config.validate()?;
    let question = if question.counterfactual_image.is_some() {
        question
    } else {
        let extracted = match (scene, &backends.scenes) {
            (None, Some(x)) if !question.factual_image.is_fact_set() => {
                match x.extract(&question.prompt_text, &question.factual_image) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        transcript.warnings.push(format!("scene extraction failed: {e}"));
                        None
                    }
                }
            }
            _ => None,
        };
        let scene = scene.or(extracted.as_ref());
        let plan = crate::cfquestion::plan_edit(
            &question,
            scene,
            backends.generation.classifier.as_deref(),
            backends.generation.instructions.as_ref(),
        )?;
        transcript.plan = Some(plan.clone());
        match crate::cfquestion::generate_counterfactual(
            question,
            &plan,
            backends.generation.editor.as_ref(),
            backends.generation.scorer.as_ref(),
            config,
        ) {
            Ok((q, attempts)) => {
                transcript.gate_attempts = attempts;
                q
            }
            Err(Error::GateExhausted { attempts, best }) => {
                transcript.gate_attempts.push((*best).clone());
                return Err(Error::GateExhausted { attempts, best });
            }
            Err(e) => return Err(e),
        }
    };
    transcript.question = Some(question.clone());
    let mut state = init_game(
        question,
        config.clone(),
        &mut ChaCha8Rng::seed_from_u64(config.rng_seed),
    )?;
    transcript.agents = state.agents.clone();
    let cause = loop {
        if let Some(cause) = check_termination(&state, None).cause() {
            break cause;
        }
        let round = state.round();
        let responses = run_reasoning_phase(&state, caller).inspect_err(|_| {
            transcript.rounds = state.history().rounds().to_vec();
        })?;
        state.responses = responses.clone();
        let (defenses, matrix) = run_defense_phase(&state, &responses, caller).inspect_err(|_| {
            transcript.rounds = state.history().rounds().to_vec();
        })?;
        let votes = state
            .alive_ids()
            .into_iter()
            .map(|v| compute_vote(v, &matrix, &state.config.vote_weights, round))
            .collect::<Result<Vec<_>>>()?;
        let eliminated = tally_and_eliminate(&votes)?;
        let mut record = RoundRecord::empty(round);
        record.responses = responses;
        record.defenses = defenses;
        record.factor_matrix = matrix;
        record.votes = votes;
        record.eliminated_id = Some(eliminated);
        state.append_round(record)?;
        let role = state.agent(eliminated).expect("eliminated agent exists").role;
        tracing::debug!(round, eliminated = %eliminated, role = %role, "round closed");
        if let Some(cause) = check_termination(&state, Some((eliminated, role))).cause() {
            break cause;
        }
    };
    transcript.rounds = state.history().rounds().to_vec();
    let summary = run_summarization(&mut state, cause, caller)?;
    transcript.summarization = summary.rounds;
    transcript.final_response = summary.final_response;
    transcript.outcome = Some(summary.outcome.clone());
    Ok(summary.outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentBackend, ReplayBackend, ScriptedAgent, ScriptedConfig};
    use crate::image::{FactSet, ImageRef};
    use crate::model::Role;
    use std::sync::Arc;

    fn hair_question() -> CfQuestion {
        CfQuestion::new(
            "What color is the girl's hair?",
            ImageRef::from_facts(FactSet::uniform([("girl.hair", "red"), ("girl.holding", "phone")])),
        )
        .unwrap()
        .with_options(["red", "black"])
        .with_focus("girl.hair")
    }

    fn scripted(config: ScriptedConfig) -> GameBackends {
        GameBackends::new(
            AgentPool::uniform(Arc::new(ScriptedAgent::new(config))),
            GenerationBackends::scripted(),
        )
    }

    #[test]
    fn separating_game_catches_the_undercover_in_round_one() {
        for seed in 0..20 {
            let config = GameConfig {
                rng_seed: seed,
                ..GameConfig::default()
            };
            let (outcome, t) = run_game(hair_question(), &config, &scripted(ScriptedConfig::default()));
            let outcome = outcome.unwrap();
            assert_eq!(outcome.termination_cause, TerminationCause::UndercoverFound);
            assert_eq!(outcome.rounds_to_detection, 1);
            assert_eq!(outcome.final_answer, "A");
            assert_eq!(t.rounds.len(), 1);
            let u = t.agents.iter().find(|a| a.role == Role::Undercover).unwrap().agent_id;
            assert!(t
                .summarization
                .iter()
                .all(|r| r.responses.iter().all(|x| x.agent_id != u)));
            assert_eq!(t.rounds[0].factor_matrix.len(), 12);
        }
    }

    #[test]
    fn transcripts_are_deterministic_and_round_trip() {
        let config = GameConfig {
            rng_seed: 7,
            ..GameConfig::default()
        };
        let backends = scripted(ScriptedConfig {
            noise: crate::agents::FactorNoise::Gaussian { sigma: 3.0 },
            ..ScriptedConfig::default()
        });
        let (_, a) = run_game(hair_question(), &config, &backends);
        let (_, b) = run_game(hair_question(), &config, &backends);
        let text = a.to_json().unwrap();
        assert_eq!(text, b.to_json().unwrap());
        assert_eq!(Transcript::from_json(&text).unwrap().to_json().unwrap(), text);
    }

    #[test]
    fn replay_reproduces_the_game() {
        let config = GameConfig {
            rng_seed: 11,
            t_max: 4,
            ..GameConfig::default()
        };
        let backends = scripted(ScriptedConfig {
            noise: crate::agents::FactorNoise::Uniform,
            ..ScriptedConfig::default()
        });
        let (outcome, t) = run_game(hair_question(), &config, &backends);
        let replay = Arc::new(ReplayBackend::new(&t.calls));
        let replayed = GameBackends::new(
            AgentPool::uniform(replay.clone() as Arc<dyn AgentBackend>),
            GenerationBackends::scripted(),
        );
        let (outcome2, t2) = run_game(t.question.clone().unwrap(), &config, &replayed);
        assert_eq!(outcome.unwrap(), outcome2.unwrap());
        assert_eq!(t.rounds, t2.rounds);
        assert_eq!(t.summarization, t2.summarization);
        assert_eq!(t.calls.len(), t2.calls.len());
        assert_eq!(replay.remaining(), 0);
    }

    struct Slow(ScriptedAgent);

    impl AgentBackend for Slow {
        fn name(&self) -> &str {
            "slow"
        }

        fn respond(&self, req: &AgentRequest<'_>) -> Result<AgentReply, BackendError> {
            // later seats answer first
            std::thread::sleep(std::time::Duration::from_millis(5 * (6 - req.agent_id.0 as u64)));
            self.0.respond(req)
        }

        fn max_in_flight(&self) -> usize {
            4
        }
    }

    #[test]
    fn concurrent_fan_out_keeps_request_order() {
        let config = GameConfig {
            n_agents: 6,
            rng_seed: 3,
            ..GameConfig::default()
        };
        let slow = GameBackends::new(
            AgentPool::uniform(Arc::new(Slow(ScriptedAgent::default()))),
            GenerationBackends::scripted(),
        );
        let (a, ta) = run_game(hair_question(), &config, &slow);
        let (b, tb) = run_game(hair_question(), &config, &scripted(ScriptedConfig::default()));
        assert_eq!(a.unwrap(), b.unwrap());
        assert_eq!(ta.rounds, tb.rounds);
        let order = |t: &Transcript| {
            t.calls
                .iter()
                .map(|c| (c.task, c.agent_id, c.round))
                .collect::<Vec<_>>()
        };
        assert_eq!(order(&ta), order(&tb));
    }

    struct Flaky;

    impl AgentBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn respond(&self, req: &AgentRequest<'_>) -> Result<AgentReply, BackendError> {
            if req.agent_id.0 < 3 {
                return Err(BackendError::Timeout {
                    endpoint: "x".into(),
                    attempts: 3,
                });
            }
            ScriptedAgent::default().respond(req)
        }
    }

    #[test]
    fn mass_abstention_aborts_with_partial_transcript() {
        let backends = GameBackends::new(AgentPool::uniform(Arc::new(Flaky)), GenerationBackends::scripted());
        let (outcome, t) = run_game(hair_question(), &GameConfig::default(), &backends);
        assert!(matches!(outcome, Err(Error::Phase { .. })));
        let err = t.error.unwrap();
        assert_eq!(err.kind, "phase");
        assert_eq!(err.abort_cause, Some(TerminationCause::Timeout));
        assert_eq!(t.calls.len(), 4);
        assert!(t.question.is_some());
    }

    #[test]
    fn timeout_keeps_the_undercover_in_summarization() {
        // factors that never single anyone out: everyone votes for the lowest id
        struct Blind;
        impl AgentBackend for Blind {
            fn name(&self) -> &str {
                "blind"
            }
            fn respond(&self, req: &AgentRequest<'_>) -> Result<AgentReply, BackendError> {
                let mut reply = ScriptedAgent::default().respond(req)?;
                if let Some(s) = reply.peer_scores.as_mut() {
                    let top = req.candidates.iter().copied().max().unwrap();
                    for (c, v) in s.iter_mut() {
                        *v = if *c == top {
                            FactorScores([9.0; 4])
                        } else {
                            FactorScores([0.0; 4])
                        };
                    }
                }
                Ok(reply)
            }
        }
        // with seed 0 the undercover sits below the top seat, so the top seat goes first
        let n = 6;
        let seed = (0..100).find(|s| crate::model::undercover_seat(*s, n).0 == 0).unwrap();
        let config = GameConfig {
            n_agents: n,
            t_max: 2,
            rng_seed: seed,
            ..GameConfig::default()
        };
        let backends = GameBackends::new(AgentPool::uniform(Arc::new(Blind)), GenerationBackends::scripted());
        let (outcome, t) = run_game(hair_question(), &config, &backends);
        let outcome = outcome.unwrap();
        assert_eq!(outcome.termination_cause, TerminationCause::Timeout);
        assert!(!outcome.detection_succeeded);
        assert_eq!(outcome.eliminated_ids, vec![AgentId(5), AgentId(4)]);
        let last = t.summarization.last().unwrap();
        assert!(last.responses.iter().any(|r| r.agent_id == AgentId(0)));
    }
}
