//! Monte Carlo over seeded scripted games.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentPool, ScriptedAgent, ScriptedConfig};
use crate::cfquestion::{gate_triple, GateParams, GenerationBackends};
use crate::engine::{run_game, GameBackends};
use crate::error::{Error, Result};
use crate::image::{FactSet, ImageRef};
use crate::model::{CfQuestion, GameConfig, Role, TerminationCause};
use crate::scoring::stub_scores;
use crate::transcript::Transcript;

/// A fact-set question, the corruption handed to the undercover, and how
/// many seeded games to play.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub question: String,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub focus_key: Option<String>,
    pub facts: BTreeMap<String, String>,
    #[serde(default)]
    pub salience: BTreeMap<String, f64>,
    /// Facts overridden in the undercover's image.
    pub corruption: BTreeMap<String, String>,
    #[serde(default = "default_n")]
    pub n_agents: usize,
    #[serde(default = "default_t_max")]
    pub t_max: u32,
    #[serde(default)]
    pub seed: u64,
    pub repetitions: u32,
    #[serde(default)]
    pub agent: ScriptedConfig,
}

fn default_n() -> usize {
    GameConfig::default().n_agents
}

fn default_t_max() -> u32 {
    GameConfig::default().t_max
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.corruption.is_empty() {
            return Err(Error::Config("corruption must change at least one fact".into()));
        }
        if self.corruption.iter().all(|(k, v)| self.facts.get(k) == Some(v)) {
            return Err(Error::Config("corruption leaves every fact unchanged".into()));
        }
        self.agent.validate()?;
        self.config(0).validate()
    }

    pub fn config(&self, game: u32) -> GameConfig {
        GameConfig {
            n_agents: self.n_agents,
            t_max: self.t_max,
            rng_seed: self.seed.wrapping_add(game as u64),
            ..GameConfig::default()
        }
    }

    /// The question with the corrupted image attached, gated by the stub
    /// scorer like any other counterfactual.
    pub fn build_question(&self) -> Result<CfQuestion> {
        let facts = FactSet::new(self.facts.clone(), self.full_salience())?;
        let mut corrupted = self.facts.clone();
        corrupted.extend(self.corruption.clone());
        let cf = FactSet::new(corrupted, self.full_salience())?;
        let factual = ImageRef::from_facts(facts);
        let counterfactual = ImageRef::from_facts(cf);
        let mut q = CfQuestion::new(self.question.clone(), factual.clone())?.with_options(self.options.clone());
        if let Some(k) = &self.focus_key {
            q = q.with_focus(k.clone());
        }
        let gate = gate_triple(
            &stub_scores(&factual, &counterfactual),
            &GateParams::from_config(&self.config(0)),
        )?;
        q.attach_counterfactual(counterfactual, gate)
            .map_err(|e| Error::Config(format!("corruption does not pass the acceptance gate: {e}")))?;
        Ok(q)
    }

    fn full_salience(&self) -> BTreeMap<String, f64> {
        let mut s = self.salience.clone();
        for k in self.facts.keys().chain(self.corruption.keys()) {
            s.entry(k.clone()).or_insert(1.0);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub games: usize,
    pub failed_games: usize,
    /// Undercover voted out at any point.
    pub detection_rate: f64,
    /// Undercover voted out in round 1.
    pub round1_detection_rate: f64,
    /// Share of round-1 debater votes that named the undercover.
    pub round1_vote_hit_rate: f64,
    /// Rounds to detection; key 0 counts games where it never happened.
    pub rounds_to_detection: BTreeMap<u32, usize>,
    /// Share of games whose undercover is still in after round r, r = 1..=t_max.
    pub survival: Vec<f64>,
    pub causes: BTreeMap<TerminationCause, usize>,
    pub accuracy: Option<f64>,
}

struct GameStats {
    ok: bool,
    detected_round: u32,
    hits: usize,
    debater_votes: usize,
    cause: Option<TerminationCause>,
    correct: Option<bool>,
}

fn stats(t: &Transcript, gold: Option<&str>) -> GameStats {
    let u = t.agents.iter().find(|a| a.role == Role::Undercover).map(|a| a.agent_id);
    let (mut hits, mut debater_votes) = (0, 0);
    if let (Some(r1), Some(u)) = (t.rounds.first(), u) {
        for v in r1.votes.iter().filter(|v| v.voter_id != u) {
            debater_votes += 1;
            hits += usize::from(v.target_id == u);
        }
    }
    let outcome = t.outcome.as_ref();
    GameStats {
        ok: outcome.is_some(),
        detected_round: outcome.map_or(0, |o| {
            if o.detection_succeeded {
                o.rounds_to_detection
            } else {
                0
            }
        }),
        hits,
        debater_votes,
        cause: outcome.map(|o| o.termination_cause),
        correct: gold.zip(outcome).map(|(g, o)| o.final_answer == g),
    }
}

/// Plays `repetitions` games with consecutive seeds and aggregates them.
pub fn run_simulation(scenario: &Scenario, workers: usize) -> Result<SimReport> {
    scenario.validate()?;
    let question = scenario.build_question()?;
    let gold = crate::agents::answer_for(
        question.factual_image.facts().expect("fact-set image"),
        question.focus_key.as_deref(),
        &question.options,
    );
    let backends = GameBackends::new(
        AgentPool::uniform(Arc::new(ScriptedAgent::new(scenario.agent))),
        GenerationBackends::scripted(),
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let games: Vec<GameStats> = pool.install(|| {
        (0..scenario.repetitions)
            .into_par_iter()
            .map(|k| {
                let (_, t) = run_game(question.clone(), &scenario.config(k), &backends);
                stats(&t, gold.as_deref())
            })
            .collect()
    });
    let n = games.len() as f64;
    let mut rounds_to_detection = BTreeMap::new();
    let mut causes = BTreeMap::new();
    for g in &games {
        *rounds_to_detection.entry(g.detected_round).or_insert(0) += 1;
        if let Some(c) = g.cause {
            *causes.entry(c).or_insert(0) += 1;
        }
    }
    let survival = (1..=scenario.t_max)
        .map(|r| {
            games
                .iter()
                .filter(|g| g.detected_round == 0 || g.detected_round > r)
                .count() as f64
                / n
        })
        .collect();
    let (hits, votes) = games.iter().fold((0, 0), |(h, v), g| (h + g.hits, v + g.debater_votes));
    let judged: Vec<bool> = games.iter().filter_map(|g| g.correct).collect();
    Ok(SimReport {
        scenario: scenario.name.clone(),
        games: games.len(),
        failed_games: games.iter().filter(|g| !g.ok).count(),
        detection_rate: games.iter().filter(|g| g.detected_round > 0).count() as f64 / n,
        round1_detection_rate: games.iter().filter(|g| g.detected_round == 1).count() as f64 / n,
        round1_vote_hit_rate: if votes == 0 { 0.0 } else { hits as f64 / votes as f64 },
        rounds_to_detection,
        survival,
        causes,
        accuracy: (!judged.is_empty()).then(|| judged.iter().filter(|c| **c).count() as f64 / judged.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::FactorNoise;

    fn scenario() -> Scenario {
        Scenario {
            name: "hair".into(),
            question: "What color is the girl's hair?".into(),
            options: vec!["red".into(), "black".into()],
            focus_key: Some("girl.hair".into()),
            facts: [("girl.hair", "red"), ("girl.holding", "phone")]
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .into(),
            salience: BTreeMap::new(),
            corruption: [("girl.hair".to_string(), "black".to_string())].into(),
            n_agents: 4,
            t_max: 3,
            seed: 0,
            repetitions: 100,
            agent: ScriptedConfig::default(),
        }
    }

    #[test]
    fn separating_scenario_never_survives_round_one() {
        let r = run_simulation(&scenario(), 4).unwrap();
        assert_eq!(r.games, 100);
        assert_eq!(r.round1_detection_rate, 1.0);
        assert_eq!(r.survival, vec![0.0, 0.0, 0.0]);
        assert_eq!(r.rounds_to_detection, [(1, 100)].into());
        assert_eq!(r.accuracy, Some(1.0));
    }

    #[test]
    fn noise_scenario_detects_near_chance() {
        let s = Scenario {
            repetitions: 400,
            agent: ScriptedConfig {
                noise: FactorNoise::Uniform,
                ..ScriptedConfig::default()
            },
            ..scenario()
        };
        let r = run_simulation(&s, 4).unwrap();
        assert!(
            (r.round1_vote_hit_rate - 1.0 / 3.0).abs() < 0.05,
            "{}",
            r.round1_vote_hit_rate
        );
        assert!(
            (r.round1_detection_rate - 0.25).abs() < 0.07,
            "{}",
            r.round1_detection_rate
        );
    }

    #[test]
    fn zero_repetitions_is_a_config_error() {
        let s = Scenario {
            repetitions: 0,
            ..scenario()
        };
        assert!(matches!(run_simulation(&s, 1), Err(Error::Config(_))));
        let s = Scenario {
            corruption: [("girl.hair".to_string(), "red".to_string())].into(),
            ..scenario()
        };
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }
}
