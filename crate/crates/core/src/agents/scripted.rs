use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::extract::{extract_answer, normalize_answer, to_option_letter};
use super::{AgentBackend, AgentReply, AgentRequest, Task};
use crate::error::{BackendError, Error, Result};
use crate::image::FactSet;
use crate::model::{option_letter, AgentId, FactorScores, History, Response, ResponseKind, Role};
use crate::rng::derived_rng;

/// Phrases that mark a statement as a hedge rather than a concrete claim.
pub const HEDGE_MARKERS: &[&str] = &["cannot make out", "not sure", "hard to tell", "unclear"];

/// Concrete `key is value` claims and hedges found in a response.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedClaims {
    pub claims: Vec<(String, String)>,
    pub hedges: usize,
}

impl ParsedClaims {
    pub fn is_empty(&self) -> bool {
        self.claims.is_empty() && self.hedges == 0
    }
}

pub fn parse_claims(text: &str) -> ParsedClaims {
    let mut out = ParsedClaims::default();
    for line in text.lines() {
        let line = line.trim();
        if line.get(..7).is_some_and(|h| h.eq_ignore_ascii_case("answer:")) {
            continue;
        }
        for seg in line.split(';') {
            let seg = seg.trim().trim_end_matches('.').trim();
            if seg.is_empty() {
                continue;
            }
            let lower = seg.to_lowercase();
            if HEDGE_MARKERS.iter().any(|m| lower.contains(m)) {
                out.hedges += 1;
                continue;
            }
            if let Some((k, v)) = seg.split_once(" is ") {
                let (k, v) = (k.trim(), v.trim());
                if k.contains('.') && !k.contains(char::is_whitespace) && !v.is_empty() {
                    out.claims.push((k.to_string(), v.to_string()));
                }
            }
        }
    }
    out
}

fn same(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

fn matches_fact(facts: &FactSet, key: &str, value: &str) -> bool {
    facts.get(key).is_some_and(|v| same(v, value))
}

/// Claims other agents made in earlier rounds, by agent and key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorClaims {
    by_agent: BTreeMap<AgentId, BTreeMap<String, BTreeSet<String>>>,
}

impl PriorClaims {
    pub fn from_responses<'a>(responses: impl IntoIterator<Item = &'a Response>, exclude: AgentId) -> Self {
        let mut out = Self::default();
        for r in responses {
            if r.agent_id == exclude || r.abstained {
                continue;
            }
            let entry = out.by_agent.entry(r.agent_id).or_default();
            for (k, v) in parse_claims(&r.text).claims {
                entry.entry(k).or_default().insert(v.trim().to_lowercase());
            }
        }
        out
    }

    /// Reasoning responses of every closed round, minus `exclude`'s own.
    pub fn from_history(history: &History, exclude: AgentId) -> Self {
        Self::from_responses(history.rounds().iter().flat_map(|r| r.responses.iter()), exclude)
    }

    pub fn is_empty(&self) -> bool {
        self.by_agent.values().all(BTreeMap::is_empty)
    }

    /// Keys on which the other agents have not agreed.
    pub fn contested_keys(&self) -> BTreeSet<String> {
        let mut values: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for claims in self.by_agent.values() {
            for (k, vs) in claims {
                values.entry(k).or_default().extend(vs.iter().map(String::as_str));
            }
        }
        values
            .into_iter()
            .filter(|(_, vs)| vs.len() >= 2)
            .map(|(k, _)| k.to_string())
            .collect()
    }

    /// Values asserted by at least two distinct other agents, per key.
    pub fn consensus(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for claims in self.by_agent.values() {
            for (k, vs) in claims {
                for v in vs {
                    *counts.entry((k, v)).or_default() += 1;
                }
            }
        }
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for ((k, v), n) in counts {
            if n >= 2 {
                out.entry(k.to_string()).or_default().insert(v.to_string());
            }
        }
        out
    }
}

/// Objective value of one candidate response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_text: String,
    /// Accuracy for a debater, plausibility for the undercover.
    pub acc_or_pla: f64,
    /// Discrimination for a debater, suspicion for the undercover.
    pub det_or_sus: f64,
    pub total: f64,
}

pub fn score_candidate(
    text: &str,
    facts: &FactSet,
    role: Role,
    lambda: f64,
    mu: f64,
    prior: &PriorClaims,
) -> CandidateScore {
    let parsed = parse_claims(text);
    let denom = parsed.claims.len() + parsed.hedges;
    let matched = parsed.claims.iter().filter(|(k, v)| matches_fact(facts, k, v)).count();
    let acc = if denom == 0 { 0.0 } else { matched as f64 / denom as f64 };
    let (second, total) = match role {
        Role::Debater => {
            let contested = (!prior.is_empty()).then(|| prior.contested_keys());
            let covered: BTreeSet<&str> = parsed
                .claims
                .iter()
                .filter(|(k, v)| matches_fact(facts, k, v))
                .filter(|(k, _)| contested.as_ref().is_none_or(|c| c.contains(k)))
                .map(|(k, _)| k.as_str())
                .collect();
            let total_salience = facts.total_salience();
            let det = if total_salience > 0.0 {
                (covered.iter().map(|k| facts.salience(k)).sum::<f64>() / total_salience).min(1.0)
            } else {
                0.0
            };
            (det, acc + lambda * det)
        }
        Role::Undercover => {
            let consensus = prior.consensus();
            let contradicting = parsed
                .claims
                .iter()
                .filter(|(k, v)| consensus.get(k).is_some_and(|vals| vals.iter().any(|c| !same(c, v))))
                .count();
            let sus = if parsed.claims.is_empty() {
                0.0
            } else {
                contradicting as f64 / parsed.claims.len() as f64
            };
            (sus, acc - mu * sus)
        }
    };
    CandidateScore {
        candidate_text: text.to_string(),
        acc_or_pla: acc,
        det_or_sus: second,
        total,
    }
}

/// Argmax of the role objective over the pool; ties go to the
/// lexicographically smallest candidate.
pub fn scripted_reason(
    facts: &FactSet,
    role: Role,
    pool: &[String],
    lambda: f64,
    mu: f64,
    prior: &PriorClaims,
) -> Result<CandidateScore> {
    let mut sorted: Vec<&String> = pool.iter().collect();
    sorted.sort();
    let mut best: Option<CandidateScore> = None;
    for text in sorted {
        let s = score_candidate(text, facts, role, lambda, mu, prior);
        if best.as_ref().is_none_or(|b| s.total > b.total) {
            best = Some(s);
        }
    }
    best.ok_or_else(|| Error::Script("empty candidate pool".into()))
}

/// Answer implied by a fact set, as an option letter when options exist.
pub fn answer_for(facts: &FactSet, focus: Option<&str>, options: &[String]) -> Option<String> {
    let key = focus?;
    let value = match facts.get(key) {
        Some(v) => v.to_string(),
        None if key.ends_with(".present") => "no".into(),
        None if key.ends_with(".count") => "0".into(),
        None => return None,
    };
    Some(if options.is_empty() {
        normalize_answer(&value)
    } else {
        to_option_letter(&value, options)
    })
}

/// Templated candidates over a fact set: everything, the focus fact alone,
/// everything but the focus with a hedge in its place, and a pure hedge.
pub fn candidate_pool(facts: &FactSet, focus: Option<&str>, answer: &str) -> Vec<String> {
    let claim = |k: &str| facts.get(k).map(|v| format!("{k} is {v}"));
    let focus_claim = focus.and_then(claim);
    let others: Vec<String> = facts.keys().filter(|k| Some(*k) != focus).filter_map(claim).collect();
    let tail = format!("\nAnswer: {answer}");
    let mut pool = Vec::new();
    let full: Vec<String> = focus_claim.iter().cloned().chain(others.iter().cloned()).collect();
    if !full.is_empty() {
        pool.push(full.join("; ") + &tail);
    }
    if let Some(fc) = &focus_claim {
        if !others.is_empty() {
            pool.push(fc.clone() + &tail);
        }
    }
    if let Some(f) = focus {
        let mut hedged = others.clone();
        hedged.push(format!("I cannot make out the {f} clearly"));
        pool.push(hedged.join("; ") + &tail);
    }
    pool.push(format!("I cannot make out the details clearly{tail}"));
    pool.dedup();
    pool
}

/// Factor scores a voter assigns to each candidate from the round's
/// reasoning responses. The flag marks candidates without concrete claims,
/// whose first three factors are neutral.
pub fn scripted_factor_scores(
    voter_facts: &FactSet,
    responses: &[Response],
    candidates: &[AgentId],
) -> BTreeMap<AgentId, (FactorScores, bool)> {
    let parsed: BTreeMap<AgentId, ParsedClaims> = responses
        .iter()
        .map(|r| {
            let p = if r.abstained {
                ParsedClaims::default()
            } else {
                parse_claims(&r.text)
            };
            (r.agent_id, p)
        })
        .collect();
    // per-key value counts, one vote per response
    let mut tallies: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
    for p in parsed.values() {
        let mut seen = BTreeSet::new();
        for (k, v) in &p.claims {
            if seen.insert((k.as_str(), v.to_lowercase())) {
                *tallies
                    .entry(k)
                    .or_default()
                    .entry(v.trim().to_lowercase())
                    .or_default() += 1;
            }
        }
    }
    let modes: BTreeMap<&str, String> = tallies
        .into_iter()
        .filter_map(|(k, counts)| {
            let top = *counts.values().max()?;
            let mut winners = counts.into_iter().filter(|(_, n)| *n == top);
            let (v, _) = winners.next()?;
            winners.next().is_none().then_some((k, v))
        })
        .collect();
    let empty = ParsedClaims::default();
    candidates
        .iter()
        .map(|c| {
            let p = parsed.get(c).unwrap_or(&empty);
            let n = p.claims.len();
            let phi4 = if p.is_empty() {
                5.0
            } else {
                10.0 * p.hedges as f64 / (n + p.hedges) as f64
            };
            if n == 0 {
                return (*c, (FactorScores([5.0, 5.0, 5.0, phi4]), true));
            }
            let contradictions = p
                .claims
                .iter()
                .filter(|(k, v)| voter_facts.get(k).is_some_and(|f| !same(f, v)))
                .count();
            let deviations = p
                .claims
                .iter()
                .filter(|(k, v)| modes.get(k.as_str()).is_some_and(|m| !same(m, v)))
                .count();
            let matched = p.claims.iter().filter(|(k, v)| matches_fact(voter_facts, k, v)).count();
            let n = n as f64;
            let scores = FactorScores([
                10.0 * contradictions as f64 / n,
                10.0 * deviations as f64 / n,
                10.0 * (1.0 - matched as f64 / n),
                phi4,
            ])
            .clamped();
            (*c, (scores, false))
        })
        .collect()
}

/// Perturbation applied to scripted factor scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorNoise {
    #[default]
    None,
    /// Adds N(0, sigma) to every factor, then clamps.
    Gaussian { sigma: f64 },
    /// Replaces every factor with a U(0, 10) draw.
    Uniform,
}

impl FactorNoise {
    pub fn apply(&self, s: FactorScores, rng: &mut impl Rng) -> FactorScores {
        match *self {
            FactorNoise::None => s,
            FactorNoise::Gaussian { sigma } if sigma > 0.0 => {
                let normal = Normal::new(0.0, sigma).expect("positive sigma");
                FactorScores(s.0.map(|v| v + normal.sample(rng))).clamped()
            }
            FactorNoise::Gaussian { .. } => s,
            FactorNoise::Uniform => FactorScores(std::array::from_fn(|_| rng.random_range(0.0..=FactorScores::MAX))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedConfig {
    pub lambda: f64,
    pub mu: f64,
    /// Probability that an agent misreads the focus fact of its image.
    pub misread_rate: f64,
    /// Probability that an agent states a wrong final answer regardless of
    /// what it saw.
    pub slip_rate: f64,
    pub noise: FactorNoise,
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            mu: 0.5,
            misread_rate: 0.0,
            slip_rate: 0.0,
            noise: FactorNoise::None,
        }
    }
}

impl ScriptedConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("misread_rate", self.misread_rate), ("slip_rate", self.slip_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.lambda.is_nan() || self.mu.is_nan() || self.lambda < 0.0 || self.mu < 0.0 {
            return Err(Error::Config("lambda and mu must be >= 0".into()));
        }
        if let FactorNoise::Gaussian { sigma } = self.noise {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::Config(format!(
                    "noise sigma must be finite and >= 0, got {sigma}"
                )));
            }
        }
        Ok(())
    }
}

fn flip(value: &str) -> Option<String> {
    match normalize_answer(value).as_str() {
        "yes" => Some("no".into()),
        "no" => Some("yes".into()),
        _ => value.trim().parse::<i64>().ok().map(|n| (n + 1).to_string()),
    }
}

/// Deterministic agent over fact-set images.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAgent {
    pub config: ScriptedConfig,
}

impl ScriptedAgent {
    pub fn new(config: ScriptedConfig) -> Self {
        Self { config }
    }

    /// The agent's reading of its image, after a possible misread.
    pub fn perceived(&self, facts: &FactSet, req: &AgentRequest<'_>) -> FactSet {
        let mut facts = facts.clone();
        let Some(key) = req.question.focus_key.as_deref() else {
            return facts;
        };
        let mut rng = derived_rng(req.seed, &format!("misread/{}", req.agent_id.0));
        if rng.random::<f64>() >= self.config.misread_rate {
            return facts;
        }
        let Some(value) = facts.get(key).map(str::to_string) else {
            return facts;
        };
        let wrong: Vec<&String> = req
            .question
            .options
            .iter()
            .filter(|o| normalize_answer(o) != normalize_answer(&value))
            .collect();
        let replacement = if wrong.is_empty() {
            flip(&value)
        } else {
            Some(wrong[rng.random_range(0..wrong.len())].clone())
        };
        if let Some(r) = replacement {
            facts.set(key, r);
        }
        facts
    }

    /// Final answer from the perceived facts, after a possible slip.
    pub fn answer(&self, facts: &FactSet, req: &AgentRequest<'_>) -> Result<String, BackendError> {
        let options = &req.question.options;
        let answer = answer_for(facts, req.question.focus_key.as_deref(), options)
            .ok_or_else(|| BackendError::Unsupported("scripted agents need a focus key the image can answer".into()))?;
        let mut rng = derived_rng(req.seed, &format!("slip/{}", req.agent_id.0));
        if rng.random::<f64>() >= self.config.slip_rate {
            return Ok(answer);
        }
        let letters: Vec<String> = (0..options.len())
            .map(|i| option_letter(i).to_string())
            .filter(|l| *l != answer)
            .collect();
        Ok(if letters.is_empty() {
            flip(&answer).unwrap_or(answer)
        } else {
            letters[rng.random_range(0..letters.len())].clone()
        })
    }

    fn modal_answer(req: &AgentRequest<'_>) -> Option<String> {
        let mut counts: BTreeMap<String, (usize, AgentId)> = BTreeMap::new();
        for r in req.current {
            let a = r
                .extracted_answer
                .clone()
                .or_else(|| extract_answer(&r.text, req.question.options.len()));
            if let Some(a) = a {
                let e = counts.entry(a).or_insert((0, r.agent_id));
                e.0 += 1;
                e.1 = e.1.min(r.agent_id);
            }
        }
        counts
            .into_iter()
            .max_by(|(_, (na, ia)), (_, (nb, ib))| na.cmp(nb).then(ib.cmp(ia)))
            .map(|(a, _)| a)
    }
}

impl AgentBackend for ScriptedAgent {
    fn name(&self) -> &str {
        "scripted"
    }

    fn respond(&self, req: &AgentRequest<'_>) -> Result<AgentReply, BackendError> {
        match req.task {
            Task::Synthesize | Task::Judge => {
                return Ok(AgentReply::text(match Self::modal_answer(req) {
                    Some(a) => format!("The agents converge on this answer.\nAnswer: {a}"),
                    None => "I cannot determine a final answer.".into(),
                }));
            }
            Task::Critique => return Ok(AgentReply::text("No issues found.")),
            Task::Revise => return Ok(AgentReply::text(req.draft.unwrap_or_default())),
            _ => {}
        }
        let facts = req
            .image
            .facts()
            .ok_or_else(|| BackendError::Unsupported("scripted agents need fact-set images".into()))?;
        let facts = self.perceived(facts, req);
        let answer = self.answer(&facts, req)?;
        let focus = req.question.focus_key.as_deref();
        let pool = candidate_pool(&facts, focus, &answer);
        let script = |e: Error| BackendError::Unsupported(e.to_string());
        match req.task {
            Task::Reason | Task::Direct => {
                let prior = if req.task == Task::Reason {
                    PriorClaims::from_history(req.history, req.agent_id)
                } else {
                    PriorClaims::default()
                };
                let best = scripted_reason(&facts, req.role, &pool, self.config.lambda, self.config.mu, &prior)
                    .map_err(script)?;
                Ok(AgentReply::text(best.candidate_text))
            }
            Task::Summarize => Ok(AgentReply::text(pool[0].clone())),
            Task::Defend => {
                let own = req
                    .current
                    .iter()
                    .find(|r| r.agent_id == req.agent_id && r.kind == ResponseKind::Reasoning && !r.abstained)
                    .map(|r| r.text.clone())
                    .unwrap_or_else(|| pool[0].clone());
                let mut rng = derived_rng(req.seed, &format!("factors/{}/{}", req.round, req.agent_id.0));
                let mut warnings = Vec::new();
                let mut scores = BTreeMap::new();
                for (c, (s, flagged)) in scripted_factor_scores(&facts, req.current, req.candidates) {
                    if flagged {
                        warnings.push(format!("{c} made no concrete claims; neutral factors"));
                    }
                    scores.insert(c, self.config.noise.apply(s, &mut rng));
                }
                Ok(AgentReply {
                    text: format!("I stand by my account.\n{own}"),
                    peer_scores: Some(scores),
                    warnings,
                })
            }
            Task::Synthesize | Task::Judge | Task::Critique | Task::Revise => {
                unreachable!("handled above")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageRef;
    use crate::model::QuestionView;

    fn fs(pairs: &[(&str, &str)]) -> FactSet {
        FactSet::uniform(pairs.iter().copied())
    }

    fn reasoning(id: usize, text: &str) -> Response {
        Response::new(AgentId(id), 1, ResponseKind::Reasoning, text)
    }

    #[test]
    fn claims_and_hedges_parse() {
        let p = parse_claims("girl.hair is red; I cannot make out the girl.holding clearly\nAnswer: A");
        assert_eq!(p.claims, vec![("girl.hair".to_string(), "red".to_string())]);
        assert_eq!(p.hedges, 1);
    }

    #[test]
    fn debater_with_zero_lambda_picks_the_true_claim() {
        let facts = fs(&[("girl.hair", "red")]);
        let pool = vec!["girl.hair is blue".to_string(), "girl.hair is red".to_string()];
        let best = scripted_reason(&facts, Role::Debater, &pool, 0.0, 0.0, &PriorClaims::default()).unwrap();
        assert_eq!(best.candidate_text, "girl.hair is red");
        assert_eq!(best.total, best.acc_or_pla);
    }

    #[test]
    fn cautious_undercover_hedges_against_consensus() {
        let cf = fs(&[("girl.hair", "black"), ("girl.holding", "phone")]);
        let prior = PriorClaims::from_responses(
            &[
                reasoning(1, "girl.hair is red; girl.holding is phone"),
                reasoning(2, "girl.hair is red; girl.holding is phone"),
                reasoning(3, "girl.hair is red"),
            ],
            AgentId(0),
        );
        let pool = candidate_pool(&cf, Some("girl.hair"), "B");
        let best = scripted_reason(&cf, Role::Undercover, &pool, 0.5, 1e9, &prior).unwrap();
        assert!(
            best.candidate_text.contains("cannot make out the girl.hair"),
            "{best:?}"
        );
        assert!(best.candidate_text.contains("girl.holding is phone"));
        assert_eq!(best.det_or_sus, 0.0);
    }

    #[test]
    fn zero_weights_isolate_the_first_term() {
        let facts = fs(&[("a.x", "1"), ("b.y", "2")]);
        let pool = candidate_pool(&facts, Some("a.x"), "1");
        let empty = PriorClaims::default();
        let contested = PriorClaims::from_responses(&[reasoning(1, "b.y is 3"), reasoning(2, "b.y is 2")], AgentId(0));
        for role in [Role::Debater, Role::Undercover] {
            let a = scripted_reason(&facts, role, &pool, 0.0, 0.0, &empty).unwrap();
            let b = scripted_reason(&facts, role, &pool, 0.0, 0.0, &contested).unwrap();
            assert_eq!(a.candidate_text, b.candidate_text);
            assert_eq!(a.total, a.acc_or_pla);
        }
    }

    #[test]
    fn totals_decompose() {
        let facts = fs(&[("a.x", "1"), ("b.y", "2")]);
        let prior = PriorClaims::from_responses(&[reasoning(1, "b.y is 3"), reasoning(2, "b.y is 3")], AgentId(0));
        for text in candidate_pool(&facts, Some("a.x"), "1") {
            let d = score_candidate(&text, &facts, Role::Debater, 0.7, 0.3, &prior);
            assert!((d.total - (d.acc_or_pla + 0.7 * d.det_or_sus)).abs() < 1e-9);
            let u = score_candidate(&text, &facts, Role::Undercover, 0.7, 0.3, &prior);
            assert!((u.total - (u.acc_or_pla - 0.3 * u.det_or_sus)).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_pool_is_a_script_error() {
        let r = scripted_reason(&fs(&[]), Role::Debater, &[], 0.5, 0.5, &PriorClaims::default());
        assert!(matches!(r, Err(Error::Script(_))));
    }

    #[test]
    fn factor_scores_on_the_hair_scenario() {
        let truth = fs(&[("girl.hair", "red"), ("girl.holding", "phone")]);
        let responses = vec![
            reasoning(0, "girl.hair is black; girl.holding is phone"),
            reasoning(1, "girl.hair is red; girl.holding is phone"),
            reasoning(2, "girl.hair is red; girl.holding is phone"),
            reasoning(3, "girl.hair is red; girl.holding is phone"),
        ];
        let s = scripted_factor_scores(&truth, &responses, &[AgentId(0), AgentId(2), AgentId(3)]);
        let (u, _) = s[&AgentId(0)];
        let (d, _) = s[&AgentId(2)];
        assert!(u.0[0] > d.0[0]);
        assert!(u.0[1] > d.0[1]);
        assert_eq!((d.0[0], d.0[2]), (0.0, 0.0));
        assert_eq!(s[&AgentId(3)].0, d);
    }

    #[test]
    fn all_hedge_response_maxes_phi4() {
        let responses = vec![reasoning(1, "I cannot make out the details clearly\nAnswer: A")];
        let s = scripted_factor_scores(&fs(&[("a.b", "c")]), &responses, &[AgentId(1)]);
        let (scores, flagged) = s[&AgentId(1)];
        assert_eq!(scores.0, [5.0, 5.0, 5.0, 10.0]);
        assert!(flagged);
    }

    #[test]
    fn undercover_reasoning_reflects_its_own_image() {
        let q = QuestionView {
            prompt_text: "What color is the girl's hair?".into(),
            options: vec!["red".into(), "black".into()],
            focus_key: Some("girl.hair".into()),
        };
        let cf = ImageRef::from_facts(fs(&[("girl.hair", "black")]));
        let h = History::default();
        let req = AgentRequest::new(Task::Reason, AgentId(2), Role::Undercover, &q, &cf, &h);
        let reply = ScriptedAgent::default().respond(&req).unwrap();
        assert!(reply.text.contains("girl.hair is black"));
        assert!(reply.text.ends_with("Answer: B"));
    }

    #[test]
    fn slips_and_misreads_are_seeded() {
        let q = QuestionView {
            prompt_text: "Is there a dog?".into(),
            options: vec![],
            focus_key: Some("dog.present".into()),
        };
        let img = ImageRef::from_facts(fs(&[("dog.present", "yes")]));
        let h = History::default();
        let agent = ScriptedAgent::new(ScriptedConfig {
            slip_rate: 0.5,
            ..ScriptedConfig::default()
        });
        let mut flips = 0;
        for seed in 0..200 {
            let mut req = AgentRequest::new(Task::Reason, AgentId(1), Role::Debater, &q, &img, &h);
            req.seed = seed;
            let a = agent.respond(&req).unwrap().text;
            assert_eq!(a, agent.respond(&req).unwrap().text);
            if a.ends_with("Answer: no") {
                flips += 1;
            }
        }
        assert!((70..130).contains(&flips), "{flips}");
    }

    #[test]
    fn uniform_noise_stays_in_range() {
        let mut rng = derived_rng(1, "t");
        for _ in 0..100 {
            let s = FactorNoise::Uniform.apply(FactorScores::NEUTRAL, &mut rng);
            assert!(s.0.iter().all(|v| (0.0..=10.0).contains(v)));
        }
    }
}
