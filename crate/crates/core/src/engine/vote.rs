use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentId, FactorMatrix, GameState, Role, TerminationCause, Vote, VoteWeights};

/// Relative tolerance under which two weighted totals count as tied.
/// Relative, so that rescaling the weights cannot turn a tie into a win.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn beats(a: f64, b: f64) -> bool {
    a - b > TIE_TOLERANCE * a.abs().max(b.abs())
}

/// The voter's most suspicious candidate under the weighted factor sum.
/// Ties go to the lowest candidate id.
pub fn compute_vote(voter: AgentId, matrix: &FactorMatrix, weights: &VoteWeights, round: u32) -> Result<Vote> {
    let mut best: Option<Vote> = None;
    for (candidate, scores) in matrix.row(voter) {
        let total = scores.weighted(weights);
        if best.as_ref().is_none_or(|b| beats(total, b.weighted_total)) {
            best = Some(Vote {
                voter_id: voter,
                target_id: candidate,
                round,
                factor_scores: *scores,
                weighted_total: total,
            });
        }
    }
    best.ok_or_else(|| Error::Vote(format!("{voter} has no candidates to vote for")))
}

/// Plurality over vote targets; ties go to the lowest agent id.
pub fn tally_and_eliminate(votes: &[Vote]) -> Result<AgentId> {
    let mut counts: BTreeMap<AgentId, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(v.target_id).or_default() += 1;
    }
    let top = counts
        .values()
        .copied()
        .max()
        .ok_or_else(|| Error::Vote("no votes cast".into()))?;
    Ok(counts
        .into_iter()
        .find(|(_, n)| *n == top)
        .map(|(id, _)| id)
        .expect("max exists"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationStatus {
    cause: Option<TerminationCause>,
}

impl TerminationStatus {
    pub const CONTINUE: TerminationStatus = TerminationStatus { cause: None };

    pub fn done(cause: TerminationCause) -> Self {
        Self { cause: Some(cause) }
    }

    pub fn is_done(&self) -> bool {
        self.cause.is_some()
    }

    pub fn cause(&self) -> Option<TerminationCause> {
        self.cause
    }
}

/// Evaluated after each elimination and at the start of each round; the
/// state's round counter is the index of the round about to start.
pub fn check_termination(state: &GameState, just_eliminated: Option<(AgentId, Role)>) -> TerminationStatus {
    if matches!(just_eliminated, Some((_, Role::Undercover))) || state.undercover().is_some_and(|u| !u.alive) {
        return TerminationStatus::done(TerminationCause::UndercoverFound);
    }
    if state.alive_debaters() <= 1 {
        return TerminationStatus::done(TerminationCause::InsufficientAgents);
    }
    if state.round() > state.config.t_max {
        return TerminationStatus::done(TerminationCause::Timeout);
    }
    TerminationStatus::CONTINUE
}
