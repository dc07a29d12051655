//! Counterfactual question construction: edit-type classification, target
//! selection, instruction synthesis, editing and the acceptance gate.

mod classify;
mod edit;
mod gate;
mod instruction;
mod scene;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use classify::{classify_edit_type, classify_rules, parse_edit_type, ClassifierFallback};
pub use edit::{apply_instruction, EditBackend, FactSetEditor, HttpEditor};
pub use gate::{
    failure_label, gate, gate_mapped, gate_triple, map_similarity, naturalness_map, FailureLabel, GateParams,
    THRESHOLD_SLACK,
};
pub use instruction::{
    build_edit_instruction, extract_instruction, lint_instruction, template_op, EditOp, InstructionRequest,
    InstructionSource, TemplateInstructions, LINT_ATTEMPTS, MAX_CONTENT_WORDS, MAX_WORDS, VERBS,
};
pub use scene::{identify_targets, EditPlan, Related, Relation, SceneDescription, SceneObject, Target};

use crate::error::{Error, Result};
use crate::model::{CfQuestion, EditType, GameConfig, GateScores};
use crate::scoring::{ScoreTriple, Scorer};

/// One edit-score-gate iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateAttempt {
    pub attempt: u32,
    pub instruction: String,
    pub candidate_digest: String,
    pub scores: ScoreTriple,
    pub gate: GateScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<FailureLabel>,
}

impl GateAttempt {
    /// Accepted by the gate and actually different from the source.
    pub fn usable(&self) -> bool {
        self.gate.accepted && self.label != Some(FailureLabel::Unchanged)
    }
}

/// Classifies the question, finds targets and synthesizes the instruction.
/// A question whose type has no targets is downgraded to `Other`.
pub fn plan_edit(
    question: &CfQuestion,
    scene: Option<&SceneDescription>,
    classifier: Option<&dyn ClassifierFallback>,
    instructions: &dyn InstructionSource,
) -> Result<EditPlan> {
    let classified = classify_edit_type(&question.prompt_text, classifier)?;
    let derived;
    let scene = match scene {
        Some(s) => Some(s),
        None => match question.factual_image.facts() {
            Some(f) => {
                derived = SceneDescription::from_facts(f);
                Some(&derived)
            }
            None => None,
        },
    };
    let (edit_type, targets, kind) = match (classified, scene) {
        (EditType::Other, _) => (EditType::Other, Vec::new(), "other".to_string()),
        (t, None) => (EditType::Other, Vec::new(), format!("{} (no scene)", t.as_str())),
        (t, Some(s)) if s.is_empty() => (EditType::Other, Vec::new(), format!("{} (empty scene)", t.as_str())),
        (t, Some(s)) => match identify_targets(s, t, &question.prompt_text) {
            Ok(targets) => (t, targets, t.as_str().to_string()),
            Err(Error::NoTarget { .. }) => {
                tracing::debug!(edit_type = t.as_str(), "no edit targets, downgrading to other");
                (EditType::Other, Vec::new(), format!("{} (no target)", t.as_str()))
            }
            Err(e) => return Err(e),
        },
    };
    let mut plan = EditPlan {
        edit_type,
        targets,
        instruction: String::new(),
        source_question_kind: kind,
    };
    plan.instruction = build_edit_instruction(&question.prompt_text, &plan, &question.options, instructions)?;
    plan.validate()?;
    Ok(plan)
}

/// Runs edit -> score -> gate up to `gate_max_attempts` times and attaches
/// the first usable counterfactual.
pub fn generate_counterfactual(
    mut question: CfQuestion,
    plan: &EditPlan,
    editor: &dyn EditBackend,
    scorer: &dyn Scorer,
    config: &GameConfig,
) -> Result<(CfQuestion, Vec<GateAttempt>)> {
    if question.counterfactual_image.is_some() {
        return Err(Error::Invalid("question already has a counterfactual image".into()));
    }
    let params = GateParams::from_config(config);
    params.validate()?;
    let max = config.gate_max_attempts.max(1);
    let mut attempts: Vec<GateAttempt> = Vec::new();
    for k in 1..=max {
        let candidate = editor.edit(&question.factual_image, &plan.instruction, k)?;
        let scores = scorer.score_pair(&question.factual_image, &candidate)?.clamped();
        let mut g = gate_triple(&scores, &params)?;
        g.attempts = k;
        let label = if candidate.digest == question.factual_image.digest {
            Some(FailureLabel::Unchanged)
        } else {
            failure_label(&scores, &g, &params.labels)
        };
        let attempt = GateAttempt {
            attempt: k,
            instruction: plan.instruction.clone(),
            candidate_digest: candidate.digest.clone(),
            scores,
            gate: g,
            label,
        };
        tracing::info!(
            attempt = k,
            combined = attempt.gate.combined,
            accepted = attempt.gate.accepted,
            label = ?attempt.label,
            "gate attempt"
        );
        let usable = attempt.usable();
        attempts.push(attempt);
        if usable {
            question.edit_type = plan.edit_type;
            question.edit_instruction = plan.instruction.clone();
            let g = attempts[attempts.len() - 1].gate.clone();
            question.attach_counterfactual(candidate, g)?;
            return Ok((question, attempts));
        }
    }
    let best = attempts
        .iter()
        .fold(None::<&GateAttempt>, |best, a| match best {
            Some(b) if b.gate.combined >= a.gate.combined => Some(b),
            _ => Some(a),
        })
        .cloned()
        .expect("at least one attempt ran");
    Err(Error::GateExhausted {
        attempts: max,
        best: Box::new(best),
    })
}

/// Backends needed to turn a plain question into a counterfactual one.
#[derive(Clone)]
pub struct GenerationBackends {
    pub editor: Arc<dyn EditBackend>,
    pub scorer: Arc<dyn Scorer>,
    pub instructions: Arc<dyn InstructionSource>,
    pub classifier: Option<Arc<dyn ClassifierFallback>>,
}

impl GenerationBackends {
    /// Fact-set editor, stub scorer, template instructions, no fallback.
    pub fn scripted() -> Self {
        Self {
            editor: Arc::new(FactSetEditor),
            scorer: Arc::new(crate::scoring::StubScorer),
            instructions: Arc::new(TemplateInstructions),
            classifier: None,
        }
    }

    pub fn prepare(
        &self,
        question: CfQuestion,
        scene: Option<&SceneDescription>,
        config: &GameConfig,
    ) -> Result<(CfQuestion, EditPlan, Vec<GateAttempt>)> {
        let plan = plan_edit(&question, scene, self.classifier.as_deref(), self.instructions.as_ref())?;
        let (q, attempts) =
            generate_counterfactual(question, &plan, self.editor.as_ref(), self.scorer.as_ref(), config)?;
        Ok((q, plan, attempts))
    }
}
