use serde::{Deserialize, Serialize};

use super::scene::{EditPlan, Target};
use crate::error::{BackendError, Error, Result};
use crate::model::EditType;

pub const VERBS: [&str; 5] = ["add", "remove", "change", "replace", "move"];
pub const MAX_WORDS: usize = 12;
pub const MAX_CONTENT_WORDS: usize = 8;
pub const LINT_ATTEMPTS: u32 = 3;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "to", "with", "in", "on", "at", "from", "into", "onto", "its", "it", "is", "by", "for",
    "as",
];

/// One minimal edit in the instruction grammar shared by the template
/// generator and the fact-set editor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    AddOne { label: String },
    RemoveOne { label: String },
    RemoveAll { label: String },
    Change { old: String, noun: String, new: String },
    Replace { from: String, to: String },
    Move { subject: String, relation: String },
}

impl EditOp {
    pub fn render(&self) -> String {
        match self {
            EditOp::AddOne { label } => format!("add one {}", spaced(label)),
            EditOp::RemoveOne { label } => format!("remove one {}", spaced(label)),
            EditOp::RemoveAll { label } => format!("remove the {}", spaced(label)),
            EditOp::Change { old, noun, new } => format!("change {old} {} to {new}", spaced(noun)),
            EditOp::Replace { from, to } => format!("replace {} with {}", spaced(from), spaced(to)),
            EditOp::Move { subject, relation } => format!("move {} {relation}", spaced(subject)),
        }
    }

    /// Parses the grammar `render` produces, plus a few natural variants.
    pub fn parse(instruction: &str) -> Option<EditOp> {
        let text = instruction.trim().trim_end_matches('.').to_lowercase();
        let (verb, rest) = text.split_once(' ')?;
        let rest = rest.trim();
        let strip_article = |s: &str| -> Option<(String, bool)> {
            for (prefix, one) in [
                ("one ", true),
                ("a ", true),
                ("an ", true),
                ("the ", false),
                ("all ", false),
            ] {
                if let Some(r) = s.strip_prefix(prefix) {
                    return Some((r.trim().to_string(), one));
                }
            }
            None
        };
        match verb {
            "add" => {
                let label = strip_article(rest).map(|(l, _)| l).unwrap_or_else(|| rest.to_string());
                (!label.is_empty()).then_some(EditOp::AddOne { label })
            }
            "remove" => {
                let (label, one) = strip_article(rest).unwrap_or((rest.to_string(), false));
                if label.is_empty() {
                    None
                } else if one {
                    Some(EditOp::RemoveOne { label })
                } else {
                    Some(EditOp::RemoveAll { label })
                }
            }
            "change" => {
                let (left, new) = rest.split_once(" to ")?;
                let left = left.trim().trim_start_matches("the ").trim();
                let (old, noun) = left.rsplit_once(' ')?;
                let new = new.trim();
                (!new.is_empty()).then(|| EditOp::Change {
                    old: old.trim().to_string(),
                    noun: noun.to_string(),
                    new: new.to_string(),
                })
            }
            "replace" => {
                let (from, to) = rest.split_once(" with ")?;
                let from = strip_article(from)
                    .map(|(l, _)| l)
                    .unwrap_or_else(|| from.trim().to_string());
                let to = strip_article(to)
                    .map(|(l, _)| l)
                    .unwrap_or_else(|| to.trim().to_string());
                (!from.is_empty() && !to.is_empty()).then_some(EditOp::Replace { from, to })
            }
            "move" => {
                let rest = strip_article(rest).map(|(l, _)| l).unwrap_or_else(|| rest.to_string());
                let (subject, relation) = rest.split_once(' ')?;
                Some(EditOp::Move {
                    subject: subject.to_string(),
                    relation: relation.trim().to_string(),
                })
            }
            _ => None,
        }
    }
}

fn spaced(label: &str) -> String {
    label.replace('_', " ")
}

/// Local check that an instruction is a single verb-first minimal edit.
/// Returns the cleaned instruction.
pub fn lint_instruction(instruction: &str) -> Result<String, String> {
    let cleaned = instruction
        .trim()
        .trim_matches(|c| c == '"' || c == '\'' || c == '`')
        .trim()
        .trim_end_matches('.')
        .trim()
        .to_string();
    if cleaned.is_empty() {
        return Err("instruction is empty".into());
    }
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    if words.len() > MAX_WORDS {
        return Err(format!("{} words, at most {MAX_WORDS} allowed", words.len()));
    }
    let verb = words[0].to_lowercase();
    if !VERBS.contains(&verb.as_str()) {
        return Err(format!("must start with one of {VERBS:?}, starts with {:?}", words[0]));
    }
    let content = words
        .iter()
        .filter(|w| !STOPWORDS.contains(&w.to_lowercase().as_str()))
        .count();
    if content > MAX_CONTENT_WORDS {
        return Err(format!("{content} content words, at most {MAX_CONTENT_WORDS} allowed"));
    }
    let lower = cleaned.to_lowercase();
    if cleaned.contains([';', ',', '.', '\n']) || lower.contains(" and ") || lower.contains(" then ") {
        return Err("names more than one change".into());
    }
    let mut out = verb;
    for w in &words[1..] {
        out.push(' ');
        out.push_str(w);
    }
    Ok(out)
}

/// Picks the instruction out of a chatty reply: the text after the last
/// "Output:" marker, else the last non-empty line.
pub fn extract_instruction(reply: &str) -> String {
    let lower = reply.to_lowercase();
    if let Some(pos) = lower.rfind("output:") {
        let tail = reply[pos + "output:".len()..].trim();
        if let Some(line) = tail.lines().map(str::trim).find(|l| !l.is_empty()) {
            return line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
    }
    reply
        .lines()
        .map(str::trim)
        .rev()
        .find(|l| !l.is_empty())
        .unwrap_or_default()
        .to_string()
}

#[derive(Debug, Clone)]
pub struct InstructionRequest<'a> {
    pub prompt: &'a str,
    pub edit_type: EditType,
    pub targets: &'a [Target],
    pub options: &'a [String],
    pub attempt: u32,
    pub previous_rejection: Option<&'a str>,
}

pub trait InstructionSource: Send + Sync {
    fn propose(&self, req: &InstructionRequest<'_>) -> Result<String, BackendError>;
}

/// Generic instruction for questions without a typed edit.
pub const OTHER_INSTRUCTION: &str = "change one small detail";

/// Deterministic instruction generator over targets and answer options.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateInstructions;

impl InstructionSource for TemplateInstructions {
    fn propose(&self, req: &InstructionRequest<'_>) -> Result<String, BackendError> {
        if req.edit_type == EditType::Other {
            return Ok(OTHER_INSTRUCTION.to_string());
        }
        template_op(req.edit_type, req.targets, req.options)
            .map(|op| op.render())
            .ok_or_else(|| {
                BackendError::Unsupported(format!(
                    "no template edit for {} with {} targets",
                    req.edit_type.as_str(),
                    req.targets.len()
                ))
            })
    }
}

const ATTRIBUTE_NOUNS: &[&str] = &["color", "colour", "size", "material", "shape", "pattern", "texture"];
const PALETTE: &[&str] = &["red", "blue", "green", "yellow", "black", "white"];

fn same(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

fn is_yes_no(s: &str) -> bool {
    matches!(s.trim().to_ascii_lowercase().as_str(), "yes" | "no")
}

fn opposite(predicate: &str) -> &'static str {
    match predicate.trim() {
        "left of" => "right of",
        "right of" => "left of",
        "left" => "right",
        "right" => "left",
        "above" => "below",
        "below" | "under" | "underneath" => "above",
        "on" | "on top of" => "under",
        "in front of" => "behind",
        "behind" => "in front of",
        "inside" | "in" => "outside",
        "outside" => "inside",
        "near" | "next to" | "beside" => "far from",
        _ => "away from",
    }
}

/// The minimal edit the template generator proposes.
pub fn template_op(edit_type: EditType, targets: &[Target], options: &[String]) -> Option<EditOp> {
    match edit_type {
        EditType::Other => None,
        EditType::Quantity => {
            let t = targets.first()?;
            let n: usize = t.value.as_deref()?.trim().parse().ok()?;
            let want = options
                .iter()
                .filter_map(|o| o.trim().parse::<usize>().ok())
                .find(|v| *v != n);
            let label = t.label.clone();
            match want {
                Some(v) if v > n => Some(EditOp::AddOne { label }),
                _ if n == 0 => Some(EditOp::AddOne { label }),
                _ => Some(EditOp::RemoveOne { label }),
            }
        }
        EditType::Attribute => {
            let t = targets.first()?;
            let attr = t.attribute.as_deref()?;
            let old = t.value.as_deref()?;
            let new = options
                .iter()
                .map(String::as_str)
                .find(|o| !same(o, old) && !is_yes_no(o))
                .or_else(|| PALETTE.iter().copied().find(|c| !same(c, old)))?;
            let noun = if ATTRIBUTE_NOUNS.contains(&attr) {
                t.label.rsplit('_').next().unwrap_or(&t.label).to_string()
            } else {
                attr.to_string()
            };
            Some(EditOp::Change {
                old: old.to_string(),
                noun,
                new: new.to_string(),
            })
        }
        EditType::Object => {
            let t = targets
                .iter()
                .find(|t| t.relation.as_ref().is_some_and(|r| !r.subject))
                .or_else(|| targets.first())?;
            if t.value.as_deref() == Some("no") {
                return Some(EditOp::AddOne { label: t.label.clone() });
            }
            match options
                .iter()
                .find(|o| !is_yes_no(o) && !same(&o.replace(' ', "_"), &t.label))
            {
                Some(o) => Some(EditOp::Replace {
                    from: t.label.clone(),
                    to: o.trim().to_string(),
                }),
                None => Some(EditOp::RemoveAll { label: t.label.clone() }),
            }
        }
        EditType::Spatial => {
            let t = targets.iter().find(|t| t.relation.is_some())?;
            let r = t.relation.as_ref()?;
            let other = r.other_label.replace('_', " ");
            let current = format!("{} {}", r.predicate, other);
            let from_options = options
                .iter()
                .map(|o| o.trim())
                .find(|o| !same(o, &current) && !r.predicate.starts_with(&o.to_lowercase()) && o.contains(&other));
            let relation = match from_options {
                Some(o) => o.to_lowercase(),
                None => format!("{} {}", opposite(&r.predicate), other),
            };
            Some(EditOp::Move {
                subject: t.label.clone(),
                relation,
            })
        }
    }
}

/// Asks `source` for an instruction until one passes the lint, at most
/// [`LINT_ATTEMPTS`] times.
pub fn build_edit_instruction(
    prompt: &str,
    plan: &EditPlan,
    options: &[String],
    source: &dyn InstructionSource,
) -> Result<String> {
    if plan.edit_type != EditType::Other && plan.targets.is_empty() {
        return Err(Error::NoTarget {
            edit_type: plan.edit_type,
        });
    }
    let mut last = (String::new(), String::new());
    for attempt in 1..=LINT_ATTEMPTS {
        let req = InstructionRequest {
            prompt,
            edit_type: plan.edit_type,
            targets: &plan.targets,
            options,
            attempt,
            previous_rejection: (attempt > 1).then_some(last.1.as_str()),
        };
        let raw = source.propose(&req)?;
        let candidate = extract_instruction(&raw);
        match lint_instruction(&candidate) {
            Ok(clean) => return Ok(clean),
            Err(reason) => {
                tracing::debug!(attempt, candidate, reason, "instruction rejected by lint");
                last = (candidate, reason);
            }
        }
    }
    Err(Error::InstructionLint {
        attempts: LINT_ATTEMPTS,
        last: last.0,
        reason: last.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfquestion::scene::{identify_targets, SceneDescription};
    use crate::image::FactSet;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn plan(facts: &[(&str, &str)], t: EditType, prompt: &str) -> EditPlan {
        let scene = SceneDescription::from_facts(&FactSet::uniform(facts.iter().copied()));
        EditPlan {
            edit_type: t,
            targets: identify_targets(&scene, t, prompt).unwrap(),
            instruction: String::new(),
            source_question_kind: t.as_str().into(),
        }
    }

    fn opts(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hair_color_instruction() {
        let p = plan(
            &[("girl.hair", "red")],
            EditType::Attribute,
            "What color is the girl's hair?",
        );
        let s = build_edit_instruction("q", &p, &opts(&["red", "black"]), &TemplateInstructions).unwrap();
        assert_eq!(s, "change red hair to black");
    }

    #[test]
    fn quantity_instruction_decrements() {
        let p = plan(&[("cat.count", "2")], EditType::Quantity, "How many cats?");
        let s = build_edit_instruction("q", &p, &[], &TemplateInstructions).unwrap();
        assert_eq!(s, "remove one cat");
    }

    #[test]
    fn render_and_parse_round_trip() {
        let ops = [
            EditOp::AddOne {
                label: "traffic_light".into(),
            },
            EditOp::RemoveOne { label: "cat".into() },
            EditOp::RemoveAll { label: "car".into() },
            EditOp::Change {
                old: "red".into(),
                noun: "hair".into(),
                new: "black".into(),
            },
            EditOp::Replace {
                from: "phone".into(),
                to: "cup".into(),
            },
            EditOp::Move {
                subject: "cup".into(),
                relation: "right of plate".into(),
            },
        ];
        for op in ops {
            let parsed = EditOp::parse(&op.render()).unwrap();
            assert_eq!(parsed.render(), op.render());
        }
    }

    #[test]
    fn lint_rules() {
        assert_eq!(lint_instruction("Remove one cat.").unwrap(), "remove one cat");
        assert!(lint_instruction("Please remove one cat").is_err());
        assert!(lint_instruction("remove the cat and add a dog").is_err());
        assert!(lint_instruction("change the very big bright shiny red old rusty car to blue").is_err());
        assert!(lint_instruction("").is_err());
    }

    #[test]
    fn extraction_prefers_output_marker() {
        assert_eq!(
            extract_instruction("Analysis: hair is red.\nOutput: change red hair to black"),
            "change red hair to black"
        );
        assert_eq!(extract_instruction("blah\n\nremove one cat\n"), "remove one cat");
    }

    struct Flaky(AtomicU32, u32);

    impl InstructionSource for Flaky {
        fn propose(&self, _: &InstructionRequest<'_>) -> Result<String, BackendError> {
            let n = self.0.fetch_add(1, Ordering::SeqCst) + 1;
            Ok(if n > self.1 {
                "remove one cat".into()
            } else {
                "I think we should tweak it".into()
            })
        }
    }

    #[test]
    fn lint_failures_regenerate_then_give_up() {
        let p = plan(&[("cat.count", "2")], EditType::Quantity, "How many cats?");
        let ok = Flaky(AtomicU32::new(0), 2);
        assert_eq!(build_edit_instruction("q", &p, &[], &ok).unwrap(), "remove one cat");
        let bad = Flaky(AtomicU32::new(0), 10);
        match build_edit_instruction("q", &p, &[], &bad) {
            Err(Error::InstructionLint { attempts: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(bad.0.load(Ordering::SeqCst), 3);
    }
}
