use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateName {
    NormalReasoning,
    CounterfactualReasoning,
    NormalDefense,
    CounterfactualDefense,
    VotingDecision,
    Summarization,
    EditInstruction,
    SceneExtraction,
    EditTypeFallback,
    FinalAnswer,
    DirectAnswer,
    Critique,
    Revise,
}

impl TemplateName {
    pub const ALL: [TemplateName; 13] = [
        TemplateName::NormalReasoning,
        TemplateName::CounterfactualReasoning,
        TemplateName::NormalDefense,
        TemplateName::CounterfactualDefense,
        TemplateName::VotingDecision,
        TemplateName::Summarization,
        TemplateName::EditInstruction,
        TemplateName::SceneExtraction,
        TemplateName::EditTypeFallback,
        TemplateName::FinalAnswer,
        TemplateName::DirectAnswer,
        TemplateName::Critique,
        TemplateName::Revise,
    ];
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: &'static str,
    pub placeholders: &'static [&'static str],
}

pub const ANSWER_LINE: &str =
    "End your reply with a line of the form \"Answer: <option letter, yes/no, or short answer>\".";

const NORMAL_REASONING: &str = "REASONING PHASE - Normal Agent

You are an AI agent tasked with generating high-quality reasoning based on the given question and context.

Your task:
- Provide a well-reasoned response to the question.
- Ensure your reasoning focuses on logical consistency, evidence quality, and argument strength.
- Aim to earn strong peer evaluations in the next round.

Input:
Question: {question}

Your previous defense: {defense}

Performance info: {performance_info}

End your reply with a line of the form \"Answer: <option letter, yes/no, or short answer>\".";

const COUNTERFACTUAL_REASONING: &str = "REASONING PHASE - Counterfactual Agent

You are a Counterfactual Agent tasked with presenting an alternative perspective on the given question and context.

Your task:
- Present a convincing alternative viewpoint grounded in the image you were given.
- Keep your reasoning consistent and plausible so it withstands peer evaluation.
- Aim to earn strong peer evaluations in the next round.

Input:
Question: {question}

Your previous reasoning: {reasoning}

Performance info: {performance_info}

End your reply with a line of the form \"Answer: <option letter, yes/no, or short answer>\".";

/// Output block defense replies are asked to end with.
pub const PEER_SCORES_FORMAT: &str = "Output format:
Answer: <your answer>
Analysis: <your defense>
Peer Scores:
Agent <id>: <inconsistency>, <deviation>, <detail inaccuracy>, <suspicion>
(one line per other agent, each score from 0 to 10, higher means more suspicious)";

const NORMAL_DEFENSE: &str = "DEFENSE PHASE - Normal Agent

Defending your position with peer evaluation awareness.

Question: {question}

Your Original Analysis: {reasoning}

Performance info: {performance_info}

Others' Arguments: {others_points}

Peer Evaluation Defense Strategy:
- The scores above show evaluations you received from other agents in previous rounds.
- As you defend, you will also evaluate the reasoning quality of the other agents.
- Your evaluation of others affects their future survival chances.

Defense Objectives:
- Reinforce the strength and logic of your original analysis.
- Show why others should trust your perspective over alternatives.
- Your defense quality will be evaluated by others in future rounds.

Output format:
Answer: <your answer>
Analysis: <your defense>
Peer Scores:
Agent <id>: <inconsistency>, <deviation>, <detail inaccuracy>, <suspicion>
(one line per other agent, each score from 0 to 10, higher means more suspicious)";

const COUNTERFACTUAL_DEFENSE: &str = "DEFENSE PHASE - Counterfactual Agent

Defending alternative perspective while earning peer respect.

Question: {question}

Your Original Analysis: {reasoning}

Performance info: {performance_info}

Others' Arguments: {others_points}

Peer Evaluation Defense Strategy:
- The scores above show evaluations you received from other agents in previous rounds.
- Defend your alternative perspective without drawing suspicion.
- Your evaluation of others affects their future survival chances.

Defense Objectives:
- Keep your perspective plausible and internally consistent.
- Earn the respect of your peers through careful argument.
- Your defense quality will be evaluated by others in future rounds.

Output format:
Answer: <your answer>
Analysis: <your defense>
Peer Scores:
Agent <id>: <inconsistency>, <deviation>, <detail inaccuracy>, <suspicion>
(one line per other agent, each score from 0 to 10, higher means more suspicious)";

const VOTING_DECISION: &str = "VOTING PHASE

Based on performance analysis and peer evaluations, you are tasked with voting for the most suspicious agent.

Original Question: {question}

Recommended Candidate: {voted_candidate}

Detailed Analysis: {score_info}

Peer Evaluations: {peer_score_info}

Agents' Defense: {all_defenses}

Consider the recommendation as the most suspicious candidate unless the defenses clearly contradict it.
Reply with a single line of the form \"Vote: Agent <id>\".";

const SUMMARIZATION: &str = "SUMMARIZATION PHASE

The undercover detection phase is over. Work with the remaining agents toward a shared final answer.

Question: {question}

Collected responses: {others_points}

Debate history: {history}

Summarize the evidence that survived the debate and state your answer.
End your reply with a line of the form \"Answer: <option letter, yes/no, or short answer>\".";

const EDIT_INSTRUCTION: &str = "You are an expert in generating precise counterfactual image editing instructions.

Task:
- Analyze the question and the answer options.
- Identify the smallest modification to the image that changes the correct answer.
- Write a single editing instruction that performs that modification.

Requirements:
- Use one of the verbs add, remove, change, replace or move.
- Modify only the element the question is about.
- Keep instructions concise, ideally under 8 words.

Input: {question}
Analysis: [Analyze the image and options]
Output: [Identify the smallest modification needed]";

const SCENE_EXTRACTION: &str = "List the objects in the image, their attributes and the spatial relations between them.

Question context: {question}

Reply with JSON only, in this shape:
{{\"objects\": [{{\"id\": 0, \"label\": \"cat\", \"attributes\": {{\"color\": \"black\"}}}}], \"relations\": [{{\"subject_id\": 0, \"predicate\": \"left of\", \"object_id\": 1}}]}}";

const EDIT_TYPE_FALLBACK: &str = "Classify the question by what it asks about.

Question: {question}

Reply with exactly one word from: Quantity, Object, Attribute, Spatial, Other.";

const FINAL_ANSWER: &str = "FINAL ANSWER

Question: {question}

Agent summaries: {others_points}

Synthesize the collective reasoning above into one final answer.
End your reply with a line of the form \"Answer: <option letter, yes/no, or short answer>\".";

const DIRECT_ANSWER: &str = "Look at the image and answer the question.

Question: {question}

End your reply with a line of the form \"Answer: <option letter, yes/no, or short answer>\".";

const CRITIQUE: &str = "Review the draft answer below and point out any mistakes about the image.

Question: {question}

Draft: {reasoning}

List concrete problems, or reply \"No issues found.\"";

const REVISE: &str = "Revise the draft answer using the feedback.

Question: {question}

Draft: {reasoning}

Feedback: {feedback}

End your reply with a line of the form \"Answer: <option letter, yes/no, or short answer>\".";

pub fn template(name: TemplateName) -> PromptTemplate {
    let (body, placeholders): (&'static str, &'static [&'static str]) = match name {
        TemplateName::NormalReasoning => (NORMAL_REASONING, &["question", "defense", "performance_info"]),
        TemplateName::CounterfactualReasoning => {
            (COUNTERFACTUAL_REASONING, &["question", "reasoning", "performance_info"])
        }
        TemplateName::NormalDefense => (
            NORMAL_DEFENSE,
            &["question", "reasoning", "performance_info", "others_points"],
        ),
        TemplateName::CounterfactualDefense => (
            COUNTERFACTUAL_DEFENSE,
            &["question", "reasoning", "performance_info", "others_points"],
        ),
        TemplateName::VotingDecision => (
            VOTING_DECISION,
            &[
                "question",
                "voted_candidate",
                "score_info",
                "peer_score_info",
                "all_defenses",
            ],
        ),
        TemplateName::Summarization => (SUMMARIZATION, &["question", "others_points", "history"]),
        TemplateName::EditInstruction => (EDIT_INSTRUCTION, &["question"]),
        TemplateName::SceneExtraction => (SCENE_EXTRACTION, &["question"]),
        TemplateName::EditTypeFallback => (EDIT_TYPE_FALLBACK, &["question"]),
        TemplateName::FinalAnswer => (FINAL_ANSWER, &["question", "others_points"]),
        TemplateName::DirectAnswer => (DIRECT_ANSWER, &["question"]),
        TemplateName::Critique => (CRITIQUE, &["question", "reasoning"]),
        TemplateName::Revise => (REVISE, &["question", "reasoning", "feedback"]),
    };
    PromptTemplate {
        name,
        body,
        placeholders,
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

/// Splits a body into literal text and `{name}` slots. `{{` and `}}` are
/// escaped braces.
fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let (mut i, mut start) = (0, 0);
    while i < bytes.len() {
        match bytes[i] {
            b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                out.push(Piece::Text(&body[start..=i]));
                i += 2;
                start = i;
            }
            b'{' => {
                let close = body[i + 1..].find('}').map(|j| i + 1 + j);
                match close {
                    Some(end)
                        if end > i + 1 && body[i + 1..end].bytes().all(|c| c.is_ascii_lowercase() || c == b'_') =>
                    {
                        out.push(Piece::Text(&body[start..i]));
                        out.push(Piece::Slot(&body[i + 1..end]));
                        i = end + 1;
                        start = i;
                    }
                    _ => i += 1,
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&body[start..]));
    out
}

impl PromptTemplate {
    /// Placeholders as they occur in the body, in order, with repeats.
    pub fn slots(&self) -> Vec<&'static str> {
        pieces(self.body)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s),
                Piece::Text(_) => None,
            })
            .collect()
    }
}

pub fn render_prompt(t: &PromptTemplate, vars: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(t.body.len());
    for piece in pieces(t.body) {
        match piece {
            Piece::Text(s) => out.push_str(s),
            Piece::Slot(name) => match vars.get(name) {
                Some(v) => out.push_str(v),
                None => {
                    return Err(Error::Template {
                        template: t.name.to_string(),
                        placeholder: name.to_string(),
                    })
                }
            },
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn full_vars(t: &PromptTemplate, value: &str) -> BTreeMap<&'static str, String> {
        t.placeholders.iter().map(|p| (*p, format!("{value}-{p}"))).collect()
    }

    #[test]
    fn declared_placeholders_match_body() {
        for name in TemplateName::ALL {
            let t = template(name);
            let used: BTreeSet<_> = t.slots().into_iter().collect();
            let declared: BTreeSet<_> = t.placeholders.iter().copied().collect();
            assert_eq!(used, declared, "{name}");
        }
    }

    #[test]
    fn complete_maps_leave_nothing_unresolved() {
        for name in TemplateName::ALL {
            let t = template(name);
            let out = render_prompt(&t, &full_vars(&t, "v")).unwrap();
            for p in t.placeholders {
                assert!(!out.contains(&format!("{{{p}}}")), "{name} left {p}");
            }
        }
    }

    #[test]
    fn normal_reasoning_carries_question() {
        let t = template(TemplateName::NormalReasoning);
        let mut vars = full_vars(&t, "x");
        vars.insert("question", "Q1".into());
        let out = render_prompt(&t, &vars).unwrap();
        assert!(out.contains("Q1"));
        assert!(out.contains("generating high-quality reasoning"));
        assert_eq!(out, render_prompt(&t, &vars).unwrap());
    }

    #[test]
    fn missing_variable_names_placeholder() {
        let t = template(TemplateName::NormalDefense);
        match render_prompt(&t, &BTreeMap::new()) {
            Err(Error::Template { placeholder, .. }) => assert_eq!(placeholder, "question"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn escaped_braces_render_literally() {
        let t = template(TemplateName::SceneExtraction);
        let out = render_prompt(&t, &full_vars(&t, "q")).unwrap();
        assert!(out.contains("{\"objects\": [{\"id\": 0"));
    }

    #[test]
    fn formats_are_embedded() {
        for name in [TemplateName::NormalDefense, TemplateName::CounterfactualDefense] {
            assert!(template(name).body.ends_with(PEER_SCORES_FORMAT));
        }
        assert!(template(TemplateName::NormalReasoning).body.ends_with(ANSWER_LINE));
    }
}
