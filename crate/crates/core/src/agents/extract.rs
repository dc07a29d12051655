use std::collections::BTreeMap;

use crate::model::{option_letter, AgentId, FactorScores};

/// Canonical form shared by every protocol: trimmed, trailing punctuation
/// dropped, single letters uppercased, yes/no synonyms folded.
pub fn normalize_answer(raw: &str) -> String {
    let s = raw
        .trim()
        .trim_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\'' | '(' | ')' | '*'))
        .trim();
    let lower = s.to_lowercase();
    match lower.as_str() {
        "y" | "yes" | "true" => return "yes".into(),
        "n" | "no" | "false" => return "no".into(),
        _ => {}
    }
    if s.chars().count() == 1 && s.chars().all(|c| c.is_ascii_alphabetic()) {
        return s.to_ascii_uppercase();
    }
    lower.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|t| !t.is_empty())
        .collect()
}

fn letter_index(token: &str, n_options: usize) -> Option<usize> {
    let mut chars = token.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    let i = (c.to_ascii_uppercase() as u8 - b'A') as usize;
    (i < n_options.clamp(4, 26)).then_some(i)
}

/// Pulls the answer out of free text.
///
/// A line starting with `Answer:` wins; its first token is read as an option
/// letter or yes/no, otherwise the remainder is taken as a free-form answer.
/// Without such a line the last standalone option letter or yes/no token is
/// used. Bare letters outside an answer line must be uppercase or
/// parenthesised so the article "a" is not mistaken for an option.
pub fn extract_answer(text: &str, n_options: usize) -> Option<String> {
    let marked = text.lines().rev().find_map(|line| {
        let l = line.trim().trim_start_matches(['*', '#', '-', ' ']);
        let head = l.get(..7)?;
        head.eq_ignore_ascii_case("answer:").then(|| l[7..].trim())
    });
    if let Some(rest) = marked {
        if let Some(first) = tokens(rest).first() {
            if letter_index(first, n_options).is_some() && n_options > 0 {
                return Some(first.to_ascii_uppercase());
            }
            let n = normalize_answer(first);
            if n == "yes" || n == "no" {
                return Some(n);
            }
        }
        let n = normalize_answer(rest);
        if !n.is_empty() && !n.starts_with('<') {
            return Some(n);
        }
    }
    let mut last = None;
    let bytes = text.as_bytes();
    for tok in text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-')) {
        if tok.is_empty() {
            continue;
        }
        let start = tok.as_ptr() as usize - text.as_ptr() as usize;
        let n = normalize_answer(tok);
        if n == "yes" || n == "no" {
            last = Some(n);
            continue;
        }
        if n_options == 0 || letter_index(tok, n_options).is_none() {
            continue;
        }
        let upper = tok.chars().all(|c| c.is_ascii_uppercase());
        let parenthesised = start > 0 && bytes[start - 1] == b'(' && bytes.get(start + 1) == Some(&b')');
        if upper || parenthesised {
            last = Some(tok.to_ascii_uppercase());
        }
    }
    last
}

/// Maps an answer to the option letter when it names an option verbatim.
pub fn to_option_letter(answer: &str, options: &[String]) -> String {
    let n = normalize_answer(answer);
    options
        .iter()
        .position(|o| normalize_answer(o) == n)
        .map(|i| option_letter(i).to_string())
        .unwrap_or(n)
}

/// Parses the `Peer Scores:` block of a defense reply.
///
/// Candidates missing from the block, or listed with other than four numbers,
/// get the neutral vector and a warning. A reply without the block yields one
/// warning for the whole block.
pub fn parse_peer_scores(text: &str, candidates: &[AgentId]) -> (BTreeMap<AgentId, FactorScores>, Vec<String>) {
    let neutral = || candidates.iter().map(|c| (*c, FactorScores::NEUTRAL)).collect();
    let lower = text.to_ascii_lowercase();
    let Some(at) = lower.rfind("peer scores") else {
        return (neutral(), vec!["no Peer Scores block; neutral scores used".into()]);
    };
    let mut found: BTreeMap<AgentId, FactorScores> = BTreeMap::new();
    let mut warnings = Vec::new();
    for line in text[at..].lines().skip(1) {
        let l = line.trim().trim_start_matches(['-', '*', ' ']);
        if l.is_empty() {
            continue;
        }
        let ll = l.to_ascii_lowercase();
        let Some(rest) = ll.strip_prefix("agent") else {
            if found.is_empty() {
                continue;
            }
            break;
        };
        let rest = rest.trim_start();
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        let Ok(id) = digits.parse::<usize>() else {
            warnings.push(format!("unreadable peer score line {l:?}"));
            continue;
        };
        let values: Vec<f64> = rest[digits.len()..]
            .split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
            .filter(|t| !t.is_empty() && *t != "-" && *t != ".")
            .filter_map(|t| t.parse().ok())
            .collect();
        let id = AgentId(id);
        if !candidates.contains(&id) {
            warnings.push(format!("peer score for non-candidate {id} ignored"));
            continue;
        }
        if values.len() != 4 {
            warnings.push(format!("{id}: expected 4 scores, got {}", values.len()));
            continue;
        }
        let raw = FactorScores([values[0], values[1], values[2], values[3]]);
        let clamped = raw.clamped();
        if clamped != raw {
            warnings.push(format!("{id}: scores clamped to [0, 10]"));
        }
        found.insert(id, clamped);
    }
    let mut out = BTreeMap::new();
    for c in candidates {
        match found.get(c) {
            Some(s) => {
                out.insert(*c, *s);
            }
            None => {
                if !warnings.iter().any(|w| w.starts_with(&format!("{c}:"))) {
                    warnings.push(format!("{c}: no peer score; neutral used"));
                }
                out.insert(*c, FactorScores::NEUTRAL);
            }
        }
    }
    (out, warnings)
}
