use std::time::Duration;

use base64::Engine as _;
use serde_json::json;

use super::instruction::EditOp;
use crate::error::BackendError;
use crate::http::{join_url, HttpClient, RetryPolicy};
use crate::image::{FactSet, ImageRef};

pub trait EditBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Produces an edited copy of `image`. `attempt` starts at 1.
    fn edit(&self, image: &ImageRef, instruction: &str, attempt: u32) -> Result<ImageRef, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Applies an instruction to a fact set. `None` when the instruction is not
/// understood or changes nothing.
pub fn apply_instruction(facts: &FactSet, instruction: &str) -> Option<FactSet> {
    let op = EditOp::parse(instruction)?;
    let mut out = facts.clone();
    let labels: Vec<String> = facts
        .keys()
        .filter_map(|k| k.split_once('.').map(|(l, _)| l.to_string()))
        .collect();
    let resolve = |name: &str| -> String {
        let wanted = name.trim().replace(' ', "_");
        labels
            .iter()
            .find(|l| l.eq_ignore_ascii_case(&wanted))
            .cloned()
            .unwrap_or(wanted)
    };
    match op {
        EditOp::AddOne { label } => {
            let l = resolve(&label);
            let (count, present) = (format!("{l}.count"), format!("{l}.present"));
            match facts.get(&count).and_then(|c| c.trim().parse::<usize>().ok()) {
                Some(n) => out.set(&count, (n + 1).to_string()),
                None if facts.get(&present).is_none() && has_label(facts, &l) => out.set(&count, "2"),
                None => {}
            }
            if facts.get(&present).is_some() || !has_label(facts, &l) {
                out.set(&present, "yes");
            }
        }
        EditOp::RemoveOne { label } => {
            let l = resolve(&label);
            let (count, present) = (format!("{l}.count"), format!("{l}.present"));
            match facts.get(&count).and_then(|c| c.trim().parse::<usize>().ok()) {
                Some(n) if n > 1 => out.set(&count, (n - 1).to_string()),
                Some(1) => {
                    out.set(&count, "0");
                    if facts.get(&present).is_some() {
                        out.set(&present, "no");
                    }
                }
                Some(_) => {}
                None if has_label(facts, &l) => out.set(&present, "no"),
                None => {}
            }
        }
        EditOp::RemoveAll { label } => {
            let l = resolve(&label);
            if !has_label(facts, &l) {
                return None;
            }
            out.set(format!("{l}.present"), "no");
            if facts.get(&format!("{l}.count")).is_some() {
                out.set(format!("{l}.count"), "0");
            }
            let refs: Vec<String> = facts
                .facts()
                .iter()
                .filter(|(k, v)| !k.starts_with(&format!("{l}.")) && v.trim().replace(' ', "_") == l)
                .map(|(k, _)| k.clone())
                .collect();
            for k in refs {
                out.set(k, "nothing");
            }
        }
        EditOp::Change { old, noun, new } => {
            let key = facts.facts().iter().find_map(|(k, v)| {
                let (label, attr) = k.split_once('.')?;
                let label_tail = label.rsplit('_').next().unwrap_or(label);
                let noun_ok = attr.eq_ignore_ascii_case(&noun) || label_tail.eq_ignore_ascii_case(&noun);
                (noun_ok && v.trim().eq_ignore_ascii_case(old.trim())).then(|| k.clone())
            })?;
            out.set(key, new);
        }
        EditOp::Replace { from, to } => {
            let from = resolve(&from);
            let to = to.trim().replace(' ', "_");
            let mut changed = false;
            for (k, v) in facts.facts() {
                let renamed = match k.split_once('.') {
                    Some((l, attr)) if *l == from => Some(format!("{to}.{attr}")),
                    _ => None,
                };
                if let Some(new_key) = renamed {
                    out.rename(k, new_key);
                    changed = true;
                } else if v.trim().replace(' ', "_") == from {
                    out.set(k.clone(), to.replace('_', " "));
                    changed = true;
                }
            }
            if !changed {
                return None;
            }
        }
        EditOp::Move { subject, relation } => {
            let phrase = format!("{subject} {relation}");
            let label = labels
                .iter()
                .filter(|l| phrase.starts_with(&format!("{} ", l.replace('_', " "))))
                .max_by_key(|l| l.len())?
                .clone();
            let rel = phrase[label.len() + 1..].trim().to_string();
            out.set(format!("{label}.position"), rel);
        }
    }
    (out != *facts).then_some(out)
}

fn has_label(facts: &FactSet, label: &str) -> bool {
    facts.keys().any(|k| k.split_once('.').is_some_and(|(l, _)| l == label))
}

/// Edits fact-set images by parsing the instruction grammar. Instructions it
/// does not understand return the image unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct FactSetEditor;

impl EditBackend for FactSetEditor {
    fn name(&self) -> &str {
        "factset"
    }

    fn edit(&self, image: &ImageRef, instruction: &str, _attempt: u32) -> Result<ImageRef, BackendError> {
        let facts = image
            .facts()
            .ok_or_else(|| BackendError::Unsupported("fact-set editor needs a fact-set image".into()))?;
        Ok(match apply_instruction(facts, instruction) {
            Some(edited) => ImageRef::from_facts(edited),
            None => image.clone(),
        })
    }
}

/// Client for `POST /edit {image, instruction} -> {image}`.
#[derive(Debug, Clone)]
pub struct HttpEditor {
    base: String,
    client: HttpClient,
}

impl HttpEditor {
    pub fn new(base: impl Into<String>, client: HttpClient) -> Self {
        Self {
            base: base.into(),
            client,
        }
    }

    pub fn with_defaults(base: impl Into<String>) -> Self {
        Self::new(
            base,
            HttpClient::new(Duration::from_secs(300), RetryPolicy::default(), 4),
        )
    }
}

impl EditBackend for HttpEditor {
    fn name(&self) -> &str {
        &self.base
    }

    fn edit(&self, image: &ImageRef, instruction: &str, _attempt: u32) -> Result<ImageRef, BackendError> {
        let url = join_url(&self.base, "/edit");
        let body = json!({ "image": image.to_base64()?, "instruction": instruction });
        let (reply, _) = self.client.post_json(&url, &body, &[]);
        let reply = reply?;
        let encoded = reply
            .get("image")
            .and_then(serde_json::Value::as_str)
            .ok_or_else(|| BackendError::Protocol {
                endpoint: url.clone(),
                message: "expected {\"image\": base64}".into(),
            })?;
        let data = base64::engine::general_purpose::STANDARD
            .decode(encoded)
            .map_err(|e| BackendError::Protocol {
                endpoint: url,
                message: format!("image is not base64: {e}"),
            })?;
        Ok(ImageRef::from_bytes(data))
    }

    fn health(&self) -> Result<(), BackendError> {
        let url = join_url(&self.base, "/healthz");
        match self.client.get_status(&url)? {
            200 => Ok(()),
            status => Err(BackendError::Status {
                endpoint: url,
                status,
                body: String::new(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mockhttp::{MockResponse, MockServer};

    fn fs(pairs: &[(&str, &str)]) -> FactSet {
        FactSet::uniform(pairs.iter().copied())
    }

    #[test]
    fn change_edits_matching_attribute() {
        let out = apply_instruction(&fs(&[("girl.hair", "red")]), "change red hair to black").unwrap();
        assert_eq!(out.get("girl.hair"), Some("black"));
        let out = apply_instruction(&fs(&[("car.color", "red")]), "change red car to blue").unwrap();
        assert_eq!(out.get("car.color"), Some("blue"));
    }

    #[test]
    fn counts_move_by_one() {
        let out = apply_instruction(&fs(&[("cat.count", "2")]), "remove one cat").unwrap();
        assert_eq!(out.get("cat.count"), Some("1"));
        let out = apply_instruction(&fs(&[("cat.count", "2")]), "add one cat").unwrap();
        assert_eq!(out.get("cat.count"), Some("3"));
    }

    #[test]
    fn presence_flips() {
        let out = apply_instruction(&fs(&[("car.present", "yes")]), "remove the car").unwrap();
        assert_eq!(out.get("car.present"), Some("no"));
        let out = apply_instruction(&fs(&[("car.present", "no")]), "add one car").unwrap();
        assert_eq!(out.get("car.present"), Some("yes"));
    }

    #[test]
    fn replace_renames_label_and_references() {
        let out = apply_instruction(
            &fs(&[("girl.holding", "phone"), ("phone.color", "black")]),
            "replace phone with cup",
        )
        .unwrap();
        assert_eq!(out.get("girl.holding"), Some("cup"));
        assert_eq!(out.get("cup.color"), Some("black"));
        assert_eq!(out.get("phone.color"), None);
    }

    #[test]
    fn move_sets_position() {
        let out = apply_instruction(
            &fs(&[("cup.position", "left of plate"), ("plate.color", "white")]),
            "move cup right of plate",
        )
        .unwrap();
        assert_eq!(out.get("cup.position"), Some("right of plate"));
    }

    #[test]
    fn unknown_instruction_leaves_image_unchanged() {
        let img = ImageRef::from_facts(fs(&[("cat.count", "2")]));
        let out = FactSetEditor.edit(&img, "change one small detail", 1).unwrap();
        assert_eq!(out.digest, img.digest);
    }

    #[test]
    fn http_editor_round_trips_base64() {
        let server = MockServer::start(|req| {
            assert_eq!(req.path, "/edit");
            let body = req.json();
            assert_eq!(body["instruction"], "remove one cat");
            MockResponse::json(200, &json!({ "image": "AAEC" }))
        });
        let out = HttpEditor::with_defaults(server.base_url())
            .edit(&ImageRef::from_bytes(vec![7]), "remove one cat", 1)
            .unwrap();
        assert_eq!(out.load_bytes().unwrap(), vec![0, 1, 2]);
    }
}
