use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::classify::normalize;
use crate::error::{Error, Result};
use crate::image::FactSet;
use crate::model::EditType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub label: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub subject_id: usize,
    pub predicate: String,
    pub object_id: usize,
}

/// A scene graph: labelled objects and the relations between them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawScene")]
pub struct SceneDescription {
    objects: Vec<SceneObject>,
    relations: Vec<Relation>,
}

#[derive(Deserialize)]
struct RawScene {
    #[serde(default)]
    objects: Vec<SceneObject>,
    #[serde(default)]
    relations: Vec<Relation>,
}

impl TryFrom<RawScene> for SceneDescription {
    type Error = Error;

    fn try_from(raw: RawScene) -> Result<Self> {
        SceneDescription::new(raw.objects, raw.relations)
    }
}

/// Cap on objects expanded from a single count fact.
const MAX_EXPANDED: usize = 64;

impl SceneDescription {
    pub fn new(mut objects: Vec<SceneObject>, relations: Vec<Relation>) -> Result<Self> {
        objects.sort_by_key(|o| o.id);
        let mut ids = BTreeSet::new();
        for o in &objects {
            if !ids.insert(o.id) {
                return Err(Error::Invalid(format!("duplicate scene object id {}", o.id)));
            }
        }
        for r in &relations {
            if !ids.contains(&r.subject_id) || !ids.contains(&r.object_id) {
                return Err(Error::Invalid(format!(
                    "relation {} {} {} references a missing object",
                    r.subject_id, r.predicate, r.object_id
                )));
            }
        }
        Ok(Self { objects, relations })
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn object(&self, id: usize) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Builds a scene from `label.attribute` facts.
    ///
    /// `label.count` expands into that many objects, `label.present = no`
    /// keeps a single absent placeholder, an attribute whose value names
    /// another label becomes a relation, and `label.position` values of the
    /// form "left of plate" become relations to the named object.
    pub fn from_facts(facts: &FactSet) -> Self {
        let mut by_label: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        for (key, value) in facts.facts() {
            let (label, attr) = key.split_once('.').unwrap_or((key.as_str(), "value"));
            by_label.entry(label).or_default().push((attr, value.as_str()));
        }

        let mut objects = Vec::new();
        let mut first_id: BTreeMap<&str, usize> = BTreeMap::new();
        let mut present: BTreeSet<&str> = BTreeSet::new();
        for (label, attrs) in &by_label {
            let get = |name: &str| attrs.iter().find(|(a, _)| *a == name).map(|(_, v)| *v);
            let absent = get("present").is_some_and(is_no);
            let count = match get("count").and_then(|c| c.trim().parse::<usize>().ok()) {
                Some(n) if !absent => n,
                Some(_) | None if absent => 0,
                _ => 1,
            };
            first_id.insert(label, objects.len());
            if count == 0 {
                let mut attributes = BTreeMap::new();
                attributes.insert("present".to_string(), "no".to_string());
                attributes.insert("count".to_string(), "0".to_string());
                objects.push(SceneObject {
                    id: objects.len(),
                    label: label.to_string(),
                    attributes,
                });
                continue;
            }
            present.insert(label);
            for i in 0..count.min(MAX_EXPANDED) {
                let mut attributes = BTreeMap::new();
                attributes.insert("count".to_string(), count.to_string());
                if i == 0 {
                    for (a, v) in attrs {
                        if !matches!(*a, "count" | "present") {
                            attributes.insert(a.to_string(), v.to_string());
                        }
                    }
                }
                objects.push(SceneObject {
                    id: objects.len(),
                    label: label.to_string(),
                    attributes,
                });
            }
        }

        let mut relations = Vec::new();
        for obj in objects.iter_mut() {
            if !present.contains(obj.label.as_str()) {
                continue;
            }
            let mut moved = Vec::new();
            for (attr, value) in &obj.attributes {
                if matches!(attr.as_str(), "count" | "present") {
                    continue;
                }
                let target = if attr == "position" {
                    split_relation(value, &present)
                } else {
                    let v = value.trim().replace(' ', "_");
                    present.get(v.as_str()).map(|other| (attr.replace('_', " "), *other))
                };
                if let Some((predicate, other)) = target {
                    if other != obj.label {
                        relations.push(Relation {
                            subject_id: obj.id,
                            predicate,
                            object_id: first_id[other],
                        });
                        moved.push(attr.clone());
                    }
                }
            }
            for attr in moved {
                obj.attributes.remove(&attr);
            }
        }
        Self { objects, relations }
    }
}

fn is_no(v: &str) -> bool {
    matches!(v.trim().to_ascii_lowercase().as_str(), "no" | "n" | "false" | "0")
}

/// "left of plate" -> ("left of", "plate") when "plate" is a present label.
fn split_relation<'a>(value: &str, labels: &BTreeSet<&'a str>) -> Option<(String, &'a str)> {
    let words: Vec<&str> = value.split_whitespace().collect();
    for split in 1..words.len() {
        let other = words[split..].join("_");
        if let Some(label) = labels.get(other.as_str()) {
            return Some((words[..split].join(" "), *label));
        }
    }
    None
}

/// The other end of a relation, as seen from a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Related {
    pub predicate: String,
    pub other_label: String,
    /// Whether the target is the relation's subject.
    pub subject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub object_id: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Related>,
}

impl Target {
    fn object(o: &SceneObject) -> Self {
        Self {
            object_id: o.id,
            label: o.label.clone(),
            attribute: None,
            value: None,
            relation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub edit_type: EditType,
    pub targets: Vec<Target>,
    pub instruction: String,
    pub source_question_kind: String,
}

impl EditPlan {
    pub fn validate(&self) -> Result<()> {
        if self.instruction.trim().is_empty() {
            return Err(Error::Invalid("edit plan has an empty instruction".into()));
        }
        if self.edit_type != EditType::Other && self.targets.is_empty() {
            return Err(Error::NoTarget {
                edit_type: self.edit_type,
            });
        }
        Ok(())
    }
}

fn mentioned(norm_prompt: &str, word: &str) -> bool {
    let w = word.replace(['_', '.'], " ").to_lowercase();
    [w.clone(), format!("{w}s"), format!("{w}es")]
        .iter()
        .any(|form| norm_prompt.contains(&format!(" {form} ")))
}

fn is_absent(o: &SceneObject) -> bool {
    o.attributes.get("present").is_some_and(|v| is_no(v))
}

/// Objects of `scene` relevant to an edit of the given type, ordered by id.
pub fn identify_targets(scene: &SceneDescription, edit_type: EditType, prompt: &str) -> Result<Vec<Target>> {
    if scene.is_empty() {
        return Err(Error::Invalid("scene description has no objects".into()));
    }
    let p = normalize(prompt);
    let mut targets: Vec<Target> = match edit_type {
        EditType::Other => return Ok(Vec::new()),
        EditType::Quantity => {
            let mut groups: BTreeMap<&str, Vec<&SceneObject>> = BTreeMap::new();
            for o in scene.objects.iter().filter(|o| !is_absent(o)) {
                groups.entry(o.label.as_str()).or_default().push(o);
            }
            let duplicated: Vec<Target> = groups
                .values()
                .filter(|g| g.len() >= 2)
                .map(|g| count_target(g[0], g.len()))
                .collect();
            if !duplicated.is_empty() {
                duplicated
            } else {
                // nothing duplicated: any mentioned label can still gain or lose one
                let mut seen = BTreeSet::new();
                scene
                    .objects
                    .iter()
                    .filter(|o| mentioned(&p, &o.label) && seen.insert(o.label.as_str()))
                    .map(|o| count_target(o, if is_absent(o) { 0 } else { 1 }))
                    .collect()
            }
        }
        EditType::Attribute => {
            let mut pairs = Vec::new();
            for o in scene.objects.iter().filter(|o| !is_absent(o)) {
                for (attr, value) in &o.attributes {
                    if matches!(attr.as_str(), "count" | "present") || !mentioned(&p, attr) {
                        continue;
                    }
                    pairs.push(Target {
                        attribute: Some(attr.clone()),
                        value: Some(value.clone()),
                        ..Target::object(o)
                    });
                }
            }
            let named: Vec<Target> = pairs.iter().filter(|t| mentioned(&p, &t.label)).cloned().collect();
            if named.is_empty() {
                pairs
            } else {
                named
            }
        }
        EditType::Spatial => {
            let label_of = |id: usize| scene.object(id).map(|o| o.label.as_str()).unwrap_or("");
            let all: Vec<Target> = scene
                .relations
                .iter()
                .filter_map(|r| {
                    let o = scene.object(r.subject_id)?;
                    Some(Target {
                        relation: Some(Related {
                            predicate: r.predicate.clone(),
                            other_label: label_of(r.object_id).to_string(),
                            subject: true,
                        }),
                        ..Target::object(o)
                    })
                })
                .collect();
            let named: Vec<Target> = all
                .iter()
                .filter(|t| {
                    mentioned(&p, &t.label) || t.relation.as_ref().is_some_and(|r| mentioned(&p, &r.other_label))
                })
                .cloned()
                .collect();
            if named.is_empty() {
                all
            } else {
                named
            }
        }
        EditType::Object => {
            let mut out: BTreeMap<usize, Target> = BTreeMap::new();
            for o in scene.objects.iter().filter(|o| mentioned(&p, &o.label)) {
                out.entry(o.id).or_insert_with(|| Target::object(o));
            }
            // "what is the girl holding": the held object is the one to swap
            for r in &scene.relations {
                let (Some(s), Some(o)) = (scene.object(r.subject_id), scene.object(r.object_id)) else {
                    continue;
                };
                if mentioned(&p, &s.label) && mentioned(&p, &r.predicate) {
                    out.insert(
                        o.id,
                        Target {
                            relation: Some(Related {
                                predicate: r.predicate.clone(),
                                other_label: s.label.clone(),
                                subject: false,
                            }),
                            ..Target::object(o)
                        },
                    );
                }
            }
            for t in out.values_mut() {
                if let Some(o) = scene.object(t.object_id) {
                    if is_absent(o) {
                        t.attribute = Some("present".into());
                        t.value = Some("no".into());
                    }
                }
            }
            out.into_values().collect()
        }
    };
    targets.sort_by_key(|t| t.object_id);
    if targets.is_empty() {
        return Err(Error::NoTarget { edit_type });
    }
    Ok(targets)
}

fn count_target(o: &SceneObject, n: usize) -> Target {
    Target {
        attribute: Some("count".into()),
        value: Some(n.to_string()),
        ..Target::object(o)
    }
}
