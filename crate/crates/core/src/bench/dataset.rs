use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::agents::{normalize_answer, to_option_letter};
use crate::error::{Error, Result};
use crate::image::{FactSet, ImageRef, Locator};
use crate::model::CfQuestion;
use crate::transcript::ItemMeta;

/// Share of malformed records above which a load fails outright.
const MAX_REJECT_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchItem {
    pub item_id: String,
    pub question: CfQuestion,
    pub dataset: Dataset,
    pub track: Option<String>,
    pub question_group: Option<String>,
    pub figure_group: Option<String>,
    /// Normalized gold answer; an option letter when the item has options.
    pub label: String,
}

impl BenchItem {
    pub fn validate(&self) -> Result<()> {
        if self.item_id.trim().is_empty() {
            return Err(Error::Invalid("item_id is empty".into()));
        }
        if self.label.is_empty() {
            return Err(Error::Invalid("label is empty".into()));
        }
        match self.dataset {
            Dataset::Pope if !matches!(self.label.as_str(), "yes" | "no") => Err(Error::Invalid(format!(
                "POPE label must be yes or no, got {:?}",
                self.label
            ))),
            Dataset::HallusionBench if self.question_group.is_none() || self.figure_group.is_none() => Err(
                Error::Invalid("HallusionBench items need question and figure groups".into()),
            ),
            _ => self.question.validate(),
        }
    }

    pub fn meta(&self) -> ItemMeta {
        ItemMeta {
            item_id: self.item_id.clone(),
            dataset: self.dataset,
            track: self.track.clone(),
            label: self.label.clone(),
            question_group: self.question_group.clone(),
            figure_group: self.figure_group.clone(),
        }
    }
}

fn normalize_label(label: &str, options: &[String]) -> String {
    if options.is_empty() {
        normalize_answer(label)
    } else {
        to_option_letter(label, options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    NormalizedLines,
    PopeNative,
    HallusionNative,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized-lines" | "normalized" | "jsonl" => Ok(DatasetFormat::NormalizedLines),
            "pope-native" | "pope" => Ok(DatasetFormat::PopeNative),
            "hallusion-native" | "hallusion" => Ok(DatasetFormat::HallusionNative),
            other => Err(Error::Config(format!(
                "unknown dataset format {other:?} (expected normalized-lines, pope-native or hallusion-native)"
            ))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::NormalizedLines => "normalized-lines",
            DatasetFormat::PopeNative => "pope-native",
            DatasetFormat::HallusionNative => "hallusion-native",
        })
    }
}

/// Image locator in the interchange format. Relative paths resolve against
/// the dataset file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageSpec {
    Facts(FactSet),
    Path {
        path: PathBuf,
    },
    Url {
        url: String,
    },
    /// Text-only item.
    None,
}

/// One line of the normalized interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizedRecord {
    pub item_id: String,
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<String>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus_key: Option<String>,
    pub image: ImageSpec,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure_group: Option<String>,
}

impl NormalizedRecord {
    pub fn into_item(self, base: &Path) -> Result<BenchItem> {
        let image = match self.image {
            ImageSpec::Facts(f) => ImageRef::from_facts(f),
            ImageSpec::Path { path } => ImageRef::from_path(base.join(path))?,
            ImageSpec::Url { url } => ImageRef::from_url(url),
            ImageSpec::None => ImageRef::from_bytes(Vec::new()),
        };
        let mut question = CfQuestion::new(self.question, image)?.with_options(self.options);
        if let Some(k) = self.focus_key {
            question = question.with_focus(k);
        }
        let label = normalize_label(&self.label, &question.options);
        question = question.with_gold(label.clone());
        let item = BenchItem {
            item_id: self.item_id,
            question,
            dataset: self.dataset,
            track: self.track,
            question_group: self.question_group,
            figure_group: self.figure_group,
            label,
        };
        item.validate()?;
        Ok(item)
    }

    /// Fails for byte-backed images, which have no line form.
    pub fn from_item(item: &BenchItem) -> Result<Self> {
        let image = match &item.question.factual_image.locator {
            Locator::Facts { facts } => ImageSpec::Facts(facts.clone()),
            Locator::Path { path } => ImageSpec::Path { path: path.clone() },
            Locator::Url { url } => ImageSpec::Url { url: url.clone() },
            Locator::Bytes { data } if data.is_empty() => ImageSpec::None,
            Locator::Bytes { .. } => {
                return Err(Error::Invalid(format!(
                    "item {} holds inline image bytes",
                    item.item_id
                )));
            }
        };
        Ok(Self {
            item_id: item.item_id.clone(),
            dataset: item.dataset,
            track: item.track.clone(),
            question: item.question.prompt_text.clone(),
            options: item.question.options.clone(),
            focus_key: item.question.focus_key.clone(),
            image,
            label: item.label.clone(),
            question_group: item.question_group.clone(),
            figure_group: item.figure_group.clone(),
        })
    }
}

pub fn write_normalized(items: &[BenchItem], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&NormalizedRecord::from_item(item)?)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line, or element index + 1 for array files.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub items: Vec<BenchItem>,
    pub rejects: Vec<Reject>,
}

#[derive(Deserialize)]
struct PopeLine {
    #[serde(alias = "id")]
    question_id: serde_json::Value,
    image: String,
    #[serde(alias = "question")]
    text: String,
    label: String,
    #[serde(default, alias = "category")]
    track: Option<String>,
}

#[derive(Deserialize)]
struct HallusionEntry {
    category: String,
    subcategory: String,
    #[serde(default)]
    visual_input: serde_json::Value,
    set_id: serde_json::Value,
    figure_id: serde_json::Value,
    question_id: serde_json::Value,
    question: String,
    gt_answer: serde_json::Value,
    #[serde(default)]
    filename: Option<String>,
}

fn scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Records of a JSON-lines file, or the elements of a top-level array.
fn records(text: &str) -> Vec<(usize, std::result::Result<serde_json::Value, String>)> {
    if text.trim_start().starts_with('[') {
        return match serde_json::from_str::<Vec<serde_json::Value>>(text) {
            Ok(values) => values.into_iter().enumerate().map(|(i, v)| (i + 1, Ok(v))).collect(),
            Err(e) => vec![(1, Err(format!("not a JSON array: {e}")))],
        };
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, serde_json::from_str(l).map_err(|e| e.to_string())))
        .collect()
}

fn pope_track_from_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?.to_ascii_lowercase();
    ["random", "popular", "adversarial"]
        .into_iter()
        .find(|t| stem.contains(t))
        .map(str::to_string)
}

fn pope_item(v: serde_json::Value, base: &Path, default_track: Option<&str>) -> Result<BenchItem> {
    let line: PopeLine = serde_json::from_value(v)?;
    let label = normalize_answer(&line.label);
    if !matches!(label.as_str(), "yes" | "no") {
        return Err(Error::Invalid(format!("label {:?} is not yes or no", line.label)));
    }
    let image = ImageRef::from_path(base.join(&line.image))
        .map_err(|e| Error::Invalid(format!("image {}: {e}", line.image)))?;
    let track = line.track.or_else(|| default_track.map(str::to_string));
    let item_id = match &track {
        Some(t) => format!("{t}-{}", scalar(&line.question_id)),
        None => scalar(&line.question_id),
    };
    let item = BenchItem {
        item_id,
        question: CfQuestion::new(line.text, image)?.with_gold(label.clone()),
        dataset: Dataset::Pope,
        track,
        question_group: None,
        figure_group: None,
        label,
    };
    item.validate()?;
    Ok(item)
}

fn hallusion_item(v: serde_json::Value, base: &Path) -> Result<BenchItem> {
    let e: HallusionEntry = serde_json::from_value(v)?;
    let group = format!("{}_{}_{}", e.category, e.subcategory, scalar(&e.set_id));
    let label = match scalar(&e.gt_answer).trim() {
        "1" => "yes".to_string(),
        "0" => "no".to_string(),
        other => {
            let n = normalize_answer(other);
            if !matches!(n.as_str(), "yes" | "no") {
                return Err(Error::Invalid(format!("gt_answer {other:?} is not 0/1")));
            }
            n
        }
    };
    let visual = scalar(&e.visual_input);
    let image = match (&e.filename, visual.as_str()) {
        (_, "0") | (None, _) => ImageRef::from_bytes(Vec::new()),
        (Some(f), _) => ImageRef::from_path(base.join(f.trim_start_matches("./")))
            .map_err(|err| Error::Invalid(format!("image {f}: {err}")))?,
    };
    let qid = scalar(&e.question_id);
    let fid = scalar(&e.figure_id);
    let item = BenchItem {
        item_id: format!("{group}_{fid}_{qid}"),
        question: CfQuestion::new(e.question, image)?.with_gold(label.clone()),
        dataset: Dataset::HallusionBench,
        track: Some(e.category),
        question_group: Some(format!("{group}_{qid}")),
        figure_group: Some(format!("{group}_{fid}")),
        label,
    };
    item.validate()?;
    Ok(item)
}

/// Loads and validates a dataset. Malformed records are reported, not
/// dropped silently; more than 10% of them fails the load.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<LoadReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let default_track = pope_track_from_name(path);
    let mut items = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let recs = records(&text);
    let total = recs.len();
    for (line, rec) in recs {
        let parsed = rec.map_err(Error::Invalid).and_then(|v| match format {
            DatasetFormat::NormalizedLines => serde_json::from_value::<NormalizedRecord>(v)
                .map_err(Error::from)
                .and_then(|r| r.into_item(base)),
            DatasetFormat::PopeNative => pope_item(v, base, default_track.as_deref()),
            DatasetFormat::HallusionNative => hallusion_item(v, base),
        });
        match parsed {
            Ok(item) if !seen.insert(item.item_id.clone()) => rejects.push(Reject {
                line,
                reason: format!("duplicate item_id {}", item.item_id),
            }),
            Ok(item) => items.push(item),
            Err(e) => rejects.push(Reject {
                line,
                reason: e.to_string(),
            }),
        }
    }
    for r in &rejects {
        tracing::warn!(line = r.line, reason = %r.reason, "rejected dataset record");
    }
    if total > 0 && rejects.len() as f64 > MAX_REJECT_SHARE * total as f64 {
        return Err(Error::Ingest(format!(
            "{} of {total} records rejected in {} (first: line {}: {})",
            rejects.len(),
            path.display(),
            rejects[0].line,
            rejects[0].reason
        )));
    }
    Ok(LoadReport { items, rejects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn normalized_line(id: &str, label: &str) -> String {
        format!(
            r#"{{"item_id":"{id}","dataset":"synthetic","question":"Is there a cat?","focus_key":"cat.present","image":{{"kind":"facts","facts":{{"cat.present":"yes"}}}},"label":"{label}"}}"#
        )
    }

    #[test]
    fn three_normalized_lines_give_three_items() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let text = ["a", "b", "c"].map(|id| normalized_line(id, "Yes")).join("\n");
        std::fs::write(&path, text).unwrap();
        let report = load_dataset(&path, DatasetFormat::NormalizedLines).unwrap();
        assert_eq!(report.items.len(), 3);
        assert!(report.rejects.is_empty());
        assert_eq!(report.items[0].label, "yes");
        assert_eq!(report.items[0].question.gold_answer.as_deref(), Some("yes"));
    }

    #[test]
    fn pope_label_outside_domain_is_rejected_with_reason() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("img.jpg"), b"jpeg").unwrap();
        let path = dir.path().join("coco_pope_random.json");
        let mut f = std::fs::File::create(&path).unwrap();
        for i in 0..10 {
            writeln!(
                f,
                r#"{{"question_id":{i},"image":"img.jpg","text":"Is there a cat in the image?","label":"yes"}}"#
            )
            .unwrap();
        }
        writeln!(
            f,
            r#"{{"question_id":10,"image":"img.jpg","text":"Is there a dog in the image?","label":"maybe"}}"#
        )
        .unwrap();
        drop(f);
        let report = load_dataset(&path, DatasetFormat::PopeNative).unwrap();
        assert_eq!(report.items.len(), 10);
        assert_eq!(report.rejects.len(), 1);
        assert_eq!(report.rejects[0].line, 11);
        assert!(report.rejects[0].reason.contains("maybe"));
        assert_eq!(report.items[0].track.as_deref(), Some("random"));
    }

    #[test]
    fn too_many_rejects_fail_the_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let text = format!(
            "{}\nnot json\n{}",
            normalized_line("a", "yes"),
            normalized_line("b", "no")
        );
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_dataset(&path, DatasetFormat::NormalizedLines),
            Err(Error::Ingest(_))
        ));
    }

    #[test]
    fn unknown_format_is_a_config_error() {
        assert!(matches!("csv".parse::<DatasetFormat>(), Err(Error::Config(_))));
    }

    #[test]
    fn pope_tracks_split_evenly() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("img.jpg"), b"jpeg").unwrap();
        let path = dir.path().join("pope.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        for (t, track) in ["random", "popular", "adversarial"].iter().enumerate() {
            for i in 0..20 {
                let label = if i % 2 == 0 { "yes" } else { "no" };
                writeln!(
                    f,
                    r#"{{"question_id":{},"image":"img.jpg","text":"Is there a cat in the image?","label":"{label}","category":"{track}"}}"#,
                    t * 100 + i
                )
                .unwrap();
            }
        }
        drop(f);
        let report = load_dataset(&path, DatasetFormat::PopeNative).unwrap();
        assert_eq!(report.items.len(), 60);
        for track in ["random", "popular", "adversarial"] {
            assert_eq!(
                report
                    .items
                    .iter()
                    .filter(|i| i.track.as_deref() == Some(track))
                    .count(),
                20
            );
        }
    }

    #[test]
    fn hallusion_entries_carry_both_groups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("HallusionBench.json");
        let entries = r#"[
          {"category":"VD","subcategory":"math","visual_input":"0","set_id":"1","figure_id":"0","sample_note":"x","question_id":"0","question":"Is 2 > 1?","gt_answer_details":"","gt_answer":"1","filename":null},
          {"category":"VD","subcategory":"math","visual_input":"0","set_id":"1","figure_id":"1","sample_note":"x","question_id":"0","question":"Is 2 > 1?","gt_answer_details":"","gt_answer":"0","filename":null}
        ]"#;
        std::fs::write(&path, entries).unwrap();
        let report = load_dataset(&path, DatasetFormat::HallusionNative).unwrap();
        assert_eq!(report.items.len(), 2);
        let (a, b) = (&report.items[0], &report.items[1]);
        assert_eq!(a.question_group, b.question_group);
        assert_ne!(a.figure_group, b.figure_group);
        assert_eq!((a.label.as_str(), b.label.as_str()), ("yes", "no"));
        assert_eq!(a.question.factual_image.load_bytes().unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn normalized_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, normalized_line("a", "no")).unwrap();
        let items = load_dataset(&path, DatasetFormat::NormalizedLines).unwrap().items;
        let out = dir.path().join("e.jsonl");
        write_normalized(&items, &out).unwrap();
        assert_eq!(load_dataset(&out, DatasetFormat::NormalizedLines).unwrap().items, items);
    }
}
