//! The operator commands. Each returns data plus an exit code; printing is
//! left to `main`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mug_core::bench::{load_dataset, run_protocol, MetricsReport, PredRecord, Reject};
use mug_core::cfquestion::{failure_label, gate_triple, FailureLabel, GateParams};
use mug_core::image::{FactSet, ImageRef};
use mug_core::model::GateScores;
use mug_core::scoring::ScoreTriple;
use mug_core::simulation::{run_simulation, Scenario, SimReport};
use mug_core::transcript::SCHEMA_VERSION;
use mug_core::{Error, Result, Transcript};

use crate::config::{toml_error, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug)]
pub struct RunSummary {
    pub exit_code: i32,
    pub report: MetricsReport,
    pub transcripts: Vec<PathBuf>,
    pub rejects: Vec<Reject>,
}

/// File name for an item id; anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn transcript_file_name(item_id: &str) -> String {
    let safe: String = item_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

/// Runs the selected protocols over the dataset and writes
/// `out/transcripts/<protocol>/<item>.json` plus `out/report.json`.
/// Nothing is written unless the config validates, every mandatory
/// backend answers and the dataset loads.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let protocols = cfg.protocols()?;
    for check in cfg.health_checks()? {
        if let (Some(endpoint), Err(e)) = (&check.endpoint, &check.result) {
            return Err(Error::Config(format!(
                "{} backend at {endpoint} is unreachable: {e}; start it or fix the endpoint in the config",
                check.role
            )));
        }
    }
    let backends = cfg.backends()?;
    let path = cfg.dataset.path.as_ref().expect("validated");
    let loaded = load_dataset(path, cfg.format()?)?;
    if loaded.items.is_empty() {
        return Err(Error::EmptyRun);
    }
    let opts = cfg.run_options();
    let mut records: Vec<PredRecord> = Vec::new();
    let mut written = Vec::new();
    let mut runs = Vec::new();
    for p in &protocols {
        tracing::info!(protocol = %p, items = loaded.items.len(), "running protocol");
        runs.push((*p, run_protocol(*p, &loaded.items, &backends, &cfg.game, &opts)?));
    }
    let out = &cfg.run.out;
    for (p, run) in runs {
        let dir = out.join("transcripts").join(p.as_str());
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        for (record, transcript) in run {
            let file = dir.join(transcript_file_name(&record.item_id));
            transcript.write(&file)?;
            written.push(file);
            records.push(record);
        }
    }
    let report = MetricsReport::from_records(&records)?;
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    let rejects_file = out.join("rejects.json");
    if loaded.rejects.is_empty() {
        if rejects_file.exists() {
            std::fs::remove_file(&rejects_file)?;
        }
    } else {
        std::fs::write(&rejects_file, serde_json::to_string_pretty(&loaded.rejects)? + "\n")?;
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        tracing::warn!(failed, "some items failed; see the error field of their transcripts");
    }
    Ok(RunSummary {
        exit_code: if failed > 0 || !loaded.rejects.is_empty() {
            EXIT_PARTIAL
        } else {
            EXIT_OK
        },
        report,
        transcripts: written,
        rejects: loaded.rejects,
    })
}

fn json_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Config(format!("{}: {e}", root.display())))?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "json") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

/// Recomputes every metric from the transcripts under `dir` (or
/// `dir/transcripts` when present). Cached numbers are never read.
pub fn cmd_report(dir: &Path) -> Result<MetricsReport> {
    let root = if dir.join("transcripts").is_dir() {
        dir.join("transcripts")
    } else {
        dir.to_path_buf()
    };
    if !root.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", root.display())));
    }
    let mut texts = Vec::new();
    let mut offenders = Vec::new();
    for file in json_files(&root)? {
        let text = std::fs::read_to_string(&file)?;
        match Transcript::schema_of(&text) {
            Some(v) if v == SCHEMA_VERSION => texts.push((file, text)),
            // a report.json left among transcripts
            Some(v) if v.starts_with("mug-report/") => {}
            Some(v) => offenders.push(format!("{} ({v})", file.display())),
            None => offenders.push(format!("{} (no schema_version)", file.display())),
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Version { offenders });
    }
    let mut records = Vec::with_capacity(texts.len());
    for (file, text) in texts {
        let t = Transcript::from_json(&text).map_err(|e| Error::Invalid(format!("{}: {e}", file.display())))?;
        records.push(PredRecord::from_transcript(&t)?);
    }
    MetricsReport::from_records(&records)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let scenario: Scenario = toml::from_str(&text).map_err(|e| toml_error(path, &text, &e))?;
    scenario
        .validate()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(scenario)
}

pub fn cmd_simulate(scenario: &Path, workers: usize) -> Result<SimReport> {
    run_simulation(&load_scenario(scenario)?, workers)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub scorer: String,
    pub scores: ScoreTriple,
    pub gate: GateScores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<FailureLabel>,
}

/// A `.json` file holding a fact set is read as one; anything else as raw bytes.
pub fn load_image(path: &Path) -> Result<ImageRef> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)?;
        let facts: FactSet = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: not a fact set: {e}", path.display())))?;
        return Ok(ImageRef::from_facts(facts));
    }
    ImageRef::from_path(path)
}

/// Scores one image pair and applies the acceptance gate.
pub fn cmd_edit_gate(cfg: &RunConfig, factual: &Path, counterfactual: &Path) -> Result<GateReport> {
    cfg.game.validate()?;
    let (a, b) = (load_image(factual)?, load_image(counterfactual)?);
    let scorer = cfg.scorer();
    let scores = scorer.score_pair(&a, &b)?.clamped();
    let params = GateParams::from_config(&cfg.game);
    let gate = gate_triple(&scores, &params)?;
    let label = if a.digest == b.digest {
        Some(FailureLabel::Unchanged)
    } else {
        failure_label(&scores, &gate, &params.labels)
    };
    Ok(GateReport {
        scorer: scorer.name().to_string(),
        scores,
        gate,
        label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoctorLine {
    pub role: String,
    pub endpoint: String,
    pub status: String,
    pub ok: bool,
}

pub fn cmd_doctor(cfg: &RunConfig) -> Result<(Vec<DoctorLine>, i32)> {
    let lines: Vec<DoctorLine> = cfg
        .health_checks()?
        .into_iter()
        .map(|c| DoctorLine {
            role: c.role.to_string(),
            endpoint: c.endpoint.clone().unwrap_or_else(|| "offline stand-in".into()),
            status: match &c.result {
                Ok(()) => "ok".into(),
                Err(e) => e.to_string(),
            },
            ok: c.result.is_ok(),
        })
        .collect();
    let code = if lines.iter().all(|l| l.ok) {
        EXIT_OK
    } else {
        EXIT_FATAL
    };
    Ok((lines, code))
}

/// Item counts per (dataset, protocol) in a report, for quick diffs.
pub fn item_counts(report: &MetricsReport) -> BTreeMap<String, usize> {
    report
        .rows
        .iter()
        .filter(|r| r.track.is_none())
        .map(|r| (format!("{}/{}", r.dataset, r.protocol), r.items))
        .collect()
}
