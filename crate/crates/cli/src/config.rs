//! TOML run configuration with command-line overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use mug_core::agents::{
    AgentBackend, AgentPool, ChatClient, DecodeParams, ModelProfile, RemoteAgentBackend, RemoteClassifier,
    RemoteInstructions, RemoteSceneExtractor, ScriptedAgent, ScriptedConfig,
};
use mug_core::bench::{DatasetFormat, Protocol, RunOptions};
use mug_core::cfquestion::{EditBackend, FactSetEditor, GenerationBackends, HttpEditor, TemplateInstructions};
use mug_core::engine::GameBackends;
use mug_core::http::{HttpClient, RetryPolicy};
use mug_core::scoring::{HttpScorer, Scorer, StubScorer};
use mug_core::{Error, GameConfig, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub game: GameConfig,
    pub dataset: DatasetSection,
    pub run: RunSection,
    pub agents: AgentsSection,
    pub scoring: EndpointSection,
    pub edit: EndpointSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub format: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            path: None,
            format: "normalized-lines".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// A protocol name or "all".
    pub protocol: String,
    pub out: PathBuf,
    pub workers: usize,
    /// Give the multi-agent baselines the same corrupted seat MUG gets.
    pub corrupt_seat: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            protocol: "mug".into(),
            out: PathBuf::from("out"),
            workers: 4,
            corrupt_seat: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsSection {
    pub backend: AgentKind,
    /// OpenAI-compatible base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: Option<String>,
    /// A known profile (`qwen2.5vl-7b`, `internvl3-14b`) or a raw model id.
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub multimodal: bool,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub scripted: ScriptedConfig,
}

impl Default for AgentsSection {
    fn default() -> Self {
        Self {
            backend: AgentKind::Scripted,
            endpoint: None,
            model: "qwen2.5vl-7b".into(),
            api_key_env: None,
            multimodal: true,
            max_in_flight: 4,
            timeout_secs: 120,
            scripted: ScriptedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointSection {
    pub endpoint: Option<String>,
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub protocol: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub agent_endpoint: Option<String>,
    pub scoring_endpoint: Option<String>,
    pub edit_endpoint: Option<String>,
    /// `section.key=value` pairs, values in TOML syntax.
    pub set: Vec<String>,
}

/// Line number (1-based) of a byte offset.
pub fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn toml_error(path: &Path, text: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map(|s| line_of(text, s.start));
    let message = e.message();
    match line {
        Some(line) => Error::Config(format!("{}:{line}: {message}", path.display())),
        None => Error::Config(format!("{}: {message}", path.display())),
    }
}

fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut path: Vec<&str> = key.trim().split('.').collect();
    let last = path
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Config("empty --set key".into()))?;
    let mut cur = table;
    for part in path {
        cur = cur
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads the file (if any), applies `--set` pairs and then typed flags.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| toml_error(p, &text, &e))?
            }
            None => toml::Table::new(),
        };
        for s in &overrides.set {
            apply_set(&mut table, s)?;
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))?;
        if let Some(base) = path.and_then(Path::parent) {
            if let Some(p) = cfg.dataset.path.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.dataset {
            self.dataset.path = Some(v.clone());
        }
        if let Some(v) = &o.format {
            self.dataset.format = v.clone();
        }
        if let Some(v) = &o.protocol {
            self.run.protocol = v.clone();
        }
        if let Some(v) = o.seed {
            self.game.rng_seed = v;
        }
        if let Some(v) = &o.out {
            self.run.out = v.clone();
        }
        if let Some(v) = o.workers {
            self.run.workers = v;
        }
        if let Some(v) = &o.agent_endpoint {
            self.agents.endpoint = Some(v.clone());
        }
        if let Some(v) = &o.scoring_endpoint {
            self.scoring.endpoint = Some(v.clone());
        }
        if let Some(v) = &o.edit_endpoint {
            self.edit.endpoint = Some(v.clone());
        }
    }

    pub fn protocols(&self) -> Result<Vec<Protocol>> {
        if self.run.protocol.eq_ignore_ascii_case("all") {
            return Ok(Protocol::ALL.to_vec());
        }
        Ok(vec![self.run.protocol.parse()?])
    }

    pub fn format(&self) -> Result<DatasetFormat> {
        self.dataset.format.parse()
    }

    /// Checks everything that can be checked without touching the network.
    pub fn validate(&self) -> Result<()> {
        self.game.validate()?;
        self.agents.scripted.validate()?;
        self.protocols()?;
        self.format()?;
        match &self.dataset.path {
            None => return Err(Error::Config("no dataset path given".into())),
            Some(p) if !p.is_file() => {
                return Err(Error::Config(format!("dataset {} does not exist", p.display())));
            }
            _ => {}
        }
        if self.run.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.agents.backend == AgentKind::Remote && self.agents.endpoint.is_none() {
            return Err(Error::Config("remote agents need agents.endpoint".into()));
        }
        Ok(())
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            workers: self.run.workers,
            corrupt_seat: self.run.corrupt_seat,
            ..RunOptions::default()
        }
    }

    fn chat_client(&self) -> Option<ChatClient> {
        let endpoint = self.agents.endpoint.as_ref()?;
        let (model_id, decode) = match ModelProfile::lookup(&self.agents.model) {
            Some(p) => (p.model_id.to_string(), p.decode),
            None => (self.agents.model.clone(), DecodeParams::default()),
        };
        let http = HttpClient::new(
            Duration::from_secs(self.agents.timeout_secs),
            RetryPolicy::default(),
            self.agents.max_in_flight,
        );
        let mut client = ChatClient::new(endpoint.clone(), model_id, decode, http);
        if let Some(var) = &self.agents.api_key_env {
            client = client.with_api_key_env(var.clone());
        }
        Some(client)
    }

    pub fn scorer(&self) -> Arc<dyn Scorer> {
        match &self.scoring.endpoint {
            Some(e) => Arc::new(HttpScorer::with_defaults(e.clone())),
            None => Arc::new(StubScorer),
        }
    }

    pub fn backends(&self) -> Result<GameBackends> {
        let editor: Arc<dyn EditBackend> = match &self.edit.endpoint {
            Some(e) => Arc::new(HttpEditor::with_defaults(e.clone())),
            None => Arc::new(FactSetEditor),
        };
        let mut generation = GenerationBackends {
            editor,
            scorer: self.scorer(),
            instructions: Arc::new(TemplateInstructions),
            classifier: None,
        };
        match self.agents.backend {
            AgentKind::Scripted => Ok(GameBackends::new(
                AgentPool::uniform(Arc::new(ScriptedAgent::new(self.agents.scripted))),
                generation,
            )),
            AgentKind::Remote => {
                let client = self
                    .chat_client()
                    .ok_or_else(|| Error::Config("remote agents need agents.endpoint".into()))?;
                generation.instructions = Arc::new(RemoteInstructions { client: client.clone() });
                generation.classifier = Some(Arc::new(RemoteClassifier { client: client.clone() }));
                let agent: Arc<dyn AgentBackend> =
                    Arc::new(RemoteAgentBackend::new(client.clone(), self.agents.multimodal));
                let mut b = GameBackends::new(AgentPool::uniform(agent), generation);
                if self.agents.multimodal {
                    b.scenes = Some(RemoteSceneExtractor { client });
                }
                Ok(b)
            }
        }
    }

    /// Backends that must answer before a run starts: (role, endpoint, check).
    pub fn health_checks(&self) -> Result<Vec<HealthCheck>> {
        let b = self.backends()?;
        Ok(vec![
            HealthCheck {
                role: "agents",
                endpoint: self.agents.endpoint.clone(),
                result: match self.agents.backend {
                    AgentKind::Scripted => Ok(()),
                    AgentKind::Remote => b.agents.for_agent(mug_core::AgentId(0)).health(),
                },
            },
            HealthCheck {
                role: "scoring",
                endpoint: self.scoring.endpoint.clone(),
                result: b.generation.scorer.health(),
            },
            HealthCheck {
                role: "edit",
                endpoint: self.edit.endpoint.clone(),
                result: b.generation.editor.health(),
            },
        ])
    }
}

#[derive(Debug)]
pub struct HealthCheck {
    pub role: &'static str,
    /// `None` for an offline stand-in.
    pub endpoint: Option<String>,
    pub result: std::result::Result<(), mug_core::BackendError>,
}
