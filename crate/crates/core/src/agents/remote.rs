use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::extract::parse_peer_scores;
use super::templates::{render_prompt, template, TemplateName};
use super::{AgentBackend, AgentReply, AgentRequest, Task};
use crate::cfquestion::{ClassifierFallback, InstructionRequest, InstructionSource, SceneDescription};
use crate::error::{BackendError, Error, Result};
use crate::http::{join_url, HttpClient, RetryPolicy};
use crate::image::{ImageRef, Locator};
use crate::model::{AgentId, FactorScores, ResponseKind, Role};

/// Sampling settings sent with every completion request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
}

impl DecodeParams {
    pub const QWEN25VL_7B: DecodeParams = DecodeParams {
        temperature: 0.2,
        top_p: 0.001,
        top_k: Some(1),
        max_tokens: 2048,
    };

    pub const INTERNVL3_14B: DecodeParams = DecodeParams {
        temperature: 1.0,
        top_p: 1.0,
        top_k: Some(50),
        max_tokens: 4096,
    };
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self::QWEN25VL_7B
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelProfile {
    pub name: &'static str,
    pub model_id: &'static str,
    pub decode: DecodeParams,
}

impl ModelProfile {
    pub const ALL: [ModelProfile; 2] = [
        ModelProfile {
            name: "qwen2.5vl-7b",
            model_id: "Qwen/Qwen2.5-VL-7B-Instruct",
            decode: DecodeParams::QWEN25VL_7B,
        },
        ModelProfile {
            name: "internvl3-14b",
            model_id: "OpenGVLab/InternVL3-14B",
            decode: DecodeParams::INTERNVL3_14B,
        },
    ];

    pub fn lookup(name: &str) -> Option<ModelProfile> {
        Self::ALL.into_iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }
}

fn mime_of(data: &[u8]) -> &'static str {
    match data {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "application/octet-stream",
    }
}

fn image_part(image: &ImageRef) -> Result<ContentPart, BackendError> {
    let url = match &image.locator {
        Locator::Url { url } => url.clone(),
        _ => {
            let data = image.load_bytes()?;
            let encoded = base64::Engine::encode(&base64::engine::general_purpose::STANDARD, &data);
            format!("data:{};base64,{encoded}", mime_of(&data))
        }
    };
    Ok(ContentPart::ImageUrl {
        image_url: ImageUrl { url },
    })
}

/// Text stand-in for an image when the endpoint cannot take image parts.
pub fn image_description(image: &ImageRef) -> String {
    match image.facts() {
        Some(f) if !f.is_empty() => {
            let claims: Vec<String> = f.facts().iter().map(|(k, v)| format!("{k} is {v}")).collect();
            format!("Image description: {}.", claims.join("; "))
        }
        Some(_) => "Image description: an empty scene.".into(),
        None => format!("Image description unavailable (image {}).", image.short()),
    }
}

/// OpenAI-style chat-completion client for one model on one endpoint.
#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: String,
    model_id: String,
    pub decode: DecodeParams,
    /// Environment variable holding the bearer token, read per request.
    api_key_env: Option<String>,
    http: HttpClient,
}

impl ChatClient {
    pub fn new(
        endpoint: impl Into<String>,
        model_id: impl Into<String>,
        decode: DecodeParams,
        http: HttpClient,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            decode,
            api_key_env: None,
            http,
        }
    }

    /// Default transport: 120 s timeout, three attempts, four requests in flight.
    pub fn with_defaults(endpoint: impl Into<String>, model_id: impl Into<String>, decode: DecodeParams) -> Self {
        Self::new(
            endpoint,
            model_id,
            decode,
            HttpClient::new(Duration::from_secs(120), RetryPolicy::default(), 4),
        )
    }

    pub fn with_api_key_env(mut self, var: impl Into<String>) -> Self {
        self.api_key_env = Some(var.into());
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn max_in_flight(&self) -> usize {
        self.http.max_in_flight()
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        let mut body = json!({
            "model": self.model_id,
            "messages": messages,
            "temperature": self.decode.temperature,
            "top_p": self.decode.top_p,
            "max_tokens": self.decode.max_tokens,
        });
        if let Some(k) = self.decode.top_k {
            body["top_k"] = json!(k);
        }
        body
    }

    /// Sends the conversation with `images` attached to the last user
    /// message. Returns the assistant text and the number of attempts.
    pub fn complete(&self, messages: &[ChatMessage], images: &[&ImageRef]) -> (Result<String, BackendError>, u32) {
        let url = join_url(&self.endpoint, "/chat/completions");
        if messages.is_empty() {
            return (
                Err(BackendError::Protocol {
                    endpoint: url,
                    message: "no messages to send".into(),
                }),
                0,
            );
        }
        let mut messages = messages.to_vec();
        if !images.is_empty() {
            let parts: Result<Vec<ContentPart>, BackendError> = images.iter().map(|i| image_part(i)).collect();
            let parts = match parts {
                Ok(p) => p,
                Err(e) => return (Err(e), 0),
            };
            let target = messages
                .iter()
                .rposition(|m| m.role == "user")
                .unwrap_or(messages.len() - 1);
            messages[target].content.extend(parts);
        }
        let mut headers = Vec::new();
        if let Some(var) = &self.api_key_env {
            if let Ok(key) = std::env::var(var) {
                headers.push(("Authorization".to_string(), format!("Bearer {key}")));
            }
        }
        let (reply, attempts) = self.http.post_json(&url, &self.request_body(&messages), &headers);
        (reply.and_then(|v| assistant_text(&url, &v)), attempts)
    }

    pub fn health(&self) -> Result<(), BackendError> {
        let url = join_url(&self.endpoint, "/models");
        match self.http.get_status(&url)? {
            200 => Ok(()),
            status => Err(BackendError::Status {
                endpoint: url,
                status,
                body: String::new(),
            }),
        }
    }
}

fn assistant_text(url: &str, reply: &Value) -> Result<String, BackendError> {
    let content = &reply["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(BackendError::Protocol {
            endpoint: url.to_string(),
            message: "missing choices[0].message.content".into(),
        }),
    }
}

/// One-shot completion with a fresh default client.
pub fn remote_complete(
    endpoint: &str,
    model_id: &str,
    messages: &[ChatMessage],
    images: &[&ImageRef],
    decode: DecodeParams,
) -> Result<String, BackendError> {
    ChatClient::with_defaults(endpoint, model_id, decode)
        .complete(messages, images)
        .0
}

/// Agent backend that renders the role prompts and sends them to a chat
/// endpoint.
#[derive(Debug, Clone)]
pub struct RemoteAgentBackend {
    client: ChatClient,
    name: String,
    /// Whether the endpoint accepts image parts.
    pub multimodal: bool,
}

impl RemoteAgentBackend {
    pub fn new(client: ChatClient, multimodal: bool) -> Self {
        let name = format!("{}@{}", client.model_id(), client.endpoint());
        Self {
            client,
            name,
            multimodal,
        }
    }

    pub fn prompt(&self, req: &AgentRequest<'_>) -> Result<String> {
        let question = req.question.render();
        let own = |kind: ResponseKind| -> String {
            let from_current = req
                .current
                .iter()
                .find(|r| r.agent_id == req.agent_id && r.kind == kind)
                .map(|r| r.text.clone());
            from_current
                .or_else(|| {
                    req.history.last().and_then(|round| {
                        let list = match kind {
                            ResponseKind::Defense => &round.defenses,
                            _ => &round.responses,
                        };
                        list.iter().find(|r| r.agent_id == req.agent_id).map(|r| r.text.clone())
                    })
                })
                .filter(|t| !t.is_empty())
                .unwrap_or_else(|| "None".into())
        };
        let others = || {
            let lines: Vec<String> = req
                .current
                .iter()
                .filter(|r| r.agent_id != req.agent_id && !r.abstained)
                .map(|r| format!("{}: {}", r.agent_id, r.text))
                .collect();
            if lines.is_empty() {
                "None".to_string()
            } else {
                lines.join("\n\n")
            }
        };
        let mut vars: BTreeMap<&str, String> = BTreeMap::new();
        vars.insert("question", question);
        let name = match (req.task, req.role) {
            (Task::Reason, Role::Debater) => {
                vars.insert("defense", own(ResponseKind::Defense));
                vars.insert("performance_info", performance_info(req.performance));
                TemplateName::NormalReasoning
            }
            (Task::Reason, Role::Undercover) => {
                vars.insert("reasoning", own(ResponseKind::Reasoning));
                vars.insert("performance_info", performance_info(req.performance));
                TemplateName::CounterfactualReasoning
            }
            (Task::Defend, role) => {
                vars.insert("reasoning", own(ResponseKind::Reasoning));
                vars.insert("performance_info", performance_info(req.performance));
                vars.insert("others_points", others());
                if role == Role::Debater {
                    TemplateName::NormalDefense
                } else {
                    TemplateName::CounterfactualDefense
                }
            }
            (Task::Summarize, _) => {
                vars.insert("others_points", others());
                vars.insert("history", history_digest(req));
                TemplateName::Summarization
            }
            (Task::Synthesize | Task::Judge, _) => {
                vars.insert("others_points", others());
                TemplateName::FinalAnswer
            }
            (Task::Direct, _) => TemplateName::DirectAnswer,
            (Task::Critique, _) => {
                vars.insert("reasoning", req.draft.unwrap_or_default().to_string());
                TemplateName::Critique
            }
            (Task::Revise, _) => {
                vars.insert("reasoning", req.draft.unwrap_or_default().to_string());
                vars.insert("feedback", req.feedback.unwrap_or_default().to_string());
                TemplateName::Revise
            }
        };
        render_prompt(&template(name), &vars)
    }
}

/// Scores an agent received last round, one line per voter.
fn performance_info(perf: Option<&BTreeMap<AgentId, FactorScores>>) -> String {
    match perf {
        Some(p) if !p.is_empty() => p
            .iter()
            .map(|(voter, s)| {
                format!(
                    "{voter} scored you inconsistency {:.1}, deviation {:.1}, detail inaccuracy {:.1}, suspicion {:.1}",
                    s.0[0], s.0[1], s.0[2], s.0[3]
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
        _ => "No evaluations yet.".into(),
    }
}

fn history_digest(req: &AgentRequest<'_>) -> String {
    let mut out = Vec::new();
    for round in req.history.rounds() {
        for r in &round.responses {
            if !r.abstained {
                out.push(format!("Round {} {}: {}", round.round, r.agent_id, r.text));
            }
        }
        if let Some(id) = round.eliminated_id {
            out.push(format!("Round {}: {id} was eliminated.", round.round));
        }
    }
    if out.is_empty() {
        "None".into()
    } else {
        out.join("\n")
    }
}

impl AgentBackend for RemoteAgentBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, req: &AgentRequest<'_>) -> Result<AgentReply, BackendError> {
        let prompt = self.prompt(req).map_err(|e| BackendError::Unsupported(e.to_string()))?;
        let needs_image = !matches!(req.task, Task::Synthesize | Task::Judge | Task::Critique);
        let mut warnings = Vec::new();
        let text = if needs_image && (self.multimodal && !req.image.is_fact_set()) {
            self.client.complete(&[ChatMessage::user(prompt)], &[req.image]).0?
        } else if needs_image {
            if !req.image.is_fact_set() {
                warnings.push("degraded-modality".to_string());
            }
            let prompt = format!("{}\n\n{prompt}", image_description(req.image));
            self.client.complete(&[ChatMessage::user(prompt)], &[]).0?
        } else {
            self.client.complete(&[ChatMessage::user(prompt)], &[]).0?
        };
        let mut reply = AgentReply {
            text,
            peer_scores: None,
            warnings,
        };
        if req.task == Task::Defend {
            let (scores, w) = parse_peer_scores(&reply.text, req.candidates);
            reply.peer_scores = Some(scores);
            reply.warnings.extend(w);
        }
        Ok(reply)
    }

    fn max_in_flight(&self) -> usize {
        self.client.max_in_flight()
    }

    fn health(&self) -> Result<(), BackendError> {
        self.client.health()
    }
}

/// Edit instructions from a chat model, prompted with the instruction template.
#[derive(Debug, Clone)]
pub struct RemoteInstructions {
    pub client: ChatClient,
}

impl InstructionSource for RemoteInstructions {
    fn propose(&self, req: &InstructionRequest<'_>) -> Result<String, BackendError> {
        let mut question = req.prompt.to_string();
        if !req.options.is_empty() {
            question.push_str(&format!("\nOptions: {}", req.options.join(", ")));
        }
        if !req.targets.is_empty() {
            let t: Vec<String> = req
                .targets
                .iter()
                .map(|t| match (&t.attribute, &t.value) {
                    (Some(a), Some(v)) => format!("{} {a}={v}", t.label),
                    _ => t.label.clone(),
                })
                .collect();
            question.push_str(&format!("\nTargets: {}", t.join(", ")));
        }
        if let Some(prev) = req.previous_rejection {
            question.push_str(&format!("\nThe previous instruction was rejected: {prev}"));
        }
        let vars = BTreeMap::from([("question", question)]);
        let prompt = render_prompt(&template(TemplateName::EditInstruction), &vars)
            .map_err(|e| BackendError::Unsupported(e.to_string()))?;
        self.client.complete(&[ChatMessage::user(prompt)], &[]).0
    }
}

/// Edit-type classification fallback backed by a chat model.
#[derive(Debug, Clone)]
pub struct RemoteClassifier {
    pub client: ChatClient,
}

impl ClassifierFallback for RemoteClassifier {
    fn classify(&self, prompt: &str) -> Result<String, BackendError> {
        let vars = BTreeMap::from([("question", prompt.to_string())]);
        let prompt = render_prompt(&template(TemplateName::EditTypeFallback), &vars)
            .map_err(|e| BackendError::Unsupported(e.to_string()))?;
        self.client.complete(&[ChatMessage::user(prompt)], &[]).0
    }
}

/// Scene graphs for pixel images, extracted by a multimodal chat model.
#[derive(Debug, Clone)]
pub struct RemoteSceneExtractor {
    pub client: ChatClient,
}

impl RemoteSceneExtractor {
    pub fn extract(&self, question: &str, image: &ImageRef) -> Result<SceneDescription> {
        let vars = BTreeMap::from([("question", question.to_string())]);
        let prompt = render_prompt(&template(TemplateName::SceneExtraction), &vars)?;
        let text = self.client.complete(&[ChatMessage::user(prompt)], &[image]).0?;
        let start = text.find('{');
        let end = text.rfind('}');
        let json = match (start, end) {
            (Some(s), Some(e)) if e > s => &text[s..=e],
            _ => return Err(Error::Invalid(format!("scene reply has no JSON object: {text:?}"))),
        };
        Ok(serde_json::from_str(json)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::FactSet;
    use crate::mockhttp::{MockResponse, MockServer};
    use crate::model::{History, QuestionView};
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    fn echo(text: &str) -> Value {
        json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] })
    }

    fn client(server: &MockServer, decode: DecodeParams) -> ChatClient {
        let retry = RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        };
        ChatClient::new(
            server.base_url(),
            "m",
            decode,
            HttpClient::new(Duration::from_secs(5), retry, 4),
        )
    }

    #[test]
    fn echo_round_trip() {
        let server = MockServer::start(|_| MockResponse::json(200, &echo("OK")));
        let (text, attempts) = client(&server, DecodeParams::default()).complete(&[ChatMessage::user("hi")], &[]);
        assert_eq!(text.unwrap(), "OK");
        assert_eq!(attempts, 1);
        assert_eq!(server.requests()[0].path, "/chat/completions");
    }

    #[test]
    fn retries_server_errors() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let server = MockServer::start(move |_| {
            if c.fetch_add(1, Ordering::SeqCst) < 2 {
                MockResponse::status(500, "busy")
            } else {
                MockResponse::json(200, &echo("fine"))
            }
        });
        let (text, attempts) = client(&server, DecodeParams::default()).complete(&[ChatMessage::user("hi")], &[]);
        assert_eq!(text.unwrap(), "fine");
        assert_eq!(attempts, 3);
    }

    #[test]
    fn permanent_errors_carry_status_and_excerpt() {
        let server = MockServer::start(|_| MockResponse::status(401, "bad key"));
        let (err, attempts) = client(&server, DecodeParams::default()).complete(&[ChatMessage::user("hi")], &[]);
        assert_eq!(attempts, 1);
        match err.unwrap_err() {
            BackendError::Status { status, body, .. } => {
                assert_eq!(status, 401);
                assert_eq!(body, "bad key");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decode_profile_reaches_the_wire() {
        let server = MockServer::start(|_| MockResponse::json(200, &echo("x")));
        let profile = ModelProfile::lookup("qwen2.5vl-7b").unwrap();
        client(&server, profile.decode)
            .complete(
                &[ChatMessage::user("hi")],
                &[&ImageRef::from_bytes(vec![0x89, b'P', b'N', b'G'])],
            )
            .0
            .unwrap();
        let body = server.requests()[0].json();
        assert_eq!(body["temperature"], 0.2);
        assert_eq!(body["top_p"], 0.001);
        assert_eq!(body["max_tokens"], 2048);
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts[1]["type"], "image_url");
        assert!(parts[1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert_eq!(ModelProfile::lookup("InternVL3-14B").unwrap().decode.max_tokens, 4096);
    }

    #[test]
    fn defense_without_peer_scores_is_neutral_and_flagged() {
        let server = MockServer::start(|_| MockResponse::json(200, &echo("Answer: A\nAnalysis: trust me")));
        let backend = RemoteAgentBackend::new(client(&server, DecodeParams::default()), true);
        let q = QuestionView {
            prompt_text: "Q".into(),
            options: vec!["x".into(), "y".into()],
            focus_key: None,
        };
        let img = ImageRef::from_bytes(vec![1, 2, 3]);
        let h = History::default();
        let mut req = AgentRequest::new(Task::Defend, AgentId(0), Role::Debater, &q, &img, &h);
        let cands = [AgentId(1), AgentId(2)];
        req.candidates = &cands;
        let reply = backend.respond(&req).unwrap();
        assert_eq!(reply.warnings.len(), 1);
        assert!(reply.peer_scores.unwrap().values().all(|s| *s == FactorScores::NEUTRAL));
        let sent = server.requests()[0].json();
        let text = sent["messages"][0]["content"][0]["text"].as_str().unwrap();
        assert!(text.contains("Defending your position with peer"));
    }

    #[test]
    fn fact_set_images_travel_as_text() {
        let server = MockServer::start(|_| MockResponse::json(200, &echo("Answer: B")));
        let backend = RemoteAgentBackend::new(client(&server, DecodeParams::default()), false);
        let q = QuestionView {
            prompt_text: "What color?".into(),
            options: vec![],
            focus_key: None,
        };
        let img = ImageRef::from_facts(FactSet::uniform([("girl.hair", "red")]));
        let h = History::default();
        let req = AgentRequest::new(Task::Reason, AgentId(0), Role::Undercover, &q, &img, &h);
        backend.respond(&req).unwrap();
        let sent = server.requests()[0].json();
        let text = sent["messages"][0]["content"][0]["text"].as_str().unwrap();
        assert!(text.starts_with("Image description: girl.hair is red."));
        assert!(text.contains("REASONING PHASE - Counterfactual Agent"));
    }

    #[test]
    fn pixel_images_on_text_endpoints_are_degraded() {
        let server = MockServer::start(|_| MockResponse::json(200, &echo("Answer: B")));
        let backend = RemoteAgentBackend::new(client(&server, DecodeParams::default()), false);
        let q = QuestionView {
            prompt_text: "Q".into(),
            options: vec![],
            focus_key: None,
        };
        let img = ImageRef::from_bytes(vec![1]);
        let h = History::default();
        let req = AgentRequest::new(Task::Direct, AgentId(0), Role::Debater, &q, &img, &h);
        assert_eq!(backend.respond(&req).unwrap().warnings, vec!["degraded-modality"]);
    }

    #[test]
    fn api_key_is_read_from_the_environment() {
        let server = MockServer::start(|_| MockResponse::json(200, &echo("x")));
        std::env::set_var("MUG_TEST_CHAT_KEY", "sekrit");
        client(&server, DecodeParams::default())
            .with_api_key_env("MUG_TEST_CHAT_KEY")
            .complete(&[ChatMessage::user("hi")], &[])
            .0
            .unwrap();
        let req = &server.requests()[0];
        assert_eq!(req.header("authorization"), Some("Bearer sekrit"));
    }
}
