//! Similarity and naturalness scores consumed by the acceptance gate.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::BackendError;
use crate::http::{join_url, HttpClient, RetryPolicy};
use crate::image::ImageRef;

/// Raw scores for an image pair: two cosines and an FID-like divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub visual_raw: f64,
    pub semantic_raw: f64,
    pub naturalness_raw: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl ScoreTriple {
    pub fn new(visual_raw: f64, semantic_raw: f64, naturalness_raw: f64) -> Self {
        Self {
            visual_raw,
            semantic_raw,
            naturalness_raw,
            flags: Vec::new(),
        }
    }

    /// Forces every component into its declared range, flagging each fix.
    pub fn clamped(mut self) -> Self {
        let fix = |name: &str, v: f64, lo: f64, hi: f64, flags: &mut Vec<String>| -> f64 {
            if v.is_nan() {
                flags.push(format!("{name} was NaN, replaced with {lo}"));
                tracing::warn!(name, "score was NaN");
                return lo;
            }
            if v < lo || v > hi {
                let c = v.clamp(lo, hi);
                flags.push(format!("{name} {v} clamped to {c}"));
                tracing::warn!(name, value = v, "score out of range, clamped");
                return c;
            }
            v
        };
        let mut flags = std::mem::take(&mut self.flags);
        self.visual_raw = fix("visual", self.visual_raw, -1.0, 1.0, &mut flags);
        self.semantic_raw = fix("semantic", self.semantic_raw, -1.0, 1.0, &mut flags);
        self.naturalness_raw = fix("naturalness", self.naturalness_raw, 0.0, f64::MAX, &mut flags);
        self.flags = flags;
        self
    }
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    fn score_pair(&self, a: &ImageRef, b: &ImageRef) -> Result<ScoreTriple, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Deterministic, symmetric scores computed from digests and fact keys.
///
/// Visual similarity is `1 - 2 * hamming(digest_a, digest_b)`. For fact-set
/// images semantic similarity is `2 * jaccard(keys) - 1` and naturalness is 0;
/// otherwise both fall back to the digest distance.
pub fn stub_scores(a: &ImageRef, b: &ImageRef) -> ScoreTriple {
    let h = normalized_hamming(&a.digest, &b.digest);
    let visual = 1.0 - 2.0 * h.min(1.0);
    match (a.facts(), b.facts()) {
        (Some(fa), Some(fb)) => {
            let ka: BTreeSet<&str> = fa.keys().collect();
            let kb: BTreeSet<&str> = fb.keys().collect();
            let union = ka.union(&kb).count();
            let jaccard = if union == 0 {
                1.0
            } else {
                ka.intersection(&kb).count() as f64 / union as f64
            };
            ScoreTriple::new(visual, 2.0 * jaccard - 1.0, 0.0)
        }
        _ => ScoreTriple::new(visual, visual, 100.0 * h),
    }
}

/// Fraction of differing bits between two hex digests. Unequal lengths count
/// the missing tail as differing.
fn normalized_hamming(a: &str, b: &str) -> f64 {
    let (ab, bb) = (a.as_bytes(), b.as_bytes());
    let len = ab.len().max(bb.len());
    if len == 0 {
        return 0.0;
    }
    let nibble = |c: u8| (c as char).to_digit(16).unwrap_or(0) as u8;
    let mut diff = 0u32;
    for i in 0..len {
        match (ab.get(i), bb.get(i)) {
            (Some(x), Some(y)) => diff += (nibble(*x) ^ nibble(*y)).count_ones(),
            _ => diff += 4,
        }
    }
    diff as f64 / (4 * len) as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubScorer;

impl Scorer for StubScorer {
    fn name(&self) -> &str {
        "stub"
    }

    fn score_pair(&self, a: &ImageRef, b: &ImageRef) -> Result<ScoreTriple, BackendError> {
        Ok(stub_scores(a, b))
    }
}

/// Client for the scoring service wire protocol.
#[derive(Debug, Clone)]
pub struct HttpScorer {
    base: String,
    client: HttpClient,
}

impl HttpScorer {
    pub fn new(base: impl Into<String>, client: HttpClient) -> Self {
        Self {
            base: base.into(),
            client,
        }
    }

    pub fn with_defaults(base: impl Into<String>) -> Self {
        Self::new(
            base,
            HttpClient::new(Duration::from_secs(60), RetryPolicy::default(), 4),
        )
    }

    fn score(&self, path: &str, body: serde_json::Value) -> Result<f64, BackendError> {
        let url = join_url(&self.base, path);
        let (reply, _) = self.client.post_json(&url, &body, &[]);
        let reply = reply?;
        reply
            .get("score")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| BackendError::Protocol {
                endpoint: url,
                message: format!("expected {{\"score\": number}}, got {reply}"),
            })
    }
}

impl Scorer for HttpScorer {
    fn name(&self) -> &str {
        &self.base
    }

    fn score_pair(&self, a: &ImageRef, b: &ImageRef) -> Result<ScoreTriple, BackendError> {
        let ea = a.to_base64()?;
        let eb = b.to_base64()?;
        let pair = json!({ "image_a": ea, "image_b": eb });
        let visual = self.score("/similarity/visual", pair.clone())?;
        let semantic = self.score("/similarity/semantic", pair)?;
        let naturalness = self.score("/naturalness", json!({ "image": eb }))?;
        let mut t = ScoreTriple::new(visual, semantic, naturalness).clamped();
        t.flags.push("naturalness is a single-image proxy".into());
        Ok(t)
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
    use crate::image::FactSet;
    use crate::mockhttp::{MockResponse, MockServer};

    fn facts(pairs: &[(&str, &str)]) -> ImageRef {
        ImageRef::from_facts(FactSet::uniform(pairs.iter().copied()))
    }

    #[test]
    fn identical_handles_score_perfectly() {
        let a = facts(&[("cat.count", "2")]);
        let t = stub_scores(&a, &a.clone());
        assert_eq!((t.visual_raw, t.semantic_raw, t.naturalness_raw), (1.0, 1.0, 0.0));
    }

    #[test]
    fn disjoint_keys_give_minus_one() {
        let t = stub_scores(&facts(&[("cat.count", "2")]), &facts(&[("dog.count", "2")]));
        assert_eq!(t.semantic_raw, -1.0);
    }

    #[test]
    fn distinct_bytes_are_less_similar() {
        let a = ImageRef::from_bytes(vec![1, 2, 3]);
        let b = ImageRef::from_bytes(vec![9, 9, 9, 9]);
        let t = stub_scores(&a, &b);
        assert!(t.visual_raw < 1.0);
        assert!(t.naturalness_raw > 0.0);
    }

    #[test]
    fn clamping_flags_out_of_range_values() {
        let t = ScoreTriple::new(1.0000001, -3.0, -0.5).clamped();
        assert_eq!((t.visual_raw, t.semantic_raw, t.naturalness_raw), (1.0, -1.0, 0.0));
        assert_eq!(t.flags.len(), 3);
    }

    #[test]
    fn http_scorer_speaks_the_wire_protocol() {
        let server = MockServer::start(|req| {
            let score = match req.path.as_str() {
                "/similarity/visual" => 0.5,
                "/similarity/semantic" => 1.2,
                "/naturalness" => 12.0,
                _ => return MockResponse::status(404, "no"),
            };
            MockResponse::json(200, &json!({ "score": score }))
        });
        let scorer = HttpScorer::with_defaults(server.base_url());
        let a = ImageRef::from_bytes(vec![1]);
        let b = ImageRef::from_bytes(vec![2]);
        let t = scorer.score_pair(&a, &b).unwrap();
        assert_eq!(t.visual_raw, 0.5);
        assert_eq!(t.semantic_raw, 1.0);
        assert_eq!(t.naturalness_raw, 12.0);
        assert!(t.flags.iter().any(|f| f.contains("semantic")));
        let reqs = server.requests();
        assert_eq!(reqs.len(), 3);
        assert_eq!(reqs[0].json()["image_a"], "AQ==");
        assert_eq!(reqs[2].json()["image"], "Ag==");
    }

    #[test]
    fn malformed_reply_is_a_protocol_error() {
        let server = MockServer::start(|_| MockResponse::json(200, &json!({ "value": 1 })));
        let scorer = HttpScorer::with_defaults(server.base_url());
        let a = ImageRef::from_bytes(vec![1]);
        let err = scorer.score_pair(&a, &a).unwrap_err();
        assert!(matches!(err, BackendError::Protocol { .. }));
    }

    #[test]
    fn health_checks_healthz() {
        let server = MockServer::start(|req| {
            if req.path == "/healthz" {
                MockResponse::status(200, "ok")
            } else {
                MockResponse::status(404, "")
            }
        });
        HttpScorer::with_defaults(server.base_url()).health().unwrap();
    }
}
