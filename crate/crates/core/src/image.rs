//! Content-addressed image handles.
//!
//! An [`ImageRef`] is a digest plus a locator. Real games point at files or
//! URLs; scripted games use a [`FactSet`] as the "image", so the same engine
//! code runs against both.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BackendError, Error, Result};

/// Structured stand-in for an image: `label.attribute -> value` facts with a
/// salience weight per key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFactSet")]
pub struct FactSet {
    facts: BTreeMap<String, String>,
    salience: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct RawFactSet {
    facts: BTreeMap<String, String>,
    #[serde(default)]
    salience: BTreeMap<String, f64>,
}

impl TryFrom<RawFactSet> for FactSet {
    type Error = Error;

    fn try_from(raw: RawFactSet) -> Result<Self> {
        let mut salience = raw.salience;
        for key in raw.facts.keys() {
            salience.entry(key.clone()).or_insert(1.0);
        }
        FactSet::new(raw.facts, salience)
    }
}

impl FactSet {
    pub fn new(facts: BTreeMap<String, String>, salience: BTreeMap<String, f64>) -> Result<Self> {
        for key in facts.keys() {
            match salience.get(key) {
                Some(s) if (0.0..=1.0).contains(s) => {}
                Some(s) => {
                    return Err(Error::Invalid(format!(
                        "salience {s} for fact {key:?} is outside [0, 1]"
                    )))
                }
                None => return Err(Error::Invalid(format!("fact {key:?} has no salience"))),
            }
        }
        if let Some(extra) = salience.keys().find(|k| !facts.contains_key(*k)) {
            return Err(Error::Invalid(format!("salience given for unknown fact {extra:?}")));
        }
        Ok(Self { facts, salience })
    }

    /// Facts with salience 1 everywhere.
    pub fn uniform<K, V, I>(facts: I) -> Self
    where
        K: Into<String>,
        V: Into<String>,
        I: IntoIterator<Item = (K, V)>,
    {
        let facts: BTreeMap<String, String> = facts.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        let salience = facts.keys().map(|k| (k.clone(), 1.0)).collect();
        Self { facts, salience }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.facts.get(key).map(String::as_str)
    }

    pub fn salience(&self, key: &str) -> f64 {
        self.salience.get(key).copied().unwrap_or(0.0)
    }

    pub fn total_salience(&self) -> f64 {
        self.salience.values().sum()
    }

    pub fn facts(&self) -> &BTreeMap<String, String> {
        &self.facts
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.facts.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Sets a fact, keeping an existing salience or defaulting to 1.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        self.salience.entry(key.clone()).or_insert(1.0);
        self.facts.insert(key, value.into());
    }

    /// Moves a fact to a new key, keeping its value and salience.
    pub fn rename(&mut self, from: &str, to: impl Into<String>) {
        let to = to.into();
        if let Some(v) = self.facts.remove(from) {
            let s = self.salience.remove(from).unwrap_or(1.0);
            self.facts.insert(to.clone(), v);
            self.salience.insert(to, s);
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.salience.remove(key);
        self.facts.remove(key)
    }

    /// Canonical byte encoding used for digests and wire transport.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("fact sets always serialize")
    }
}

/// Where the bytes behind an image handle live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Locator {
    Facts {
        facts: FactSet,
    },
    Path {
        path: PathBuf,
    },
    Url {
        url: String,
    },
    Bytes {
        #[serde(with = "b64")]
        data: Vec<u8>,
    },
}

/// Opaque, content-addressed image handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub digest: String,
    pub locator: Locator,
}

impl ImageRef {
    pub fn from_facts(facts: FactSet) -> Self {
        let digest = sha256_hex(&facts.canonical_bytes());
        Self {
            digest,
            locator: Locator::Facts { facts },
        }
    }

    pub fn from_bytes(data: Vec<u8>) -> Self {
        Self {
            digest: sha256_hex(&data),
            locator: Locator::Bytes { data },
        }
    }

    /// Hashes the file contents; fails if the file cannot be read.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path)?;
        Ok(Self {
            digest: sha256_hex(&data),
            locator: Locator::Path {
                path: path.to_path_buf(),
            },
        })
    }

    /// URLs are addressed by the locator string, since fetching is deferred.
    pub fn from_url(url: impl Into<String>) -> Self {
        let url = url.into();
        Self {
            digest: sha256_hex(url.as_bytes()),
            locator: Locator::Url { url },
        }
    }

    pub fn facts(&self) -> Option<&FactSet> {
        match &self.locator {
            Locator::Facts { facts } => Some(facts),
            _ => None,
        }
    }

    pub fn is_fact_set(&self) -> bool {
        matches!(self.locator, Locator::Facts { .. })
    }

    /// Resolves the handle to raw bytes.
    pub fn load_bytes(&self) -> Result<Vec<u8>, BackendError> {
        match &self.locator {
            Locator::Facts { facts } => Ok(facts.canonical_bytes()),
            Locator::Bytes { data } => Ok(data.clone()),
            Locator::Path { path } => std::fs::read(path).map_err(|e| BackendError::Transport {
                endpoint: path.display().to_string(),
                message: e.to_string(),
            }),
            Locator::Url { url } => {
                let transport = |e: ureq::Error| BackendError::Transport {
                    endpoint: url.clone(),
                    message: e.to_string(),
                };
                let mut response = ureq::get(url).call().map_err(transport)?;
                response.body_mut().read_to_vec().map_err(transport)
            }
        }
    }

    pub fn to_base64(&self) -> Result<String, BackendError> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.load_bytes()?))
    }

    /// Short form used in logs and prompts.
    pub fn short(&self) -> &str {
        &self.digest[..self.digest.len().min(12)]
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(data: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(data))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_content_addressed() {
        let a = ImageRef::from_facts(FactSet::uniform([("girl.hair", "red")]));
        let b = ImageRef::from_facts(FactSet::uniform([("girl.hair", "red")]));
        let c = ImageRef::from_facts(FactSet::uniform([("girl.hair", "black")]));
        assert_eq!(a.digest, b.digest);
        assert_ne!(a.digest, c.digest);
        assert_eq!(a.digest.len(), 64);
    }

    #[test]
    fn salience_defaults_on_deserialize() {
        let fs: FactSet = serde_json::from_str(r#"{"facts":{"cat.count":"2"},"salience":{}}"#).unwrap();
        assert_eq!(fs.salience("cat.count"), 1.0);
    }

    #[test]
    fn salience_for_unknown_key_is_rejected() {
        let err = serde_json::from_str::<FactSet>(r#"{"facts":{"cat.count":"2"},"salience":{"dog.count":0.5}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn bytes_locator_round_trips_as_base64() {
        let img = ImageRef::from_bytes(vec![0, 1, 2, 250]);
        let json = serde_json::to_string(&img).unwrap();
        assert!(json.contains("AAEC+g=="));
        let back: ImageRef = serde_json::from_str(&json).unwrap();
        assert_eq!(back, img);
    }
}
