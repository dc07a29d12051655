//! Dataset ingestion, VQA metrics and the baseline protocol drivers.

mod dataset;
mod metrics;
mod protocols;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dataset::{
    load_dataset, write_normalized, BenchItem, DatasetFormat, ImageSpec, LoadReport, NormalizedRecord, Reject,
};
pub use metrics::{
    accuracy, f1, hallusion_metrics, pope_metrics, sign_test, Confusion, HallusionMetrics, MetricsReport,
    PairedComparison, PopeMetrics, ReportRow, REPORT_SCHEMA_VERSION,
};
pub use protocols::{plurality, run_item, run_protocol, PredRecord, RunOptions};
pub use synthetic::synthetic_items;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "pope")]
    Pope,
    #[serde(rename = "hallusion_bench")]
    HallusionBench,
    #[serde(rename = "mmmu")]
    Mmmu,
    #[serde(rename = "mmstar")]
    MmStar,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl Dataset {
    pub const ALL: [Dataset; 5] = [
        Dataset::Pope,
        Dataset::HallusionBench,
        Dataset::Mmmu,
        Dataset::MmStar,
        Dataset::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Pope => "pope",
            Dataset::HallusionBench => "hallusion_bench",
            Dataset::Mmmu => "mmmu",
            Dataset::MmStar => "mmstar",
            Dataset::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key = squash(s);
        Dataset::ALL
            .into_iter()
            .find(|d| squash(d.as_str()) == key)
            .ok_or_else(|| Error::Config(format!("unknown dataset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "self_refine")]
    SelfRefine,
    #[serde(rename = "mad_vote")]
    MadVote,
    #[serde(rename = "mad_judge")]
    MadJudge,
    #[serde(rename = "mug")]
    Mug,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::Single,
        Protocol::SelfRefine,
        Protocol::MadVote,
        Protocol::MadJudge,
        Protocol::Mug,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Single => "single",
            Protocol::SelfRefine => "self_refine",
            Protocol::MadVote => "mad_vote",
            Protocol::MadJudge => "mad_judge",
            Protocol::Mug => "mug",
        }
    }

    /// Protocols that seat several agents side by side.
    pub fn is_multi_agent(self) -> bool {
        matches!(self, Protocol::MadVote | Protocol::MadJudge | Protocol::Mug)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key = squash(s);
        Protocol::ALL
            .into_iter()
            .find(|p| squash(p.as_str()) == key)
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}")))
    }
}
