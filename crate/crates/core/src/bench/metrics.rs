use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{Dataset, PredRecord, Protocol};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: &str = "mug-report/1";

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> Result<f64> {
    for (name, v) in [("precision", precision), ("recall", recall)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain { name, value: v });
        }
    }
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn accuracy(records: &[PredRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRun);
    }
    Ok(records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeMetrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_track: BTreeMap<String, PopeMetrics>,
}

fn pope_flat(records: &[&PredRecord]) -> Result<PopeMetrics> {
    let mut c = Confusion::default();
    for r in records {
        // anything but an explicit yes counts as a negative prediction
        match (r.predicted == "yes", r.label == "yes") {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Ok(PopeMetrics {
        confusion: c,
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1: f1(precision, recall)?,
        per_track: BTreeMap::new(),
    })
}

/// Confusion-matrix metrics with "yes" as the positive class, overall and
/// per track.
pub fn pope_metrics(records: &[PredRecord]) -> Result<PopeMetrics> {
    if records.is_empty() {
        return Err(Error::EmptyRun);
    }
    if let Some(r) = records.iter().find(|r| r.dataset != Dataset::Pope) {
        return Err(Error::Invalid(format!(
            "{} is a {} record, not POPE",
            r.item_id, r.dataset
        )));
    }
    let all: Vec<&PredRecord> = records.iter().collect();
    let mut m = pope_flat(&all)?;
    let mut tracks: BTreeMap<&str, Vec<&PredRecord>> = BTreeMap::new();
    for r in records {
        if let Some(t) = &r.track {
            tracks.entry(t).or_default().push(r);
        }
    }
    for (t, rs) in tracks {
        m.per_track.insert(t.to_string(), pope_flat(&rs)?);
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallusionMetrics {
    pub a_acc: f64,
    pub q_acc: f64,
    pub f_acc: f64,
    pub avg: f64,
}

fn all_correct_rate(records: &[PredRecord], key: fn(&PredRecord) -> Option<&str>) -> f64 {
    let mut groups: BTreeMap<&str, bool> = BTreeMap::new();
    for r in records {
        let k = key(r).expect("group keys checked");
        *groups.entry(k).or_insert(true) &= r.correct;
    }
    groups.values().filter(|ok| **ok).count() as f64 / groups.len() as f64
}

/// aAcc over atomic items; qAcc and fAcc as the share of question and
/// figure groups answered entirely correctly; avg as their plain mean.
pub fn hallusion_metrics(records: &[PredRecord]) -> Result<HallusionMetrics> {
    if records.is_empty() {
        return Err(Error::EmptyRun);
    }
    if let Some(r) = records
        .iter()
        .find(|r| r.question_group.is_none() || r.figure_group.is_none())
    {
        return Err(Error::Ingest(format!("{} has no question or figure group", r.item_id)));
    }
    let a_acc = accuracy(records)?;
    let q_acc = all_correct_rate(records, |r| r.question_group.as_deref());
    let f_acc = all_correct_rate(records, |r| r.figure_group.as_deref());
    Ok(HallusionMetrics {
        a_acc,
        q_acc,
        f_acc,
        avg: (a_acc + f_acc + q_acc) / 3.0,
    })
}

/// One-sided exact sign test: the chance of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 || wins == 0 {
        return 1.0;
    }
    Binomial::new(0.5, n).expect("valid binomial").sf(wins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: Dataset,
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<String>,
    pub items: usize,
    pub errors: usize,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pope: Option<PopeMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hallusion: Option<HallusionMetrics>,
    /// Share of games whose undercover was voted out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_rate: Option<f64>,
}

/// Item-paired comparison of MUG against another protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub dataset: Dataset,
    pub a: Protocol,
    pub b: Protocol,
    pub pairs: usize,
    pub a_only_correct: usize,
    pub b_only_correct: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<PairedComparison>,
}

fn row(dataset: Dataset, protocol: Protocol, track: Option<String>, rs: &[PredRecord]) -> Result<ReportRow> {
    let outcomes: Vec<_> = rs.iter().filter_map(|r| r.outcome.as_ref()).collect();
    let mut pope = match dataset {
        Dataset::Pope => Some(pope_metrics(rs)?),
        _ => None,
    };
    if let Some(p) = pope.as_mut() {
        p.per_track.clear();
    }
    Ok(ReportRow {
        dataset,
        protocol,
        track,
        items: rs.len(),
        errors: rs.iter().filter(|r| r.error.is_some()).count(),
        accuracy: accuracy(rs)?,
        pope,
        hallusion: match dataset {
            Dataset::HallusionBench => Some(hallusion_metrics(rs)?),
            _ => None,
        },
        detection_rate: (protocol == Protocol::Mug && !outcomes.is_empty())
            .then(|| outcomes.iter().filter(|o| o.detection_succeeded).count() as f64 / outcomes.len() as f64),
    })
}

impl MetricsReport {
    /// Rows per (dataset, protocol), overall first and then per track. The
    /// result does not depend on record order.
    pub fn from_records(records: &[PredRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyRun);
        }
        let mut sorted: Vec<PredRecord> = records.to_vec();
        sorted.sort_by(|a, b| (a.dataset, a.protocol, &a.item_id).cmp(&(b.dataset, b.protocol, &b.item_id)));
        let mut groups: BTreeMap<(Dataset, Protocol), Vec<PredRecord>> = BTreeMap::new();
        for r in sorted {
            groups.entry((r.dataset, r.protocol)).or_default().push(r);
        }
        let mut rows = Vec::new();
        for ((dataset, protocol), rs) in &groups {
            rows.push(row(*dataset, *protocol, None, rs)?);
            let tracks: BTreeSet<&String> = rs.iter().filter_map(|r| r.track.as_ref()).collect();
            for t in tracks {
                let sub: Vec<PredRecord> = rs.iter().filter(|r| r.track.as_ref() == Some(t)).cloned().collect();
                rows.push(row(*dataset, *protocol, Some(t.clone()), &sub)?);
            }
        }
        let mut comparisons = Vec::new();
        for ((dataset, protocol), rs) in &groups {
            if *protocol == Protocol::Mug {
                continue;
            }
            let Some(mug) = groups.get(&(*dataset, Protocol::Mug)) else {
                continue;
            };
            let theirs: BTreeMap<&str, bool> = rs.iter().map(|r| (r.item_id.as_str(), r.correct)).collect();
            let (mut pairs, mut a_only, mut b_only) = (0, 0, 0);
            for m in mug {
                if let Some(other) = theirs.get(m.item_id.as_str()) {
                    pairs += 1;
                    match (m.correct, *other) {
                        (true, false) => a_only += 1,
                        (false, true) => b_only += 1,
                        _ => {}
                    }
                }
            }
            comparisons.push(PairedComparison {
                dataset: *dataset,
                a: Protocol::Mug,
                b: *protocol,
                pairs,
                a_only_correct: a_only,
                b_only_correct: b_only,
                p_value: sign_test(a_only as u64, b_only as u64),
            });
        }
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION.into(),
            rows,
            comparisons,
        })
    }

    pub fn row(&self, dataset: Dataset, protocol: Protocol, track: Option<&str>) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.protocol == protocol && r.track.as_deref() == track)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: &str, predicted: &str) -> PredRecord {
        PredRecord {
            item_id: id.into(),
            dataset: Dataset::Pope,
            track: None,
            question_group: None,
            figure_group: None,
            label: label.into(),
            protocol: Protocol::Single,
            predicted: predicted.into(),
            correct: label == predicted,
            error: None,
            outcome: None,
        }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(f1(0.0, 0.0).unwrap(), 0.0);
        assert!((f1(0.942, 0.839).unwrap() - 0.8875).abs() < 5e-4);
        assert!(matches!(f1(1.2, 0.5), Err(Error::Domain { name: "precision", .. })));
        assert!(f1(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn pope_fixture() {
        let mut rs = Vec::new();
        for i in 0..4 {
            rs.push(rec(&format!("tp{i}"), "yes", "yes"));
            rs.push(rec(&format!("tn{i}"), "no", "no"));
        }
        rs.push(rec("fp", "no", "yes"));
        rs.push(rec("fn", "yes", "no"));
        let m = pope_metrics(&rs).unwrap();
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 4,
                fp: 1,
                fn_: 1,
                tn: 4
            }
        );
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            assert!((v - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn all_yes_predictor() {
        let rs: Vec<_> = (0..10)
            .map(|i| rec(&i.to_string(), if i % 2 == 0 { "yes" } else { "no" }, "yes"))
            .collect();
        let m = pope_metrics(&rs).unwrap();
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.precision, 0.5);
        assert!(matches!(pope_metrics(&[]), Err(Error::EmptyRun)));
    }

    #[test]
    fn grouping_example() {
        let mk = |id: &str, q: &str, ok: bool| PredRecord {
            dataset: Dataset::HallusionBench,
            question_group: Some(q.into()),
            figure_group: Some(id.into()),
            ..rec(id, "yes", if ok { "yes" } else { "no" })
        };
        let rs = [
            mk("1", "a", true),
            mk("2", "a", true),
            mk("3", "b", true),
            mk("4", "b", true),
            mk("5", "b", false),
        ];
        let m = hallusion_metrics(&rs).unwrap();
        assert!((m.a_acc - 0.8).abs() < 1e-12);
        assert!((m.q_acc - 0.5).abs() < 1e-12);
        let missing = [rec("x", "yes", "yes")];
        assert!(matches!(hallusion_metrics(&missing), Err(Error::Ingest(_))));
    }

    #[test]
    fn sign_test_matches_exact_tail() {
        // P(X >= 9 | n = 10) = (10 + 1) / 1024
        assert!((sign_test(9, 1) - 11.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test(0, 5), 1.0);
        assert!((sign_test(5, 0) - 1.0 / 32.0).abs() < 1e-12);
    }
}
