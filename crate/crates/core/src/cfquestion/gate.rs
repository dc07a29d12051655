use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FailureThresholds, GameConfig, GateScores, GateWeights};
use crate::scoring::ScoreTriple;

/// Absorbs rounding in the weighted sum so that a combination equal to the
/// threshold in exact arithmetic is accepted in floating point too.
pub const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub weights: GateWeights,
    pub threshold: f64,
    pub tau: f64,
    pub labels: FailureThresholds,
}

impl GateParams {
    pub fn from_config(config: &GameConfig) -> Self {
        Self {
            weights: config.gate_weights,
            threshold: config.gate_threshold,
            tau: config.gate_tau,
            labels: config.failure_labels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let GateWeights { alpha, beta, gamma } = self.weights;
        if [alpha, beta, gamma].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "gate weights must be >= 0, got ({alpha}, {beta}, {gamma})"
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "gate threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

impl Default for GateParams {
    fn default() -> Self {
        Self::from_config(&GameConfig::default())
    }
}

/// Cosine in [-1, 1] to [0, 1].
pub fn map_similarity(raw: f64) -> f64 {
    (raw.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// FID-like divergence (lower is better) to [0, 1] (higher is better).
pub fn naturalness_map(raw: f64, tau: f64) -> f64 {
    1.0 / (1.0 + raw.max(0.0) / tau)
}

/// Gate over already-mapped components.
pub fn gate_mapped(c_vs: f64, c_sc: f64, c_na: f64, params: &GateParams) -> Result<GateScores> {
    params.validate()?;
    for (name, v) in [("c_vs", c_vs), ("c_sc", c_sc), ("c_na", c_na)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain { name, value: v });
        }
    }
    let GateWeights { alpha, beta, gamma } = params.weights;
    let combined = alpha * c_vs + beta * c_sc + gamma * c_na;
    Ok(GateScores {
        c_vs,
        c_sc,
        c_na,
        combined,
        accepted: combined + THRESHOLD_SLACK >= params.threshold,
        attempts: 1,
    })
}

/// Gate over raw scores: cosines mapped affinely, divergence through
/// [`naturalness_map`].
pub fn gate(c_vs_raw: f64, c_sc_raw: f64, c_na_raw: f64, params: &GateParams) -> Result<GateScores> {
    if c_na_raw.is_nan() || c_vs_raw.is_nan() || c_sc_raw.is_nan() {
        return Err(Error::Invalid("gate inputs must not be NaN".into()));
    }
    gate_mapped(
        map_similarity(c_vs_raw),
        map_similarity(c_sc_raw),
        naturalness_map(c_na_raw, params.tau),
        params,
    )
}

pub fn gate_triple(t: &ScoreTriple, params: &GateParams) -> Result<GateScores> {
    gate(t.visual_raw, t.semantic_raw, t.naturalness_raw, params)
}

/// Diagnostic label for a rejected or unusable edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureLabel {
    /// Output identical to the input.
    Unchanged,
    TooSubtle,
    FailedEdit,
    Unnatural,
    BelowThreshold,
}

pub fn failure_label(raw: &ScoreTriple, scores: &GateScores, t: &FailureThresholds) -> Option<FailureLabel> {
    if scores.accepted {
        return None;
    }
    Some(
        if raw.visual_raw > t.too_subtle_raw && raw.semantic_raw > t.too_subtle_raw {
            FailureLabel::TooSubtle
        } else if scores.c_sc < t.failed_edit_semantic {
            FailureLabel::FailedEdit
        } else if scores.c_na < t.unnatural {
            FailureLabel::Unnatural
        } else {
            FailureLabel::BelowThreshold
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, beta: f64, gamma: f64, c: f64) -> GateParams {
        GateParams {
            weights: GateWeights { alpha, beta, gamma },
            threshold: c,
            ..GateParams::default()
        }
    }

    #[test]
    fn perfect_scores_pass_any_threshold() {
        let g = gate(1.0, 1.0, 0.0, &params(0.5, 0.3, 0.2, 1.0)).unwrap();
        assert_eq!(g.combined, 1.0);
        assert!(g.accepted);
    }

    #[test]
    fn boundary_is_accepted() {
        let third = 1.0 / 3.0;
        let g = gate_mapped(0.9, 0.9, 0.9, &params(third, third, third, 0.9)).unwrap();
        assert!((g.combined - 0.9).abs() < 1e-9);
        assert!(g.accepted);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            gate(1.0, 1.0, 0.0, &params(-0.1, 0.5, 0.5, 0.5)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gate(1.0, 1.0, 0.0, &params(0.4, 0.4, 0.2, 1.5)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn naturalness_map_is_decreasing() {
        assert_eq!(naturalness_map(0.0, 50.0), 1.0);
        assert_eq!(naturalness_map(50.0, 50.0), 0.5);
        assert!(naturalness_map(10.0, 50.0) > naturalness_map(20.0, 50.0));
    }

    #[test]
    fn labels() {
        let th = FailureThresholds::default();
        let p = params(0.4, 0.4, 0.2, 1.0);
        let subtle = ScoreTriple::new(0.99, 0.99, 0.0);
        let g = gate_triple(&subtle, &p).unwrap();
        assert_eq!(failure_label(&subtle, &g, &th), Some(FailureLabel::TooSubtle));
        let failed = ScoreTriple::new(0.9, -0.5, 0.0);
        let g = gate_triple(&failed, &p).unwrap();
        assert_eq!(failure_label(&failed, &g, &th), Some(FailureLabel::FailedEdit));
        let unnatural = ScoreTriple::new(0.9, 0.9, 500.0);
        let g = gate_triple(&unnatural, &p).unwrap();
        assert_eq!(failure_label(&unnatural, &g, &th), Some(FailureLabel::Unnatural));
    }
}
