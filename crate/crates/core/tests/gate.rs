use std::sync::atomic::{AtomicU32, Ordering};

use mug_core::cfquestion::{
    gate, gate_mapped, generate_counterfactual, plan_edit, EditBackend, FailureLabel, GateParams, TemplateInstructions,
};
use mug_core::image::{FactSet, ImageRef};
use mug_core::model::GateWeights;
use mug_core::scoring::{ScoreTriple, Scorer};
use mug_core::{BackendError, CfQuestion, Error, GameConfig};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = GateParams> {
    (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(alpha, beta, gamma, threshold)| GateParams {
        weights: GateWeights { alpha, beta, gamma },
        threshold,
        ..GateParams::default()
    })
}

proptest! {
    #[test]
    fn raising_a_component_never_hurts(
        p in params(),
        c in proptest::array::uniform3(0.0f64..=1.0),
        i in 0usize..3,
        bump in 0.0f64..=1.0,
    ) {
        let base = gate_mapped(c[0], c[1], c[2], &p).unwrap();
        let mut up = c;
        up[i] = (up[i] + bump).min(1.0);
        let g = gate_mapped(up[0], up[1], up[2], &p).unwrap();
        prop_assert!(g.combined >= base.combined);
        prop_assert!(!base.accepted || g.accepted);
    }

    #[test]
    fn lower_divergence_never_hurts(p in params(), vs in -1.0f64..=1.0, sc in -1.0f64..=1.0, fid in 0.0f64..=500.0, f in 0.0f64..=1.0) {
        let a = gate(vs, sc, fid, &p).unwrap();
        let b = gate(vs, sc, fid * f, &p).unwrap();
        prop_assert!(b.combined >= a.combined);
    }

    #[test]
    fn mapped_components_stay_in_unit_range(vs in -5.0f64..=5.0, sc in -5.0f64..=5.0, fid in 0.0f64..=1e6) {
        let g = gate(vs, sc, fid, &GateParams::default()).unwrap();
        for v in [g.c_vs, g.c_sc, g.c_na, g.combined] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn equality_with_the_threshold_accepts() {
    let third = 1.0 / 3.0;
    let p = GateParams {
        weights: GateWeights {
            alpha: third,
            beta: third,
            gamma: third,
        },
        threshold: 0.9,
        ..GateParams::default()
    };
    assert!(gate_mapped(0.9, 0.9, 0.9, &p).unwrap().accepted);
    assert!(!gate_mapped(0.9, 0.9, 0.899, &p).unwrap().accepted);
}

#[test]
fn out_of_range_mapped_scores_are_rejected() {
    assert!(matches!(
        gate_mapped(1.2, 0.5, 0.5, &GateParams::default()),
        Err(Error::Domain { .. })
    ));
    assert!(gate(f64::NAN, 0.0, 0.0, &GateParams::default()).is_err());
}

struct Editor {
    calls: AtomicU32,
    unchanged_first: bool,
}

impl EditBackend for Editor {
    fn name(&self) -> &str {
        "test-editor"
    }

    fn edit(&self, image: &ImageRef, _instruction: &str, attempt: u32) -> Result<ImageRef, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.unchanged_first && attempt == 1 {
            return Ok(image.clone());
        }
        Ok(ImageRef::from_bytes(vec![attempt as u8; 8]))
    }
}

struct Schedule {
    calls: AtomicU32,
    good: Vec<bool>,
}

impl Scorer for Schedule {
    fn name(&self) -> &str {
        "schedule"
    }

    fn score_pair(&self, _a: &ImageRef, _b: &ImageRef) -> Result<ScoreTriple, BackendError> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
        let good = self.good.get(k).copied().unwrap_or(false);
        let s = if good { 1.0 } else { -1.0 };
        Ok(ScoreTriple {
            visual_raw: s,
            semantic_raw: s,
            naturalness_raw: if good { 0.0 } else { 1e4 },
            flags: Vec::new(),
        })
    }
}

fn question() -> CfQuestion {
    CfQuestion::new(
        "How many cups are there?",
        ImageRef::from_facts(FactSet::uniform([("cup.count", "2"), ("cup.color", "red")])),
    )
    .unwrap()
    .with_focus("cup.count".to_string())
}

fn run(good: Vec<bool>, max: u32, unchanged_first: bool) -> (Result<u32, Error>, u32, u32) {
    let q = question();
    let plan = plan_edit(&q, None, None, &TemplateInstructions).unwrap();
    let editor = Editor {
        calls: AtomicU32::new(0),
        unchanged_first,
    };
    let scorer = Schedule {
        calls: AtomicU32::new(0),
        good,
    };
    let config = GameConfig {
        gate_max_attempts: max,
        ..GameConfig::default()
    };
    let r = generate_counterfactual(q, &plan, &editor, &scorer, &config).map(|(q, attempts)| {
        assert_eq!(q.gate_scores.as_ref().unwrap().attempts as usize, attempts.len());
        attempts.len() as u32
    });
    (
        r,
        editor.calls.load(Ordering::SeqCst),
        scorer.calls.load(Ordering::SeqCst),
    )
}

proptest! {
    #[test]
    fn calls_stop_at_first_success(good in proptest::collection::vec(any::<bool>(), 0..8), max in 1u32..=6) {
        let first = good.iter().position(|g| *g).map(|i| i as u32 + 1);
        let expected = first.map_or(max, |s| s.min(max));
        let (r, edits, scores) = run(good, max, false);
        prop_assert_eq!((edits, scores), (expected, expected));
        match first.filter(|s| *s <= max) {
            Some(s) => prop_assert_eq!(r.unwrap(), s),
            None => {
                let is_exhausted = matches!(r, Err(Error::GateExhausted { attempts, .. }) if attempts == max);
                prop_assert!(is_exhausted);
            }
        }
    }
}

#[test]
fn unchanged_output_is_never_usable() {
    // attempt 1 scores well but returns the input image
    let (r, edits, _) = run(vec![true, true], 3, true);
    assert_eq!(r.unwrap(), 2);
    assert_eq!(edits, 2);
    let (r, _, _) = run(vec![true], 1, true);
    match r {
        Err(Error::GateExhausted { best, .. }) => assert_eq!(best.label, Some(FailureLabel::Unchanged)),
        other => panic!("{other:?}"),
    }
}
