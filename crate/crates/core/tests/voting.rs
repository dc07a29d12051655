use mug_core::engine::{compute_vote, tally_and_eliminate};
use mug_core::model::Vote;
use mug_core::{AgentId, FactorMatrix, FactorScores, VoteWeights};
use proptest::prelude::*;

fn vote(voter: usize, target: usize) -> Vote {
    Vote {
        voter_id: AgentId(voter),
        target_id: AgentId(target),
        round: 1,
        factor_scores: FactorScores::NEUTRAL,
        weighted_total: 0.0,
    }
}

fn targets(n: usize) -> impl Strategy<Value = Vec<usize>> {
    (0..n)
        .map(|voter| (0..n - 1).prop_map(move |p| if p >= voter { p + 1 } else { p }))
        .collect::<Vec<_>>()
}

fn table() -> impl Strategy<Value = (usize, Vec<usize>)> {
    (3usize..=9).prop_flat_map(|n| targets(n).prop_map(move |t| (n, t)))
}

fn matrix() -> impl Strategy<Value = (usize, Vec<[f64; 4]>)> {
    (3usize..=7).prop_flat_map(|n| {
        proptest::collection::vec(
            prop_oneof![
                proptest::array::uniform4(0.0f64..=10.0),
                proptest::array::uniform4((0u8..=10).prop_map(f64::from)),
            ],
            n * (n - 1),
        )
        .prop_map(move |cells| (n, cells))
    })
}

fn build(n: usize, cells: &[[f64; 4]]) -> FactorMatrix {
    let mut m = FactorMatrix::default();
    let mut it = cells.iter();
    for v in 0..n {
        for c in (0..n).filter(|c| *c != v) {
            m.insert(AgentId(v), AgentId(c), FactorScores(*it.next().unwrap()))
                .unwrap();
        }
    }
    m
}

proptest! {
    #[test]
    fn tally_matches_counting((n, t) in table()) {
        let mut counts = vec![0; n];
        for x in &t {
            counts[*x] += 1;
        }
        let top = *counts.iter().max().unwrap();
        let expected = counts.iter().position(|c| *c == top).unwrap();
        let votes: Vec<Vote> = t.iter().enumerate().map(|(v, x)| vote(v, *x)).collect();
        prop_assert_eq!(tally_and_eliminate(&votes).unwrap(), AgentId(expected));
        let mut reversed = votes.clone();
        reversed.reverse();
        prop_assert_eq!(tally_and_eliminate(&reversed).unwrap(), AgentId(expected));
    }

    #[test]
    fn vote_is_the_first_maximum((n, cells) in matrix(), w in proptest::array::uniform4(0.01f64..=1.0)) {
        let m = build(n, &cells);
        let w = VoteWeights(w);
        for voter in 0..n {
            let totals: Vec<(usize, f64)> = (0..n)
                .filter(|c| *c != voter)
                .map(|c| (c, m.get(AgentId(voter), AgentId(c)).unwrap().weighted(&w)))
                .collect();
            let best = totals.iter().map(|(_, t)| *t).fold(f64::MIN, f64::max);
            let v = compute_vote(AgentId(voter), &m, &w, 1).unwrap();
            // within relative rounding of the best, and no lower id equally good
            prop_assert!(best - v.weighted_total <= 1e-12 * best.abs());
            let first_best = totals.iter().find(|(_, t)| best - *t <= 1e-12 * best.abs()).unwrap().0;
            prop_assert_eq!(v.target_id, AgentId(first_best));
        }
    }

    #[test]
    fn scaling_weights_changes_nothing(
        (n, cells) in matrix(),
        w in proptest::array::uniform4(0.01f64..=1.0),
        exp in -6.0f64..=6.0,
    ) {
        let m = build(n, &cells);
        let w = VoteWeights(w);
        let scaled = w.scaled(10f64.powf(exp));
        let a: Vec<Vote> = (0..n).map(|v| compute_vote(AgentId(v), &m, &w, 1).unwrap()).collect();
        let b: Vec<Vote> = (0..n).map(|v| compute_vote(AgentId(v), &m, &scaled, 1).unwrap()).collect();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.target_id, y.target_id);
        }
        prop_assert_eq!(tally_and_eliminate(&a).unwrap(), tally_and_eliminate(&b).unwrap());
    }
}

#[test]
fn empty_ballot_is_an_error() {
    assert!(tally_and_eliminate(&[]).is_err());
}
