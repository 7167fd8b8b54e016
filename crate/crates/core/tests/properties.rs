//! Structural invariants checked over generated inputs.

use proptest::prelude::*;

use strategos_core::answers::{equivalent, majority_vote, normalize, ExtractedAnswer};
use strategos_core::follower::{ReasoningChain, ReasoningGroup};
use strategos_core::metrics::grouped_majority_recall;

fn arb_answer_text() -> impl Strategy<Value = String> {
    prop_oneof![
        // plain and signed integers
        (-9999i64..=9999).prop_map(|n| n.to_string()),
        // fractions in both syntaxes
        (1i64..=99, 1i64..=99).prop_map(|(p, q)| format!("{p}/{q}")),
        (1i64..=99, 1i64..=99).prop_map(|(p, q)| format!("\\frac{{{p}}}{{{q}}}")),
        // decorated forms
        (1i64..=999).prop_map(|n| format!("$\\textbf{{{n}}}$")),
        // symbolic non-numeric answers
        "[a-z]{1,6}",
        "[a-z]\\^\\{[0-9]{1,2}\\}",
    ]
}

proptest! {
    #[test]
    fn normalize_is_idempotent(text in arb_answer_text()) {
        let once = normalize(&text);
        prop_assert_eq!(normalize(&once), once.clone());
    }

    #[test]
    fn equivalence_reflexive_and_symmetric(a in arb_answer_text(), b in arb_answer_text()) {
        let a = ExtractedAnswer::new(&a);
        let b = ExtractedAnswer::new(&b);
        prop_assert!(equivalent(&a, &a));
        prop_assert_eq!(equivalent(&a, &b), equivalent(&b, &a));
    }

    #[test]
    fn majority_winner_survives_permutation(
        answers in prop::collection::vec(arb_answer_text(), 1..20),
        seed in any::<u64>(),
    ) {
        let original: Vec<Option<ExtractedAnswer>> =
            answers.iter().map(|a| Some(ExtractedAnswer::new(a))).collect();
        let mut shuffled = original.clone();
        // deterministic Fisher-Yates driven by the generated seed
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = majority_vote(&original);
        let b = majority_vote(&shuffled);
        // winner sets must agree as answer classes, whatever the order
        let winners =
            |t: &strategos_core::VoteTally| {
                t.winner_classes().map(|c| c.representative.clone()).collect::<Vec<_>>()
            };
        let (wa, wb) = (winners(&a), winners(&b));
        prop_assert_eq!(wa.len(), wb.len());
        for w in &wa {
            prop_assert!(wb.iter().any(|x| equivalent(x, w)));
        }
    }

    #[test]
    fn recall_bounds_and_monotonicity(
        groups in prop::collection::vec(prop::collection::vec(0u8..4, 1..8), 1..6),
    ) {
        let truth = ExtractedAnswer::new("0");
        let tallies: Vec<_> = groups
            .iter()
            .map(|g| {
                let chains = g
                    .iter()
                    .enumerate()
                    .map(|(i, a)| ReasoningChain::from_text(format!("\\boxed{{{a}}}"), 0, i))
                    .collect();
                ReasoningGroup::from_chains(None, chains).tally
            })
            .collect();
        let recall = grouped_majority_recall(&tallies, &truth);
        prop_assert!((0.0..=1.0).contains(&recall));
        // adding a group never lowers the recall
        let mut extended = tallies.clone();
        extended.push(tallies[0].clone());
        prop_assert!(grouped_majority_recall(&extended, &truth) >= recall - 1e-15);
    }
}
