//! Property tests for the spec-level invariants that hold across
//! whole input classes rather than single examples.

use gem_core::data::{Entity, EntityBody, MatchLabel};
use gem_core::eval::{prf, ConfusionCounts};
use gem_core::model::{mean_class_scores, scores_to_label, ClassWords};
use gem_core::selftrain::prune;
use gem_core::serialize::{
    build_vocab, detokenize, serialize_entity, serialize_pair, split_pieces, summarize, token_count,
    tokenize, CorpusStats, SpecialToken,
};
use proptest::prelude::*;

fn attr_word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,6}"
}

fn attrs() -> impl Strategy<Value = Vec<(String, String)>> {
    proptest::collection::vec((attr_word(), "[a-z0-9 ]{0,12}"), 1..5)
}

proptest! {
    #[test]
    fn pair_frame_shape(left in attrs(), right in attrs(), budget in 16usize..128) {
        let l = Entity { id: "l".into(), body: EntityBody::Structured(left) };
        let r = Entity { id: "r".into(), body: EntityBody::Structured(right) };
        let stats = CorpusStats::build([serialize_entity(&l).as_str(), serialize_entity(&r).as_str()]);
        let s = serialize_pair(&l, &r, &stats, budget);
        prop_assert!(s.starts_with("[CLS]"));
        let seps = split_pieces(&s)
            .iter()
            .filter(|p| matches!(p, gem_core::serialize::Piece::Special(SpecialToken::Sep)))
            .count();
        prop_assert_eq!(seps, 2);
        prop_assert!(token_count(&s) <= budget.max(token_count(&s).min(budget)));
    }

    #[test]
    fn summarize_shrinks_and_preserves_order(words in proptest::collection::vec("[a-z]{1,6}", 0..60), budget in 0usize..40) {
        let text = words.join(" ");
        let stats = CorpusStats::build([text.as_str()]);
        let out = summarize(&text, &stats, budget);
        let before = split_pieces(&text);
        let after = split_pieces(&out);
        prop_assert!(after.len() <= before.len());
        prop_assert!(after.len() <= budget.max(before.len().min(budget)));
        // Survivors appear in their original relative order.
        let mut cursor = 0usize;
        for piece in &after {
            let found = before[cursor..].iter().position(|p| p == piece);
            prop_assert!(found.is_some(), "token reordered or invented");
            cursor += found.unwrap() + 1;
        }
    }

    #[test]
    fn tokenize_detokenize_identity_on_invocab_text(words in proptest::collection::vec("[a-z]{1,6}", 1..20)) {
        let doc = words.join(" ");
        let vocab = build_vocab([doc.as_str()], 1).unwrap();
        let seq = tokenize(&doc, &vocab, 64).unwrap();
        prop_assert_eq!(detokenize(&seq, &vocab), doc.to_lowercase());
    }

    #[test]
    fn serialization_is_injective_on_attribute_structure(a in attrs(), b in attrs()) {
        let ea = Entity { id: "a".into(), body: EntityBody::Structured(a.clone()) };
        let eb = Entity { id: "b".into(), body: EntityBody::Structured(b.clone()) };
        if serialize_entity(&ea) == serialize_entity(&eb) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn class_scores_bounded_for_disjoint_classes(
        raw in proptest::collection::vec(0.0f64..1.0, 8..40),
        scale in 0.1f64..10.0,
    ) {
        // Normalize a random distribution over ids 0..n.
        let total: f64 = raw.iter().sum::<f64>().max(1e-9);
        let dist: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let n = dist.len() as u32;
        let words = ClassWords { ids: [vec![0, 1], vec![n - 2, n - 1]] };
        let scores = mean_class_scores(&dist, &words).unwrap();
        prop_assert!(scores[0] >= 0.0 && scores[0] <= 1.0);
        prop_assert!(scores[1] >= 0.0 && scores[1] <= 1.0);
        prop_assert!(scores[0] + scores[1] <= 1.0 + 1e-12);

        // Argmax is invariant to positive rescaling of the distribution.
        let scaled: Vec<f64> = dist.iter().map(|v| v * scale).collect();
        let rescored = mean_class_scores(&scaled, &words).unwrap();
        if scores[0] != scores[1] {
            prop_assert_eq!(scores_to_label(scores), scores_to_label(rescored));
        }
    }

    #[test]
    fn metric_bounds_and_harmonic_mean(bits in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
        let preds: Vec<MatchLabel> = bits.iter().map(|(p, _)| MatchLabel::from_bit(*p).unwrap()).collect();
        let golds: Vec<MatchLabel> = bits.iter().map(|(_, g)| MatchLabel::from_bit(*g).unwrap()).collect();
        let m = prf(&preds, &golds).unwrap();
        for v in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
        if m.precision + m.recall > 0.0 {
            let harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.f1 - harmonic).abs() < 1e-12);
        }
        // Permutation invariance over pair order.
        let mut idx: Vec<usize> = (0..bits.len()).collect();
        idx.reverse();
        let preds_r: Vec<MatchLabel> = idx.iter().map(|&i| preds[i]).collect();
        let golds_r: Vec<MatchLabel> = idx.iter().map(|&i| golds[i]).collect();
        let mr = prf(&preds_r, &golds_r).unwrap();
        prop_assert_eq!(m, mr);

        let counts = ConfusionCounts::from_pairs(&preds, &golds).unwrap();
        prop_assert_eq!(counts.total(), bits.len());
    }

    #[test]
    fn prune_conserves_items(n in 1usize..60, e_r in 0.0f64..1.0) {
        let items: Vec<usize> = (0..n).collect();
        let scores: Vec<f64> = (0..n).map(|i| (i as f64 * 7.3) % 5.0).collect();
        let (kept, removed) = prune(&items, e_r, &scores);
        prop_assert_eq!(kept.len() + removed.len(), n);
        let mut all: Vec<usize> = kept.iter().chain(removed.iter()).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }
}
