//! Metric oracles: a hand-counted BLEU fixture and a brute-force entity F1
//! recount over random corpora.

use std::collections::BTreeSet;

use ketod_core::eval::{
    bleu_stats, corpus_bleu, entity_counts, entity_f1, extract_entities, likert_mean, LikertRecord,
};
use ketod_core::knowledge::{build_ontology, parse_kb, KnowledgeBase, Ontology, Slot};
use proptest::prelude::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn five_sentences() -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let hyp = [
        "the cat sat on the mat",
        "there is a cat",
        "hello",
        "a b c d e",
        "x y z",
    ];
    let refs = [
        "the cat is on the mat",
        "there is a cat here",
        "hello world",
        "a b c d e",
        "q r s t",
    ];
    (
        hyp.iter().map(|s| toks(s)).collect(),
        refs.iter().map(|s| toks(s)).collect(),
    )
}

#[test]
fn five_sentence_bleu_matches_hand_count() {
    // Clipped matches / candidate n-grams per sentence:
    //   n=1: 5/6 4/4 1/1 5/5 0/3 -> 15/19
    //   n=2: 3/5 3/3 0/0 4/4 0/2 -> 10/14
    //   n=3: 1/4 2/2 0/0 3/3 0/1 ->  6/10
    //   n=4: 0/3 1/1 0/0 2/2 0/0 ->  3/6
    // hypothesis length 19, reference length 22
    // product of precisions = 45/266, brevity penalty = exp(1 - 22/19)
    let (hyp, refs) = five_sentences();
    let stats = bleu_stats(&hyp, &refs).unwrap();
    assert_eq!(stats.matches, [15, 10, 6, 3]);
    assert_eq!(stats.totals, [19, 14, 10, 6]);
    assert_eq!((stats.hyp_len, stats.ref_len), (19, 22));

    let expected = 100.0 * (1.0f64 - 22.0 / 19.0).exp() * (45.0f64 / 266.0).powf(0.25);
    let got = corpus_bleu(&hyp, &refs).unwrap();
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
}

fn synthetic_kb() -> KnowledgeBase {
    let rows = "\
r0 a0 north thai 52.1,0.1 p0 cheap c0
r1 a1 south thai 52.2,0.2 p1 moderate c1
r2 a2 north indian 52.3,0.3 p2 expensive c2
r3 a3 centre north 52.4,0.4 p3 cheap c3
";
    parse_kb(rows.as_bytes(), "synthetic").unwrap()
}

const WORDS: [&str; 16] = [
    "r0",
    "r1",
    "r2",
    "r3",
    "north",
    "south",
    "centre",
    "thai",
    "indian",
    "cheap",
    "moderate",
    "expensive",
    "the",
    "food",
    "is",
    "p2",
];

/// Entities found by scanning every (slot, value) of the ontology against the text.
fn brute_entities(text: &[String], ontology: &Ontology) -> BTreeSet<(Slot, String)> {
    let mut found = BTreeSet::new();
    for slot in Slot::ALL {
        for value in ontology.values(slot) {
            if text.iter().any(|t| t == value) {
                found.insert((slot, value.clone()));
            }
        }
    }
    found
}

fn brute_f1(hyp: &[Vec<String>], refs: &[Vec<String>], ontology: &Ontology) -> (u64, u64, u64, f64) {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (h, r) in hyp.iter().zip(refs) {
        let gold = brute_entities(r, ontology);
        if gold.is_empty() {
            continue;
        }
        let pred = brute_entities(h, ontology);
        for e in &pred {
            if gold.contains(e) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        fn_ += gold.iter().filter(|e| !pred.contains(*e)).count() as u64;
    }
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (tp, fp, fn_, f1)
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 0..8)
        .prop_map(|ws| ws.into_iter().map(str::to_string).collect())
}

fn corpus_pair() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<String>>)> {
    (1usize..25).prop_flat_map(|n| {
        (
            prop::collection::vec(sentence(), n),
            prop::collection::vec(sentence(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn entity_f1_matches_brute_force((hyp, refs) in corpus_pair()) {
        let ontology = build_ontology(&synthetic_kb());
        let counts = entity_counts(&hyp, &refs, &ontology).unwrap();
        let (tp, fp, fn_, f1) = brute_f1(&hyp, &refs, &ontology);
        prop_assert_eq!((counts.tp, counts.fp, counts.fn_), (tp, fp, fn_));
        prop_assert_eq!(entity_f1(&hyp, &refs, &ontology).unwrap(), f1);
    }
}

proptest! {
    #[test]
    fn entity_f1_bounded_and_order_free((hyp, refs) in corpus_pair(), rot in 0usize..25) {
        let ontology = build_ontology(&synthetic_kb());
        let f1 = entity_f1(&hyp, &refs, &ontology).unwrap();
        prop_assert!((0.0..=1.0).contains(&f1));
        let k = rot % hyp.len();
        let (mut h2, mut r2) = (hyp.clone(), refs.clone());
        h2.rotate_left(k);
        r2.rotate_left(k);
        prop_assert_eq!(entity_f1(&h2, &r2, &ontology).unwrap(), f1);
    }

    #[test]
    fn self_f1_is_one_when_any_entity((_, refs) in corpus_pair()) {
        let ontology = build_ontology(&synthetic_kb());
        let any = refs.iter().any(|r| !extract_entities(r, &ontology).is_empty());
        let f1 = entity_f1(&refs, &refs, &ontology).unwrap();
        prop_assert_eq!(f1, if any { 1.0 } else { 0.0 });
    }

    #[test]
    fn extracted_entities_are_ontology_values(text in sentence()) {
        let ontology = build_ontology(&synthetic_kb());
        let found = extract_entities(&text, &ontology);
        for (slot, value) in &found {
            prop_assert!(ontology.values(*slot).contains(value));
        }
        let rendered: Vec<String> = found.iter().map(|(_, v)| v.clone()).collect();
        let again: BTreeSet<String> = extract_entities(&rendered, &ontology).into_iter().map(|(_, v)| v).collect();
        let values: BTreeSet<String> = found.into_iter().map(|(_, v)| v).collect();
        prop_assert_eq!(again, values);
    }

    #[test]
    fn bleu_in_range((hyp, refs) in corpus_pair()) {
        let score = corpus_bleu(&hyp, &refs).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&score), "{}", score);
    }

    #[test]
    fn bleu_identity_with_a_long_hypothesis(
        (_, mut refs) in corpus_pair(),
        long in prop::collection::vec(prop::sample::select(&WORDS[..]), 4..10),
    ) {
        refs.push(long.into_iter().map(str::to_string).collect());
        let score = corpus_bleu(&refs, &refs).unwrap();
        prop_assert!((score - 100.0).abs() < 1e-9, "{}", score);
    }

    #[test]
    fn dropping_final_tokens_keeps_brevity_penalty_at_most_one((hyp, refs) in corpus_pair()) {
        let shorter: Vec<Vec<String>> = hyp.iter().map(|h| h[..h.len().saturating_sub(1)].to_vec()).collect();
        let before = bleu_stats(&hyp, &refs).unwrap().brevity_penalty();
        let after = bleu_stats(&shorter, &refs).unwrap().brevity_penalty();
        prop_assert!(after <= 1.0 && before <= 1.0);
        prop_assert!(after <= before);
    }

    #[test]
    fn likert_mean_within_bounds(scores in prop::collection::vec(prop::sample::select(&[1u8, 3, 5][..]), 1..40)) {
        let records: Vec<LikertRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| LikertRecord::new(format!("e{i}"), s, None).unwrap())
            .collect();
        let mean = likert_mean(&records).unwrap().mean;
        let lo = *scores.iter().min().unwrap() as f64;
        let hi = *scores.iter().max().unwrap() as f64;
        prop_assert!(lo <= mean && mean <= hi);
    }
}
