//! Byte-exact rendering of the restaurant example with attached KB rows.

use std::path::PathBuf;

use ketod_core::augment::{attach_kb_rows, ConstraintExtractor};
use ketod_core::corpus::load_corpus;
use ketod_core::knowledge::{build_ontology, load_kb};
use ketod_core::serialize::{build_pairs, render_context};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn second_pair_renders_exactly() {
    let kb = load_kb(data("worked_kb.txt")).unwrap();
    let corpus = load_corpus(data("worked_dialogue.jsonl")).unwrap();
    let pairs = build_pairs(&corpus.dialogues[0]);
    assert_eq!(pairs.len(), 2);

    let extractor = ConstraintExtractor::new(&build_ontology(&kb));
    let pair = attach_kb_rows(&pairs[1], &kb, &extractor);
    let names: Vec<&str> = pair.kb_rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["the_nirala", "golden_wok"]);

    let rendered = format!("{}\n", render_context(&pair).join(" "));
    let expected = std::fs::read_to_string(data("worked_input.txt")).unwrap();
    assert_eq!(rendered.as_bytes(), expected.as_bytes());

    let target = format!("{}\n", pair.target.join(" "));
    assert_eq!(target, std::fs::read_to_string(data("worked_target.txt")).unwrap());
}

#[test]
fn first_pair_has_no_history() {
    let corpus = load_corpus(data("worked_dialogue.jsonl")).unwrap();
    let pairs = build_pairs(&corpus.dialogues[0]);
    let rendered = render_context(&pairs[0]).join(" ");
    assert_eq!(
        rendered,
        "<USR> i would like a moderately priced restaurant in the north part of town ."
    );
}
