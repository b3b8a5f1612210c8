//! Shared helpers for integration tests: fixture loading and the bundled
//! anchor configuration.

use std::path::PathBuf;

use fsko_lab::analysis::{AnchorSpec, AnchorSeed, MacroSets, SemanticClass};
use fsko_lab::ir::{layout_types, parse_corpus, TypedCorpus};

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture_path(rel))
        .unwrap_or_else(|e| panic!("missing fixture {rel}: {e}"))
}

pub fn load_corpus(rel: &str) -> TypedCorpus {
    let text = read_fixture(rel);
    layout_types(parse_corpus(&text).unwrap_or_else(|e| panic!("{rel} failed to parse: {e}")))
}

pub fn toy_corpus() -> TypedCorpus {
    load_corpus("corpus/toy.fir")
}

/// The anchor configuration bundled with the toy corpus.
pub fn toy_anchors() -> AnchorSpec {
    serde_json::from_str(&read_fixture("anchors.json")).expect("anchors.json")
}

/// Anchor config for the adversarial corpus: same macro groups, sector seed
/// on tnode.t_sec.
pub fn trap_anchors() -> AnchorSpec {
    AnchorSpec {
        macro_sets: MacroSets {
            request_mask: vec![
                "MAY_READ".to_string(),
                "MAY_WRITE".to_string(),
                "MAY_EXEC".to_string(),
            ],
            mode_bits: vec!["S_ISUID".to_string(), "S_ISGID".to_string()],
        },
        seeds: vec![AnchorSeed {
            class: SemanticClass::Sector,
            path: "tnode.t_sec".to_string(),
        }],
        operation_pair: None,
    }
}
