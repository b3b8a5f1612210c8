mod common;

use fsko_lab::analysis::analyze;
use fsko_lab::dynverify::{default_file_world, load_suite, verify_catalog};

#[test]
fn probe_verdicts() {
    let tc = common::toy_corpus();
    let out = analyze(&tc, &common::toy_anchors());
    let suite = load_suite(&common::read_fixture("suite.json")).unwrap();
    let world = default_file_world();
    let cat = verify_catalog(&tc, &out.candidates, &suite, &world).unwrap();
    for e in &cat.entries {
        eprintln!(
            "{:<28} {:<22} {:?} pred={:?} v={:?}",
            e.candidate, e.class, e.status, e.predicate, e.target_value
        );
    }
    eprintln!("funnel: {:?}", cat.funnel);
}
