mod common;

use fsko_lab::analysis::{analyze, candidate_paths};

#[test]
fn probe_toy_candidates() {
    let tc = common::toy_corpus();
    let out = analyze(&tc, &common::toy_anchors());
    let paths = candidate_paths(&out);
    for c in &out.candidates {
        eprintln!("{:<30} {:<22} {:?} {:?}", c.path, c.class.name(), c.location, c.cache);
    }
    eprintln!("total: {}", paths.len());
    eprintln!("wrappers: {:?}", out.excluded_wrappers);
    eprintln!("warnings: {:?}", out.warnings);
    for b in &out.bridges {
        eprintln!(
            "bridge {} fields={:?} r={} w={} cache={:?}",
            b.record, b.page_fields, b.read_capable, b.write_capable, b.cache
        );
    }
}
