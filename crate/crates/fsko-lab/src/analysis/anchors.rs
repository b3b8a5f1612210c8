//! Anchor discovery: automatic metadata anchors (owner fields by name,
//! permission fields by macro-taint + bitwise pairing) and the read/write
//! call-graph divergence assistant for operation anchors.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{PathKey, Ty, TypedCorpus};

use super::callgraph::CallGraph;
use super::db::{RhsKind, StmtDb};
use super::{AnchorSpec, SemanticClass};

/// Owner anchors: every declared field whose name contains "uid" or "gid".
/// Permission anchors: variables tainted by the request-mask/mode-bit macro
/// groups via assignment/logical-op dataflow, then any field reachable
/// backward from the other operand of a bitwise op with a tainted side.
pub fn find_metadata_anchors(
    _tc: &TypedCorpus,
    db: &StmtDb,
    spec: &AnchorSpec,
) -> Vec<(PathKey, SemanticClass)> {
    let mut out: BTreeSet<(PathKey, SemanticClass)> = BTreeSet::new();

    for (key, ty) in &db.node_ty {
        if let PathKey::Field(p) = key {
            if ty.is_scalar() {
                let fname = p.chain.last().map(|s| s.as_str()).unwrap_or("");
                if fname.contains("uid") || fname.contains("gid") {
                    out.insert((key.clone(), SemanticClass::Owner));
                }
            }
        }
    }

    let groups: BTreeSet<&str> = spec
        .macro_sets
        .request_mask
        .iter()
        .chain(spec.macro_sets.mode_bits.iter())
        .map(|s| s.as_str())
        .collect();

    // forward taint over assignment/logical edges
    let mut tainted: BTreeSet<PathKey> = BTreeSet::new();
    loop {
        let mut changed = false;
        for fdb in db.funcs.values() {
            for ev in &fdb.assigns {
                if !matches!(ev.kind, RhsKind::Pure | RhsKind::Bitwise | RhsKind::Const) {
                    continue;
                }
                let seeds_macro = ev.macros.iter().any(|m| groups.contains(m.as_str()));
                let from_tainted = ev.operands.iter().any(|(k, _)| tainted.contains(k));
                if (seeds_macro || from_tainted) && tainted.insert(ev.dst.clone()) {
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    // the other operand of a bitwise op with a tainted side, traced back to
    // fields through assignment/logical edges
    let mut other_side: BTreeSet<PathKey> = BTreeSet::new();
    for fdb in db.funcs.values() {
        for bu in &fdb.bitwise_uses {
            let left_hot = bu.left.iter().any(|k| tainted.contains(k))
                || bu.left_macros.iter().any(|m| groups.contains(m.as_str()));
            let right_hot = bu.right.iter().any(|k| tainted.contains(k))
                || bu.right_macros.iter().any(|m| groups.contains(m.as_str()));
            if left_hot && !right_hot {
                other_side.extend(bu.right.iter().cloned());
            }
            if right_hot && !left_hot {
                other_side.extend(bu.left.iter().cloned());
            }
        }
    }

    let fields = backward_to_fields(db, &other_side);
    for f in fields {
        if matches!(db.ty_of(&f), Some(t) if t.is_scalar()) {
            out.insert((f, SemanticClass::Permission));
        }
    }

    out.into_iter().collect()
}

/// Close a start set backward over assignment/logical edges, returning the
/// field paths reached (including any already in the set).
fn backward_to_fields(db: &StmtDb, start: &BTreeSet<PathKey>) -> BTreeSet<PathKey> {
    let mut seen = start.clone();
    loop {
        let mut changed = false;
        for fdb in db.funcs.values() {
            for ev in &fdb.assigns {
                if !matches!(ev.kind, RhsKind::Pure | RhsKind::Bitwise) {
                    continue;
                }
                if seen.contains(&ev.dst) {
                    for (op, _) in &ev.operands {
                        if seen.insert(op.clone()) {
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    seen.into_iter()
        .filter(|k| matches!(k, PathKey::Field(_)))
        .collect()
}

/// Operation-anchor assistant. Walks the shared suffix of the two entries'
/// call graphs and reports every path that (a) is referenced inside a
/// function reachable from both entries and (b) is assigned disjoint
/// nonempty sets of bare macro constants on the read side vs the write side.
pub fn suggest_operation_anchors(
    tc: &TypedCorpus,
    db: &StmtDb,
    cg: &CallGraph,
    read_entry: &str,
    write_entry: &str,
) -> Result<BTreeSet<PathKey>, String> {
    for e in [read_entry, write_entry] {
        match tc.corpus.function(e) {
            Some(f) if f.entry => {}
            Some(_) => return Err(format!("`{e}` is not an entry function")),
            None => return Err(format!("unknown entry `{e}`")),
        }
    }
    let r = cg.reachable(read_entry);
    let w = cg.reachable(write_entry);
    let shared: BTreeSet<&String> = r.intersection(&w).collect();
    if shared.is_empty() {
        return Ok(BTreeSet::new());
    }

    let mut referenced_shared: BTreeSet<PathKey> = BTreeSet::new();
    for f in &shared {
        if let Some(fdb) = db.funcs.get(*f) {
            referenced_shared.extend(fdb.referenced.iter().cloned());
        }
    }

    let mut on_read: BTreeMap<PathKey, BTreeSet<String>> = BTreeMap::new();
    let mut on_write: BTreeMap<PathKey, BTreeSet<String>> = BTreeMap::new();
    for (fname, fdb) in &db.funcs {
        let in_r = r.contains(fname);
        let in_w = w.contains(fname);
        if !in_r && !in_w {
            continue;
        }
        for ev in &fdb.assigns {
            if let Some(m) = &ev.bare_macro {
                if in_r {
                    on_read.entry(ev.dst.clone()).or_default().insert(m.clone());
                }
                if in_w {
                    on_write.entry(ev.dst.clone()).or_default().insert(m.clone());
                }
            }
        }
    }

    let mut out = BTreeSet::new();
    for key in &referenced_shared {
        if matches!(db.ty_of(key), Some(Ty::ObjRef(_) | Ty::Data | Ty::FnRef(_) | Ty::PageRef)) {
            continue;
        }
        let (Some(cr), Some(cw)) = (on_read.get(key), on_write.get(key)) else {
            continue;
        };
        if !cr.is_empty() && !cw.is_empty() && cr.intersection(cw).next().is_none() {
            out.insert(key.clone());
        }
    }
    Ok(out)
}
