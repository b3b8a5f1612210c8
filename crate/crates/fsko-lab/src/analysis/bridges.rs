//! Bridge-object discovery: records holding page references whose pages a
//! user can read or write through entry-reachable copy paths.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ir::{PathKey, Ty, TypedCorpus};

use super::callgraph::CallGraph;
use super::db::{RhsKind, StmtDb};
use super::record_placement;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeRecord {
    pub record: String,
    /// Page-reference field paths of the record.
    #[serde(rename = "pageFields")]
    pub page_fields: Vec<String>,
    #[serde(rename = "readCapable")]
    pub read_capable: bool,
    #[serde(rename = "writeCapable")]
    pub write_capable: bool,
    pub cache: Vec<String>,
}

/// Every record with a page-reference field that an entry-reachable
/// `page_read`/`page_write` dereferences; records whose page fields no entry
/// can reach are excluded.
pub fn discover_bridges(tc: &TypedCorpus, db: &StmtDb, cg: &CallGraph) -> Vec<BridgeRecord> {
    // candidate records and their page fields
    let mut page_fields: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for rec in &tc.corpus.records {
        for (fname, fty) in &rec.fields {
            if matches!(fty, Ty::PageRef | Ty::PageArr(_)) {
                page_fields
                    .entry(rec.name.clone())
                    .or_default()
                    .push(format!("{}.{}", rec.name, fname));
            }
        }
    }
    if page_fields.is_empty() {
        return Vec::new();
    }

    // functions reachable from any entry
    let mut reachable: BTreeSet<String> = BTreeSet::new();
    for f in &tc.corpus.functions {
        if f.entry {
            reachable.extend(cg.reachable(&f.name));
        }
    }

    // page-reference assignment edges (pure copies only)
    let mut adj: BTreeMap<PathKey, Vec<PathKey>> = BTreeMap::new();
    for fdb in db.funcs.values() {
        for ev in &fdb.assigns {
            if ev.kind != RhsKind::Pure || !matches!(ev.dst_ty, Some(Ty::PageRef)) {
                continue;
            }
            for (op, oty) in &ev.operands {
                if !matches!(oty, Some(Ty::PageRef)) {
                    continue;
                }
                adj.entry(ev.dst.clone()).or_default().push(op.clone());
                adj.entry(op.clone()).or_default().push(ev.dst.clone());
            }
        }
    }

    let deref_fields = |start: &[(PathKey, Option<Ty>)]| -> BTreeSet<String> {
        let mut seen: BTreeSet<PathKey> = start.iter().map(|(k, _)| k.clone()).collect();
        let mut q: VecDeque<PathKey> = seen.iter().cloned().collect();
        while let Some(n) = q.pop_front() {
            if let Some(nbrs) = adj.get(&n) {
                for nb in nbrs {
                    if seen.insert(nb.clone()) {
                        q.push_back(nb.clone());
                    }
                }
            }
        }
        seen.into_iter()
            .filter_map(|k| match k {
                PathKey::Field(p) => Some(p.to_string()),
                _ => None,
            })
            .collect()
    };

    let mut readable: BTreeSet<String> = BTreeSet::new();
    let mut writable: BTreeSet<String> = BTreeSet::new();
    for (fname, fdb) in &db.funcs {
        if !reachable.contains(fname) {
            continue;
        }
        for b in &fdb.builtins {
            match b.which {
                "page_read" => readable.extend(deref_fields(&b.addr_operands)),
                "page_write" => writable.extend(deref_fields(&b.addr_operands)),
                _ => {}
            }
        }
    }

    let mut out = Vec::new();
    for (rec, fields) in page_fields {
        let read_capable = fields.iter().any(|f| readable.contains(f));
        let write_capable = fields.iter().any(|f| writable.contains(f));
        if !read_capable && !write_capable {
            continue;
        }
        let (_, cache) = record_placement(db, &rec);
        out.push(BridgeRecord {
            record: rec,
            page_fields: fields,
            read_capable,
            write_capable,
            cache,
        });
    }
    out.sort_by(|a, b| a.record.cmp(&b.record));
    out
}
