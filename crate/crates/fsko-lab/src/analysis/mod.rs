//! Static discovery of file-system key objects: anchor identification,
//! cross-layer flag/reference propagation, and page-bridge discovery.
//!
//! Propagation is field-sensitive and flow-insensitive: nodes are canonical
//! access paths (plus function-scoped locals), edges come from assignments
//! and call bindings, and a per-anchor worklist closes over them. Locals
//! carry taint but only record fields are emitted as candidates.

mod anchors;
mod bridges;
mod callgraph;
mod db;
pub mod oracle;
mod propagate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{AccessPath, PathKey, TypedCorpus};

pub use anchors::{find_metadata_anchors, suggest_operation_anchors};
pub use bridges::{discover_bridges, BridgeRecord};
pub use callgraph::{alias_map, build_callgraph, CallEdge, CallGraph};
pub use db::{build_db, classify_expr, RhsKind, StmtDb};
pub use propagate::{propagate_flags, propagate_refs, PropagationResult};

/// Semantic class of a candidate field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SemanticClass {
    #[serde(rename = "Metadata.Permission")]
    Permission,
    #[serde(rename = "Metadata.Owner")]
    Owner,
    #[serde(rename = "Content.PageCacheRef")]
    PageCacheRef,
    #[serde(rename = "Content.Sector")]
    Sector,
    #[serde(rename = "Operation")]
    Operation,
    #[serde(rename = "CowFlag")]
    CowFlag,
}

impl SemanticClass {
    /// Flag classes propagate over assignment/bitwise edges; the two
    /// content classes over assignment/arithmetic edges.
    pub fn is_flag(self) -> bool {
        !matches!(self, SemanticClass::PageCacheRef | SemanticClass::Sector)
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Permission => "Metadata.Permission",
            SemanticClass::Owner => "Metadata.Owner",
            SemanticClass::PageCacheRef => "Content.PageCacheRef",
            SemanticClass::Sector => "Content.Sector",
            SemanticClass::Operation => "Operation",
            SemanticClass::CowFlag => "CowFlag",
        }
    }
}

impl std::fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Where candidate objects of a record live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Heap,
    Stack,
}

/// One step of a propagation trace, replayable against the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule: String,
    pub from: String,
    pub to: String,
    pub site: String,
}

/// A discovered candidate field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FskoCandidate {
    pub record: String,
    pub path: String,
    pub class: SemanticClass,
    pub location: Location,
    pub cache: Vec<String>,
    pub trace: Vec<TraceStep>,
}

impl FskoCandidate {
    pub fn access_path(&self) -> Option<AccessPath> {
        AccessPath::parse(&self.path)
    }
}

/// Anchor configuration: macro groups for the metadata rule plus seeded
/// content/operation anchor paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSpec {
    #[serde(rename = "macroSets")]
    pub macro_sets: MacroSets,
    pub seeds: Vec<AnchorSeed>,
    /// Entry pair for the operation-anchor assistant, when tagged.
    #[serde(rename = "operationPair", default)]
    pub operation_pair: Option<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacroSets {
    #[serde(rename = "requestMask")]
    pub request_mask: Vec<String>,
    #[serde(rename = "modeBits")]
    pub mode_bits: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSeed {
    pub class: SemanticClass,
    pub path: String,
}

impl AnchorSpec {
    pub fn resolve_seed_paths(&self, tc: &TypedCorpus) -> Result<(), String> {
        for s in &self.seeds {
            let p = AccessPath::parse(&s.path).ok_or_else(|| format!("bad seed path `{}`", s.path))?;
            if tc.path_ty(&p).is_none() {
                return Err(format!("seed path `{}` does not resolve", s.path));
            }
        }
        Ok(())
    }
}

/// Everything the analyzer produces for one corpus.
#[derive(Debug)]
pub struct AnalysisOutput {
    pub candidates: Vec<FskoCandidate>,
    pub bridges: Vec<BridgeRecord>,
    pub excluded_wrappers: Vec<String>,
    pub warnings: Vec<String>,
}

/// Run the full static pipeline: metadata anchors, seeded anchors,
/// per-anchor propagation (flags and references), bridge discovery.
/// Per-anchor propagations are independent and run in parallel under the
/// `parallel` feature; the merge is a deterministic set union.
pub fn analyze(tc: &TypedCorpus, spec: &AnchorSpec) -> AnalysisOutput {
    let db = build_db(tc);
    let cg = build_callgraph(tc, &db);

    let mut seeds: Vec<(PathKey, SemanticClass)> = Vec::new();
    for (path, class) in find_metadata_anchors(tc, &db, spec) {
        seeds.push((path, class));
    }
    for seed in &spec.seeds {
        if let Some(p) = AccessPath::parse(&seed.path) {
            seeds.push((PathKey::Field(p), seed.class));
        }
    }
    seeds.sort();
    seeds.dedup();

    let flag_seeds: Vec<_> = seeds.iter().filter(|(_, c)| c.is_flag()).cloned().collect();
    let ref_seeds: Vec<_> = seeds.iter().filter(|(_, c)| !c.is_flag()).cloned().collect();

    let flag_results = crate::par::map_slice(&flag_seeds, |(path, class)| {
        propagate_flags(tc, &db, path, *class)
    });
    let ref_results = crate::par::map_slice(&ref_seeds, |(path, class)| {
        propagate_refs(tc, &db, path, *class)
    });

    let anchor_class: BTreeMap<String, SemanticClass> = seeds
        .iter()
        .filter_map(|(p, c)| match p {
            PathKey::Field(ap) => Some((ap.to_string(), *c)),
            _ => None,
        })
        .collect();
    let mut merged: BTreeMap<String, FskoCandidate> = BTreeMap::new();
    for res in flag_results.iter().chain(ref_results.iter()) {
        for cand in &res.candidates {
            // anchors keep their own class; otherwise first discovery wins
            if let Some(ac) = anchor_class.get(&cand.path) {
                if *ac != cand.class {
                    continue;
                }
            }
            merged.entry(cand.path.clone()).or_insert_with(|| cand.clone());
        }
    }

    let mut candidates: Vec<FskoCandidate> = merged.into_values().collect();
    candidates.sort_by(|a, b| (&a.record, &a.path).cmp(&(&b.record, &b.path)));

    let bridges = discover_bridges(tc, &db, &cg);
    let excluded_wrappers: Vec<String> = db.wrapper_fields.iter().map(|p| p.to_string()).collect();

    AnalysisOutput {
        candidates,
        bridges,
        excluded_wrappers,
        warnings: cg.warnings.clone(),
    }
}

/// Candidate location and cache attribution for a record. Reserved cache
/// names: "stack" marks stack objects, "page" the page allocator, "variable"
/// variable-sized array allocations. Records never allocated by corpus code
/// live in externally provided page frames (the on-disk image case) and
/// report as "page".
pub fn record_placement(db: &StmtDb, record: &str) -> (Location, Vec<String>) {
    match db.alloc_caches.get(record) {
        Some(caches) if !caches.is_empty() => {
            let all: Vec<String> = caches.iter().cloned().collect();
            let loc = if all.iter().all(|c| c == "stack") {
                Location::Stack
            } else {
                Location::Heap
            };
            (loc, all)
        }
        _ => (Location::Heap, vec!["page".to_string()]),
    }
}

/// The set of candidate paths, for set-equality assertions.
pub fn candidate_paths(out: &AnalysisOutput) -> BTreeSet<String> {
    out.candidates.iter().map(|c| c.path.clone()).collect()
}
