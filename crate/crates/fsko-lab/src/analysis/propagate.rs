//! Worklist fixpoint over flag/reference edges with per-candidate traces.
//!
//! Flag rule: assignment and bitwise edges (`&`, `|`, `~`, `^`), both
//! directions, plus the control rule — a variable in a branch condition
//! whose arms assign a tracked flag different values becomes tracked.
//! Arithmetic never propagates flags.
//!
//! Reference rule: assignment and arithmetic edges (`+`, `-`, `*`, shifts),
//! both directions; bitwise never propagates references. A branch whose
//! arms assign a tracked reference differently emits the condition's flag
//! variable as a copy-on-write candidate. Object-reference fields assigned
//! whole records are wrappers and are never emitted.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::ir::{PathKey, Ty, TypedCorpus};

use super::db::{Arm, RhsKind, StmtDb};
use super::{record_placement, FskoCandidate, SemanticClass, TraceStep};

#[derive(Debug)]
pub struct PropagationResult {
    pub anchor: PathKey,
    pub class: SemanticClass,
    pub tracked: BTreeSet<PathKey>,
    /// Copy-on-write condition fields, refs mode only.
    pub cow_fields: BTreeSet<PathKey>,
    pub candidates: Vec<FskoCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Flags,
    Refs,
}

fn edge_kind_ok(mode: Mode, kind: RhsKind) -> Option<&'static str> {
    match (mode, kind) {
        (_, RhsKind::Pure) => Some("assign"),
        (Mode::Flags, RhsKind::Bitwise) => Some("bitwise"),
        (Mode::Refs, RhsKind::Arith) => Some("arith"),
        _ => None,
    }
}

fn endpoint_ok(mode: Mode, ty: Option<&Ty>) -> bool {
    match ty {
        Some(Ty::ObjRef(_) | Ty::Data | Ty::FnRef(_) | Ty::PageArr(_)) => false,
        Some(Ty::PageRef) => mode == Mode::Refs,
        _ => true,
    }
}

/// Arm assignments eligible for the control rules.
fn arm_assign_ok(mode: Mode, kind: RhsKind) -> bool {
    match mode {
        Mode::Flags => matches!(kind, RhsKind::Pure | RhsKind::Bitwise | RhsKind::Const),
        Mode::Refs => matches!(kind, RhsKind::Pure | RhsKind::Arith | RhsKind::Const),
    }
}

struct Graph {
    adj: BTreeMap<PathKey, Vec<(PathKey, &'static str, String)>>,
}

impl Graph {
    fn build(db: &StmtDb, mode: Mode) -> Graph {
        let mut adj: BTreeMap<PathKey, Vec<(PathKey, &'static str, String)>> = BTreeMap::new();
        for fdb in db.funcs.values() {
            for ev in &fdb.assigns {
                let Some(rule) = edge_kind_ok(mode, ev.kind) else {
                    continue;
                };
                if ev.whole_obj {
                    continue;
                }
                if !endpoint_ok(mode, ev.dst_ty.as_ref()) {
                    continue;
                }
                for (op, oty) in &ev.operands {
                    if !endpoint_ok(mode, oty.as_ref()) {
                        continue;
                    }
                    let site = ev.site.to_string();
                    adj.entry(op.clone()).or_default().push((
                        ev.dst.clone(),
                        rule,
                        site.clone(),
                    ));
                    adj.entry(ev.dst.clone()).or_default().push((
                        op.clone(),
                        rule,
                        site,
                    ));
                }
            }
        }
        Graph { adj }
    }
}

/// Branch arm summary: per destination, the canonical RHS strings assigned
/// in each arm (restricted to control-eligible assignment kinds).
fn branch_arms(
    db: &StmtDb,
    mode: Mode,
) -> BTreeMap<(String, usize), BTreeMap<PathKey, (BTreeSet<String>, BTreeSet<String>)>> {
    let mut out: BTreeMap<(String, usize), BTreeMap<PathKey, (BTreeSet<String>, BTreeSet<String>)>> =
        BTreeMap::new();
    for (fname, fdb) in &db.funcs {
        for ev in &fdb.assigns {
            let Some(bid) = ev.branch else { continue };
            if !arm_assign_ok(mode, ev.kind) {
                continue;
            }
            let entry = out
                .entry((fname.clone(), bid))
                .or_default()
                .entry(ev.dst.clone())
                .or_default();
            match ev.arm {
                Arm::Then => {
                    entry.0.insert(ev.repr.clone());
                }
                Arm::Else => {
                    entry.1.insert(ev.repr.clone());
                }
                Arm::None => {}
            }
        }
    }
    out
}

fn bfs(
    graph: &Graph,
    tracked: &mut BTreeSet<PathKey>,
    parent: &mut BTreeMap<PathKey, TraceStep>,
    queue: &mut VecDeque<PathKey>,
) {
    while let Some(n) = queue.pop_front() {
        if let Some(nbrs) = graph.adj.get(&n) {
            for (nb, rule, site) in nbrs {
                if tracked.insert(nb.clone()) {
                    parent.insert(
                        nb.clone(),
                        TraceStep {
                            rule: rule.to_string(),
                            from: n.to_string(),
                            to: nb.to_string(),
                            site: site.clone(),
                        },
                    );
                    queue.push_back(nb.clone());
                }
            }
        }
    }
}

fn trace_of(parent: &BTreeMap<PathKey, TraceStep>, anchor: &PathKey, node: &PathKey) -> Vec<TraceStep> {
    let mut steps = Vec::new();
    let mut cur = node.to_string();
    let anchor_s = anchor.to_string();
    let mut cur_key = node.clone();
    while cur != anchor_s {
        match parent.get(&cur_key) {
            Some(step) => {
                steps.push(step.clone());
                // find the key whose display equals step.from
                cur = step.from.clone();
                cur_key = parse_back(&cur, parent, anchor);
            }
            None => break,
        }
    }
    steps.reverse();
    let mut full = vec![TraceStep {
        rule: "anchor".to_string(),
        from: anchor_s.clone(),
        to: anchor_s,
        site: String::new(),
    }];
    full.extend(steps);
    full
}

/// Recover the PathKey for a displayed node name by scanning known keys.
fn parse_back(
    display: &str,
    parent: &BTreeMap<PathKey, TraceStep>,
    anchor: &PathKey,
) -> PathKey {
    if anchor.to_string() == display {
        return anchor.clone();
    }
    for k in parent.keys() {
        if k.to_string() == display {
            return k.clone();
        }
    }
    anchor.clone()
}

fn run(
    tc: &TypedCorpus,
    db: &StmtDb,
    anchor: &PathKey,
    class: SemanticClass,
    mode: Mode,
) -> PropagationResult {
    let graph = Graph::build(db, mode);
    let arms = branch_arms(db, mode);
    let branch_conds: BTreeMap<(String, usize), (Vec<(PathKey, Option<Ty>)>, String)> = db
        .funcs
        .iter()
        .flat_map(|(fname, fdb)| {
            fdb.branches.iter().map(move |b| {
                (
                    (fname.clone(), b.id),
                    (b.cond_operands.clone(), b.site.to_string()),
                )
            })
        })
        .collect();

    let mut tracked: BTreeSet<PathKey> = BTreeSet::new();
    let mut parent: BTreeMap<PathKey, TraceStep> = BTreeMap::new();
    let mut queue: VecDeque<PathKey> = VecDeque::new();
    tracked.insert(anchor.clone());
    queue.push_back(anchor.clone());

    // cow discoveries: condition operand -> (via node, site)
    let mut cow_hits: BTreeMap<PathKey, (PathKey, String)> = BTreeMap::new();

    loop {
        bfs(&graph, &mut tracked, &mut parent, &mut queue);
        let mut fired = false;
        for (key, per_dst) in &arms {
            let Some((cond_ops, site)) = branch_conds.get(key) else {
                continue;
            };
            for (dst, (then_reprs, else_reprs)) in per_dst {
                if !tracked.contains(dst) || then_reprs == else_reprs {
                    continue;
                }
                match mode {
                    Mode::Flags => {
                        for (c, cty) in cond_ops {
                            if matches!(c, PathKey::Global(_)) || !endpoint_ok(mode, cty.as_ref()) {
                                continue;
                            }
                            if tracked.insert(c.clone()) {
                                parent.insert(
                                    c.clone(),
                                    TraceStep {
                                        rule: "control-flag".to_string(),
                                        from: dst.to_string(),
                                        to: c.to_string(),
                                        site: site.clone(),
                                    },
                                );
                                queue.push_back(c.clone());
                                fired = true;
                            }
                        }
                    }
                    Mode::Refs => {
                        for (c, _) in cond_ops {
                            if matches!(c, PathKey::Global(_)) {
                                continue;
                            }
                            cow_hits
                                .entry(c.clone())
                                .or_insert_with(|| (dst.clone(), site.clone()));
                        }
                    }
                }
            }
        }
        if !fired && queue.is_empty() {
            break;
        }
    }

    // close cow condition operands over flag edges to reach field paths
    let mut cow_fields: BTreeSet<PathKey> = BTreeSet::new();
    let mut cow_traces: BTreeMap<PathKey, Vec<TraceStep>> = BTreeMap::new();
    if mode == Mode::Refs && !cow_hits.is_empty() {
        let flag_graph = Graph::build(db, Mode::Flags);
        for (cond, (via, site)) in &cow_hits {
            let mut seen: BTreeSet<PathKey> = BTreeSet::new();
            let mut par: BTreeMap<PathKey, TraceStep> = BTreeMap::new();
            let mut q: VecDeque<PathKey> = VecDeque::new();
            seen.insert(cond.clone());
            q.push_back(cond.clone());
            bfs(&flag_graph, &mut seen, &mut par, &mut q);
            for node in &seen {
                if let PathKey::Field(_) = node {
                    if cow_fields.insert(node.clone()) {
                        let mut t = trace_of(&parent, anchor, via);
                        t.push(TraceStep {
                            rule: "cow-branch".to_string(),
                            from: via.to_string(),
                            to: cond.to_string(),
                            site: site.clone(),
                        });
                        if node != cond {
                            for step in trace_of(&par, cond, node).into_iter().skip(1) {
                                t.push(step);
                            }
                        }
                        cow_traces.insert(node.clone(), t);
                    }
                }
            }
        }
    }

    let mut candidates = Vec::new();
    for node in &tracked {
        if let PathKey::Field(path) = node {
            if db.wrapper_fields.contains(path) {
                continue;
            }
            let Some((owner_rec, _)) = tc.final_field(path) else {
                continue;
            };
            let (location, cache) = record_placement(db, &owner_rec);
            candidates.push(FskoCandidate {
                record: path.base.clone(),
                path: path.to_string(),
                class,
                location,
                cache,
                trace: trace_of(&parent, anchor, node),
            });
        }
    }
    for node in &cow_fields {
        if let PathKey::Field(path) = node {
            if db.wrapper_fields.contains(path) {
                continue;
            }
            let Some((owner_rec, _)) = tc.final_field(path) else {
                continue;
            };
            let (location, cache) = record_placement(db, &owner_rec);
            candidates.push(FskoCandidate {
                record: path.base.clone(),
                path: path.to_string(),
                class: SemanticClass::CowFlag,
                location,
                cache,
                trace: cow_traces.get(node).cloned().unwrap_or_default(),
            });
        }
    }
    candidates.sort_by(|a, b| (&a.record, &a.path).cmp(&(&b.record, &b.path)));

    PropagationResult {
        anchor: anchor.clone(),
        class,
        tracked,
        cow_fields,
        candidates,
    }
}

/// Flag propagation from one anchor.
pub fn propagate_flags(
    tc: &TypedCorpus,
    db: &StmtDb,
    anchor: &PathKey,
    class: SemanticClass,
) -> PropagationResult {
    run(tc, db, anchor, class, Mode::Flags)
}

/// Reference propagation from one anchor (page-cache or sector seeds),
/// emitting copy-on-write flag candidates along the way.
pub fn propagate_refs(
    tc: &TypedCorpus,
    db: &StmtDb,
    anchor: &PathKey,
    class: SemanticClass,
) -> PropagationResult {
    run(tc, db, anchor, class, Mode::Refs)
}
