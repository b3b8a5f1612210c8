//! Brute-force reference checker for the propagation rules.
//!
//! Recomputes the closure by exhaustive pairwise edge enumeration with
//! whole-set saturation passes — no worklist, no shared extraction code
//! with the production engine. Tests assert the two agree on every bundled
//! corpus.

use std::collections::BTreeSet;

use crate::ir::{Builtin, Expr, FuncDef, Lval, PathKey, Stmt, Ty, TypedCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpMix {
    Bare,
    BitOnly,
    ArithOnly,
    ConstOnly,
    Mixed,
}

#[derive(Debug, Clone)]
struct Fact {
    dst: PathKey,
    dst_ty: Option<Ty>,
    ops: Vec<(PathKey, Option<Ty>)>,
    mix: OpMix,
    repr: String,
    /// (function, branch counter, in-then-arm) for the innermost branch.
    branch: Option<(String, usize, bool)>,
    whole_obj: bool,
}

#[derive(Debug, Clone)]
struct BranchFact {
    key: (String, usize),
    cond_ops: Vec<(PathKey, Option<Ty>)>,
}

struct Facts {
    assigns: Vec<Fact>,
    branches: Vec<BranchFact>,
}

fn mix_of(e: &Expr) -> OpMix {
    fn walk(e: &Expr, bit: &mut bool, ar: &mut bool, cmp: &mut bool) {
        match e {
            Expr::Not(i) => {
                *bit = true;
                walk(i, bit, ar, cmp);
            }
            Expr::Bin(op, a, b) => {
                if op.is_bitwise() {
                    *bit = true;
                } else if op.is_arith() {
                    *ar = true;
                } else {
                    *cmp = true;
                }
                walk(a, bit, ar, cmp);
                walk(b, bit, ar, cmp);
            }
            _ => {}
        }
    }
    if let Expr::Lval(_) = e {
        return OpMix::Bare;
    }
    let (mut bit, mut ar, mut cmp) = (false, false, false);
    walk(e, &mut bit, &mut ar, &mut cmp);
    if cmp || (bit && ar) {
        OpMix::Mixed
    } else if e.lvals().is_empty() {
        OpMix::ConstOnly
    } else if bit {
        OpMix::BitOnly
    } else if ar {
        OpMix::ArithOnly
    } else {
        OpMix::Bare
    }
}

fn repr(e: &Expr) -> String {
    match e {
        Expr::Lval(l) => l.to_string(),
        Expr::Int(v) => v.to_string(),
        Expr::Macro(m) => m.clone(),
        Expr::Not(i) => format!("~({})", repr(i)),
        Expr::Bin(op, a, b) => format!("({} {} {})", repr(a), op.symbol(), repr(b)),
    }
}

fn gather(tc: &TypedCorpus) -> Facts {
    let mut facts = Facts {
        assigns: Vec::new(),
        branches: Vec::new(),
    };
    for f in &tc.corpus.functions {
        let mut counter = 0usize;
        walk_block(tc, f, &f.body, None, &mut counter, &mut facts);
    }
    facts
}

fn keyed(tc: &TypedCorpus, func: &str, l: &Lval) -> (PathKey, Option<Ty>) {
    (tc.canonical_path(func, l), tc.lval_ty(func, l))
}

fn expr_ops(tc: &TypedCorpus, func: &str, e: &Expr) -> Vec<(PathKey, Option<Ty>)> {
    e.lvals().into_iter().map(|l| keyed(tc, func, l)).collect()
}

fn walk_block(
    tc: &TypedCorpus,
    f: &FuncDef,
    stmts: &[Stmt],
    branch: Option<(String, usize, bool)>,
    counter: &mut usize,
    facts: &mut Facts,
) {
    for s in stmts {
        match s {
            Stmt::Assign(l, e) => {
                let (dst, dst_ty) = keyed(tc, &f.name, l);
                let ops = expr_ops(tc, &f.name, e);
                let whole_obj = matches!(e, Expr::Lval(_))
                    && matches!(dst_ty, Some(Ty::ObjRef(_)))
                    && matches!(ops.first(), Some((_, Some(Ty::ObjRef(_)))));
                facts.assigns.push(Fact {
                    dst,
                    dst_ty,
                    ops,
                    mix: mix_of(e),
                    repr: repr(e),
                    branch: branch.clone(),
                    whole_obj,
                });
            }
            Stmt::If { cond, then_blk, else_blk } => {
                let id = *counter;
                *counter += 1;
                facts.branches.push(BranchFact {
                    key: (f.name.clone(), id),
                    cond_ops: expr_ops(tc, &f.name, cond),
                });
                walk_block(tc, f, then_blk, Some((f.name.clone(), id, true)), counter, facts);
                walk_block(tc, f, else_blk, Some((f.name.clone(), id, false)), counter, facts);
            }
            Stmt::Call { func, args } => {
                if let Some(callee) = tc.corpus.function(func) {
                    bind_params(tc, &f.name, callee, args, &branch, facts);
                }
            }
            Stmt::ICall { target, args } => {
                if let PathKey::Field(p) = tc.canonical_path(&f.name, target) {
                    if let Some((rec, field)) = tc.final_field(&p) {
                        for reg in &tc.corpus.registrations {
                            if reg.record == rec && reg.field == field {
                                if let Some(callee) = tc.corpus.function(&reg.func) {
                                    bind_params(tc, &f.name, callee, args, &branch, facts);
                                }
                            }
                        }
                    }
                }
            }
            Stmt::Builtin(Builtin::CopyFromUser(_))
            | Stmt::Builtin(_)
            | Stmt::Free(_)
            | Stmt::Alloc { .. }
            | Stmt::Return(_) => {}
        }
    }
}

fn bind_params(
    tc: &TypedCorpus,
    caller: &str,
    callee: &FuncDef,
    args: &[Expr],
    branch: &Option<(String, usize, bool)>,
    facts: &mut Facts,
) {
    for ((pname, pty), arg) in callee.params.iter().zip(args) {
        facts.assigns.push(Fact {
            dst: PathKey::Local {
                func: callee.name.clone(),
                name: pname.clone(),
            },
            dst_ty: Some(pty.clone()),
            ops: expr_ops(tc, caller, arg),
            mix: mix_of(arg),
            repr: repr(arg),
            branch: branch.clone(),
            whole_obj: false,
        });
    }
}

fn flag_edge(mix: OpMix) -> bool {
    matches!(mix, OpMix::Bare | OpMix::BitOnly)
}

fn ref_edge(mix: OpMix) -> bool {
    matches!(mix, OpMix::Bare | OpMix::ArithOnly)
}

fn arm_ok_flags(mix: OpMix) -> bool {
    matches!(mix, OpMix::Bare | OpMix::BitOnly | OpMix::ConstOnly)
}

fn arm_ok_refs(mix: OpMix) -> bool {
    matches!(mix, OpMix::Bare | OpMix::ArithOnly | OpMix::ConstOnly)
}

fn flag_node(ty: Option<&Ty>) -> bool {
    !matches!(
        ty,
        Some(Ty::ObjRef(_) | Ty::Data | Ty::FnRef(_) | Ty::PageArr(_) | Ty::PageRef)
    )
}

fn ref_node(ty: Option<&Ty>) -> bool {
    !matches!(ty, Some(Ty::ObjRef(_) | Ty::Data | Ty::FnRef(_) | Ty::PageArr(_)))
}

/// Does any arm pair assign `dst` differently under this branch?
fn arms_differ(facts: &Facts, key: &(String, usize), dst: &PathKey, refs: bool) -> bool {
    let mut then_set = BTreeSet::new();
    let mut else_set = BTreeSet::new();
    for a in &facts.assigns {
        let Some((bf, bid, then)) = &a.branch else { continue };
        if (bf.clone(), *bid) != *key || a.dst != *dst {
            continue;
        }
        let ok = if refs { arm_ok_refs(a.mix) } else { arm_ok_flags(a.mix) };
        if !ok {
            continue;
        }
        if *then {
            then_set.insert(a.repr.clone());
        } else {
            else_set.insert(a.repr.clone());
        }
    }
    (!then_set.is_empty() || !else_set.is_empty()) && then_set != else_set
}

fn saturate_data(
    facts: &Facts,
    tracked: &mut BTreeSet<PathKey>,
    edge_ok: fn(OpMix) -> bool,
    node_ok: fn(Option<&Ty>) -> bool,
) -> bool {
    let mut changed = false;
    for a in &facts.assigns {
        if a.whole_obj || !edge_ok(a.mix) || !node_ok(a.dst_ty.as_ref()) {
            continue;
        }
        let dst_in = tracked.contains(&a.dst);
        let any_op_in = a
            .ops
            .iter()
            .any(|(k, t)| node_ok(t.as_ref()) && tracked.contains(k));
        if dst_in {
            for (k, t) in &a.ops {
                if node_ok(t.as_ref()) && tracked.insert(k.clone()) {
                    changed = true;
                }
            }
        }
        if any_op_in && tracked.insert(a.dst.clone()) {
            changed = true;
        }
    }
    changed
}

/// Flag closure from a seed, by saturation.
pub fn oracle_flags(tc: &TypedCorpus, seed: &PathKey) -> BTreeSet<PathKey> {
    let facts = gather(tc);
    let mut tracked: BTreeSet<PathKey> = BTreeSet::new();
    tracked.insert(seed.clone());
    loop {
        let mut changed = saturate_data(&facts, &mut tracked, flag_edge, flag_node);
        // control rule
        for b in &facts.branches {
            let dsts: BTreeSet<PathKey> = facts
                .assigns
                .iter()
                .filter(|a| {
                    matches!(&a.branch, Some((bf, bid, _)) if (bf.clone(), *bid) == b.key)
                })
                .map(|a| a.dst.clone())
                .collect();
            for dst in dsts {
                if tracked.contains(&dst) && arms_differ(&facts, &b.key, &dst, false) {
                    for (c, t) in &b.cond_ops {
                        if matches!(c, PathKey::Global(_)) || !flag_node(t.as_ref()) {
                            continue;
                        }
                        if tracked.insert(c.clone()) {
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
    tracked
}

/// Reference closure plus copy-on-write condition fields, by saturation.
pub fn oracle_refs(tc: &TypedCorpus, seed: &PathKey) -> (BTreeSet<PathKey>, BTreeSet<PathKey>) {
    let facts = gather(tc);
    let mut tracked: BTreeSet<PathKey> = BTreeSet::new();
    tracked.insert(seed.clone());
    while saturate_data(&facts, &mut tracked, ref_edge, ref_node) {}

    let mut cow_conds: BTreeSet<PathKey> = BTreeSet::new();
    for b in &facts.branches {
        let dsts: BTreeSet<PathKey> = facts
            .assigns
            .iter()
            .filter(|a| matches!(&a.branch, Some((bf, bid, _)) if (bf.clone(), *bid) == b.key))
            .map(|a| a.dst.clone())
            .collect();
        for dst in dsts {
            if tracked.contains(&dst) && arms_differ(&facts, &b.key, &dst, true) {
                for (c, _) in &b.cond_ops {
                    if !matches!(c, PathKey::Global(_)) {
                        cow_conds.insert(c.clone());
                    }
                }
            }
        }
    }

    // close condition variables over flag edges down to fields
    let mut cow_fields: BTreeSet<PathKey> = BTreeSet::new();
    for c in &cow_conds {
        let mut seen: BTreeSet<PathKey> = BTreeSet::new();
        seen.insert(c.clone());
        while saturate_data(&facts, &mut seen, flag_edge, flag_node) {}
        for k in seen {
            if matches!(k, PathKey::Field(_)) {
                cow_fields.insert(k);
            }
        }
    }
    (tracked, cow_fields)
}
