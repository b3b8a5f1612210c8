//! Flattened statement database over a typed corpus: every assignment, call,
//! branch and builtin, with canonical paths for all operands. The anchor
//! finder, the propagation engine and the bridge query all walk this instead
//! of the raw AST.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{AccessPath, Builtin, Expr, Lval, PathKey, Stmt, Ty, TypedCorpus};

/// How a right-hand side combines its operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsKind {
    /// A single bare lvalue.
    Pure,
    /// Only `&`, `|`, `^`, `~` between operands/constants.
    Bitwise,
    /// Only `+`, `-`, `*`, `<<`, `>>`.
    Arith,
    /// A constant or macro with no lvalue operands.
    Const,
    /// Comparisons or a mixture of operator classes: carries no semantics.
    Opaque,
}

pub fn classify_expr(e: &Expr) -> RhsKind {
    match e {
        Expr::Lval(_) => RhsKind::Pure,
        Expr::Int(_) | Expr::Macro(_) => RhsKind::Const,
        _ => {
            let mut has_bit = false;
            let mut has_arith = false;
            let mut has_cmp = false;
            scan_ops(e, &mut has_bit, &mut has_arith, &mut has_cmp);
            let lv = e.lvals();
            if has_cmp || (has_bit && has_arith) {
                RhsKind::Opaque
            } else if lv.is_empty() {
                RhsKind::Const
            } else if has_bit {
                RhsKind::Bitwise
            } else if has_arith {
                RhsKind::Arith
            } else {
                RhsKind::Pure
            }
        }
    }
}

fn scan_ops(e: &Expr, bit: &mut bool, arith: &mut bool, cmp: &mut bool) {
    match e {
        Expr::Not(inner) => {
            *bit = true;
            scan_ops(inner, bit, arith, cmp);
        }
        Expr::Bin(op, a, b) => {
            if op.is_bitwise() {
                *bit = true;
            } else if op.is_arith() {
                *arith = true;
            } else {
                *cmp = true;
            }
            scan_ops(a, bit, arith, cmp);
            scan_ops(b, bit, arith, cmp);
        }
        _ => {}
    }
}

/// A stable statement address for traces and alias maps.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Site {
    pub func: String,
    pub index: usize,
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.func, self.index)
    }
}

/// One assignment event (includes call-argument/parameter bindings).
#[derive(Debug, Clone)]
pub struct AssignEvent {
    pub dst: PathKey,
    pub dst_ty: Option<Ty>,
    pub kind: RhsKind,
    pub operands: Vec<(PathKey, Option<Ty>)>,
    /// Macros mentioned anywhere in the RHS.
    pub macros: Vec<String>,
    /// RHS rendered canonically, for arm-difference comparisons.
    pub repr: String,
    pub site: Site,
    /// Innermost enclosing branch, if any.
    pub branch: Option<BranchId>,
    /// Which arm of that branch.
    pub arm: Arm,
    /// Set when the RHS is a bare lvalue of object-reference type: the
    /// wrapper-exclusion rule keys on these.
    pub whole_obj: bool,
    /// True for a bare `P = MACRO` (or a bare macro call argument).
    pub bare_macro: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    None,
    Then,
    Else,
}

pub type BranchId = usize;

#[derive(Debug, Clone)]
pub struct BranchEvent {
    pub id: BranchId,
    pub site: Site,
    pub cond_operands: Vec<(PathKey, Option<Ty>)>,
    pub cond_repr: String,
}

#[derive(Debug, Clone)]
pub struct CallEvent {
    pub site: Site,
    /// Direct callee, or all indirect candidates for an icall.
    pub callees: Vec<String>,
    pub is_indirect: bool,
    /// For icalls: owning record and field name of the fnref.
    pub icall_key: Option<(String, String)>,
    pub args: Vec<Expr>,
}

#[derive(Debug, Clone)]
pub struct BuiltinEvent {
    pub site: Site,
    pub which: &'static str,
    /// Canonical paths of the page/sector argument operands.
    pub addr_operands: Vec<(PathKey, Option<Ty>)>,
    /// Branch context, mirroring assignments.
    pub branch: Option<BranchId>,
    pub arm: Arm,
}

/// Bitwise operations appearing in *any* expression context, for the
/// metadata anchor rule.
#[derive(Debug, Clone)]
pub struct BitwiseUse {
    pub site: Site,
    /// Operand groups on the two sides of the operator.
    pub left: Vec<PathKey>,
    pub right: Vec<PathKey>,
    pub left_macros: Vec<String>,
    pub right_macros: Vec<String>,
}

#[derive(Debug, Default)]
pub struct FuncDb {
    pub assigns: Vec<AssignEvent>,
    pub branches: Vec<BranchEvent>,
    pub calls: Vec<CallEvent>,
    pub builtins: Vec<BuiltinEvent>,
    pub bitwise_uses: Vec<BitwiseUse>,
    /// Every path referenced (read or written) anywhere in the function.
    pub referenced: BTreeSet<PathKey>,
}

#[derive(Debug)]
pub struct StmtDb {
    pub funcs: BTreeMap<String, FuncDb>,
    /// record name -> cache names it is allocated in.
    pub alloc_caches: BTreeMap<String, BTreeSet<String>>,
    /// Explicitly excluded wrapper fields: object-reference fields assigned
    /// a whole record.
    pub wrapper_fields: BTreeSet<AccessPath>,
    pub node_ty: BTreeMap<PathKey, Ty>,
}

impl StmtDb {
    pub fn ty_of(&self, key: &PathKey) -> Option<&Ty> {
        self.node_ty.get(key)
    }
}

struct Extractor<'a> {
    tc: &'a TypedCorpus,
    func: String,
    db: FuncDb,
    node_ty: BTreeMap<PathKey, Ty>,
    alloc_caches: BTreeMap<String, BTreeSet<String>>,
    wrapper_fields: BTreeSet<AccessPath>,
    next_site: usize,
    branch_stack: Vec<(BranchId, Arm)>,
}

impl<'a> Extractor<'a> {
    fn site(&mut self) -> Site {
        let s = Site {
            func: self.func.clone(),
            index: self.next_site,
        };
        self.next_site += 1;
        s
    }

    fn key(&mut self, l: &Lval) -> (PathKey, Option<Ty>) {
        let k = self.tc.canonical_path(&self.func, l);
        let ty = self.tc.lval_ty(&self.func, l);
        if let Some(t) = &ty {
            self.node_ty.entry(k.clone()).or_insert_with(|| t.clone());
        }
        self.db.referenced.insert(k.clone());
        (k, ty)
    }

    fn operands(&mut self, e: &Expr) -> Vec<(PathKey, Option<Ty>)> {
        e.lvals().into_iter().map(|l| self.key(l)).collect()
    }

    fn macro_names(e: &Expr) -> Vec<String> {
        e.macros().into_iter().map(|s| s.to_string()).collect()
    }

    fn ctx(&self) -> (Option<BranchId>, Arm) {
        match self.branch_stack.last() {
            Some((id, arm)) => (Some(*id), *arm),
            None => (None, Arm::None),
        }
    }

    fn collect_bitwise(&mut self, e: &Expr, site: &Site) {
        match e {
            Expr::Bin(op, a, b) if op.is_bitwise() => {
                let left = a.lvals().into_iter().map(|l| self.key(l).0).collect();
                let right = b.lvals().into_iter().map(|l| self.key(l).0).collect();
                self.db.bitwise_uses.push(BitwiseUse {
                    site: site.clone(),
                    left,
                    right,
                    left_macros: Self::macro_names(a),
                    right_macros: Self::macro_names(b),
                });
                self.collect_bitwise(a, site);
                self.collect_bitwise(b, site);
            }
            Expr::Bin(_, a, b) => {
                self.collect_bitwise(a, site);
                self.collect_bitwise(b, site);
            }
            Expr::Not(inner) => self.collect_bitwise(inner, site),
            _ => {}
        }
    }

    fn push_assign(&mut self, dst: &Lval, rhs: &Expr) {
        let site = self.site();
        self.collect_bitwise(rhs, &site);
        let (dkey, dty) = self.key(dst);
        let kind = classify_expr(rhs);
        let operands = self.operands(rhs);
        let whole_obj = matches!(rhs, Expr::Lval(_))
            && matches!(dty, Some(Ty::ObjRef(_)))
            && matches!(operands.first(), Some((_, Some(Ty::ObjRef(_)))));
        if whole_obj {
            if let PathKey::Field(p) = &dkey {
                self.wrapper_fields.insert(p.clone());
            }
        }
        let bare_macro = match rhs {
            Expr::Macro(m) => Some(m.clone()),
            _ => None,
        };
        let (branch, arm) = self.ctx();
        self.db.assigns.push(AssignEvent {
            dst: dkey,
            dst_ty: dty,
            kind,
            operands,
            macros: Self::macro_names(rhs),
            repr: expr_repr(rhs),
            site,
            branch,
            arm,
            whole_obj,
            bare_macro,
        });
    }

    /// Parameter binding for one call argument, modeled as an assignment to
    /// the callee-scoped local.
    fn push_param_bind(&mut self, callee: &str, pname: &str, pty: &Ty, arg: &Expr, site: &Site) {
        let dst = PathKey::Local {
            func: callee.to_string(),
            name: pname.to_string(),
        };
        self.node_ty.entry(dst.clone()).or_insert_with(|| pty.clone());
        let kind = classify_expr(arg);
        let operands = self.operands(arg);
        let bare_macro = match arg {
            Expr::Macro(m) => Some(m.clone()),
            _ => None,
        };
        let (branch, arm) = self.ctx();
        self.db.assigns.push(AssignEvent {
            dst,
            dst_ty: Some(pty.clone()),
            kind,
            operands,
            macros: Self::macro_names(arg),
            repr: expr_repr(arg),
            site: site.clone(),
            branch,
            arm,
            whole_obj: false,
            bare_macro,
        });
    }

    fn block(&mut self, stmts: &[Stmt], callgraph_targets: &dyn Fn(&(String, String)) -> Vec<String>) {
        for s in stmts {
            match s {
                Stmt::Assign(l, e) => self.push_assign(l, e),
                Stmt::Alloc { dst, record, cache } => {
                    let _site = self.site();
                    let (dkey, _) = self.key(dst);
                    let _ = dkey;
                    self.alloc_caches
                        .entry(record.clone())
                        .or_default()
                        .insert(cache.clone());
                }
                Stmt::Free(l) => {
                    let _site = self.site();
                    self.key(l);
                }
                Stmt::If { cond, then_blk, else_blk } => {
                    let site = self.site();
                    self.collect_bitwise(cond, &site);
                    let cond_operands = self.operands(cond);
                    let id = self.db.branches.len();
                    self.db.branches.push(BranchEvent {
                        id,
                        site,
                        cond_operands,
                        cond_repr: expr_repr(cond),
                    });
                    self.branch_stack.push((id, Arm::Then));
                    self.block(then_blk, callgraph_targets);
                    self.branch_stack.pop();
                    self.branch_stack.push((id, Arm::Else));
                    self.block(else_blk, callgraph_targets);
                    self.branch_stack.pop();
                }
                Stmt::Call { func, args } => {
                    let site = self.site();
                    for a in args {
                        self.collect_bitwise(a, &site);
                    }
                    if let Some(callee) = self.tc.corpus.function(func) {
                        let params = callee.params.clone();
                        for ((pname, pty), arg) in params.iter().zip(args) {
                            self.push_param_bind(func, pname, pty, arg, &site);
                        }
                    }
                    self.db.calls.push(CallEvent {
                        site,
                        callees: vec![func.clone()],
                        is_indirect: false,
                        icall_key: None,
                        args: args.clone(),
                    });
                }
                Stmt::ICall { target, args } => {
                    let site = self.site();
                    self.key(target);
                    for a in args {
                        self.collect_bitwise(a, &site);
                    }
                    let key = self.icall_field_key(target);
                    let callees = match &key {
                        Some(k) => callgraph_targets(k),
                        None => Vec::new(),
                    };
                    for callee in &callees {
                        if let Some(cf) = self.tc.corpus.function(callee) {
                            let params = cf.params.clone();
                            for ((pname, pty), arg) in params.iter().zip(args) {
                                self.push_param_bind(callee, pname, pty, arg, &site);
                            }
                        }
                    }
                    self.db.calls.push(CallEvent {
                        site,
                        callees,
                        is_indirect: true,
                        icall_key: key,
                        args: args.clone(),
                    });
                }
                Stmt::Return(Some(e)) => {
                    let site = self.site();
                    self.collect_bitwise(e, &site);
                    self.operands(e);
                }
                Stmt::Return(None) => {
                    self.site();
                }
                Stmt::Builtin(b) => {
                    let site = self.site();
                    let (which, addr_expr, out_lval, val_expr): (
                        &'static str,
                        Option<&Expr>,
                        Option<&Lval>,
                        Option<&Expr>,
                    ) = match b {
                        Builtin::CopyToUser(e) => ("copy_to_user", None, None, Some(e)),
                        Builtin::CopyFromUser(l) => ("copy_from_user", None, Some(l), None),
                        Builtin::PageRead(e, l) => ("page_read", Some(e), Some(l), None),
                        Builtin::PageWrite(e, v) => ("page_write", Some(e), None, Some(v)),
                        Builtin::DiskRead(e, l) => ("disk_read", Some(e), Some(l), None),
                        Builtin::DiskWrite(e, v) => ("disk_write", Some(e), None, Some(v)),
                    };
                    let addr_operands = match addr_expr {
                        Some(e) => {
                            self.collect_bitwise(e, &site);
                            self.operands(e)
                        }
                        None => Vec::new(),
                    };
                    if let Some(l) = out_lval {
                        self.key(l);
                    }
                    if let Some(e) = val_expr {
                        self.operands(e);
                    }
                    let (branch, arm) = self.ctx();
                    self.db.builtins.push(BuiltinEvent {
                        site,
                        which,
                        addr_operands,
                        branch,
                        arm,
                    });
                }
            }
        }
    }

    /// Owning record and field name of an icall target's final fnref field.
    fn icall_field_key(&self, target: &Lval) -> Option<(String, String)> {
        if target.fields.is_empty() {
            return None;
        }
        let path = match self.tc.canonical_path(&self.func, target) {
            PathKey::Field(p) => p,
            _ => return None,
        };
        self.tc.final_field(&path)
    }
}

pub fn expr_repr(e: &Expr) -> String {
    match e {
        Expr::Lval(l) => l.to_string(),
        Expr::Int(v) => v.to_string(),
        Expr::Macro(m) => m.clone(),
        Expr::Not(i) => format!("~({})", expr_repr(i)),
        Expr::Bin(op, a, b) => format!("({} {} {})", expr_repr(a), op.symbol(), expr_repr(b)),
    }
}

/// Resolve registration targets for an icall field key: every function
/// registered into exactly that (record, field).
pub fn registration_targets(tc: &TypedCorpus, key: &(String, String)) -> Vec<String> {
    tc.corpus
        .registrations
        .iter()
        .filter(|r| r.record == key.0 && r.field == key.1)
        .map(|r| r.func.clone())
        .collect()
}

/// Build the statement database for a typed corpus.
pub fn build_db(tc: &TypedCorpus) -> StmtDb {
    let mut funcs = BTreeMap::new();
    let mut alloc_caches: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut wrapper_fields = BTreeSet::new();
    let mut node_ty = BTreeMap::new();
    let resolver = |key: &(String, String)| registration_targets(tc, key);
    for f in &tc.corpus.functions {
        let mut ex = Extractor {
            tc,
            func: f.name.clone(),
            db: FuncDb::default(),
            node_ty: BTreeMap::new(),
            alloc_caches: BTreeMap::new(),
            wrapper_fields: BTreeSet::new(),
            next_site: 0,
            branch_stack: Vec::new(),
        };
        ex.block(&f.body, &resolver);
        // register parameter nodes even when unused
        for (pname, pty) in &f.params {
            let k = PathKey::Local {
                func: f.name.clone(),
                name: pname.clone(),
            };
            ex.node_ty.entry(k).or_insert_with(|| pty.clone());
        }
        for (k, v) in ex.node_ty {
            node_ty.entry(k).or_insert(v);
        }
        for (rec, caches) in ex.alloc_caches {
            alloc_caches.entry(rec).or_default().extend(caches);
        }
        wrapper_fields.extend(ex.wrapper_fields);
        funcs.insert(f.name.clone(), ex.db);
    }
    // field paths referenced nowhere still deserve type entries (declared
    // fields are owner-anchor candidates by name)
    for rec in &tc.corpus.records {
        for (fname, fty) in &rec.fields {
            let key = PathKey::Field(AccessPath {
                base: rec.name.clone(),
                chain: vec![fname.clone()],
            });
            node_ty.entry(key).or_insert_with(|| fty.clone());
        }
    }
    StmtDb {
        funcs,
        alloc_caches,
        wrapper_fields,
        node_ty,
    }
}
