//! Name resolution and statement-tree checks.
//!
//! Runs after parsing and before layout so that `layout_types` is total.
//! Locals are typed by their first assignment; a local assigned in both arms
//! of a branch with the same type survives the join, otherwise it stays
//! arm-scoped.

use std::collections::BTreeMap;

use super::parse::RawItems;
use super::{
    Builtin, Corpus, Expr, FuncDef, IrError, IrResult, Lval, Stmt, Ty, CURRENT_UID,
};

/// Expression type lattice used during checking. `IntLit` unifies with any
/// scalar or sector slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ETy {
    Scalar,
    IntLit,
    Sector,
    Data,
    ObjRef(String),
    PageRef,
    FnRef(Vec<Ty>),
}

impl ETy {
    fn of(ty: &Ty) -> Option<ETy> {
        Some(match ty {
            t if t.is_scalar() => ETy::Scalar,
            Ty::Sector => ETy::Sector,
            Ty::Data => ETy::Data,
            Ty::ObjRef(r) => ETy::ObjRef(r.clone()),
            Ty::PageRef => ETy::PageRef,
            Ty::FnRef(sig) => ETy::FnRef(sig.clone()),
            Ty::PageArr(_) => return None,
            _ => unreachable!(),
        })
    }

    fn store_ty(&self) -> Ty {
        match self {
            ETy::Scalar | ETy::IntLit => Ty::U64,
            ETy::Sector => Ty::Sector,
            ETy::Data => Ty::Data,
            ETy::ObjRef(r) => Ty::ObjRef(r.clone()),
            ETy::PageRef => Ty::PageRef,
            ETy::FnRef(sig) => Ty::FnRef(sig.clone()),
        }
    }
}

fn scalarish(e: &ETy) -> bool {
    matches!(e, ETy::Scalar | ETy::IntLit)
}

pub fn validate(items: RawItems) -> IrResult<Corpus> {
    let mut corpus = Corpus {
        macros: items.macros,
        records: items.records,
        functions: items.functions,
        registrations: items.registrations,
    };

    check_unique(corpus.macros.iter().map(|m| m.name.as_str()), "macro")?;
    check_unique(corpus.records.iter().map(|r| r.name.as_str()), "record")?;
    check_unique(corpus.functions.iter().map(|f| f.name.as_str()), "function")?;

    // Record field types resolve; field names unique per record.
    for rec in &corpus.records {
        check_unique(rec.fields.iter().map(|(n, _)| n.as_str()), "field")?;
        for (_, ty) in &rec.fields {
            resolve_ty(&corpus, ty)?;
        }
    }

    // Function signatures resolve; entry params restricted.
    for f in &corpus.functions {
        check_unique(f.params.iter().map(|(n, _)| n.as_str()), "parameter")?;
        for (_, ty) in &f.params {
            resolve_ty(&corpus, ty)?;
            if f.entry && !(ty.is_scalar() || matches!(ty, Ty::Data | Ty::ObjRef(_))) {
                return Err(IrError::BadFunction {
                    func: f.name.clone(),
                    msg: format!("entry parameters must be scalar, data or ref, got `{ty}`"),
                });
            }
        }
        if let Some(r) = &f.ret {
            resolve_ty(&corpus, r)?;
        }
    }

    // Registrations target fnref fields with matching signatures.
    for reg in &corpus.registrations {
        let target = format!("{}.{}", reg.record, reg.field);
        let rec = corpus.record(&reg.record).ok_or_else(|| IrError::BadRegistration {
            target: target.clone(),
            msg: format!("unknown record `{}`", reg.record),
        })?;
        let fty = rec.field_ty(&reg.field).ok_or_else(|| IrError::BadRegistration {
            target: target.clone(),
            msg: format!("record `{}` has no field `{}`", reg.record, reg.field),
        })?;
        let sig = match fty {
            Ty::FnRef(sig) => sig.clone(),
            other => {
                return Err(IrError::BadRegistration {
                    target,
                    msg: format!("field is `{other}`, not fnref"),
                })
            }
        };
        let func = corpus.function(&reg.func).ok_or_else(|| IrError::BadRegistration {
            target: target.clone(),
            msg: format!("unknown function `{}`", reg.func),
        })?;
        let ptys: Vec<Ty> = func.params.iter().map(|(_, t)| t.clone()).collect();
        if ptys != sig {
            return Err(IrError::BadRegistration {
                target,
                msg: format!("signature mismatch registering `{}`", reg.func),
            });
        }
    }

    // Check bodies, rewriting bare macro names as we go.
    let macro_names: Vec<String> = corpus.macros.iter().map(|m| m.name.clone()).collect();
    let mut rewritten = Vec::new();
    for f in &corpus.functions {
        let mut chk = FnChecker {
            corpus: &corpus,
            macro_names: &macro_names,
            func: f,
            env: f.params.iter().cloned().collect(),
        };
        let body = chk.block(&f.body)?;
        let mut nf = f.clone();
        nf.body = body;
        rewritten.push(nf);
    }
    corpus.functions = rewritten;
    Ok(corpus)
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>, kind: &'static str) -> IrResult<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(IrError::DuplicateName {
                kind,
                name: n.to_string(),
            });
        }
    }
    Ok(())
}

fn resolve_ty(corpus: &Corpus, ty: &Ty) -> IrResult<()> {
    match ty {
        Ty::ObjRef(r) => {
            if corpus.record(r).is_none() {
                return Err(IrError::UnresolvedType { name: r.clone() });
            }
        }
        Ty::FnRef(sig) => {
            for t in sig {
                resolve_ty(corpus, t)?;
            }
        }
        _ => {}
    }
    Ok(())
}

struct FnChecker<'a> {
    corpus: &'a Corpus,
    macro_names: &'a [String],
    func: &'a FuncDef,
    env: BTreeMap<String, Ty>,
}

impl<'a> FnChecker<'a> {
    fn fail(&self, msg: impl Into<String>) -> IrError {
        IrError::BadFunction {
            func: self.func.name.clone(),
            msg: msg.into(),
        }
    }

    fn is_macro(&self, name: &str) -> bool {
        self.macro_names.iter().any(|m| m == name)
    }

    fn block(&mut self, stmts: &[Stmt]) -> IrResult<Vec<Stmt>> {
        let mut out = Vec::new();
        for s in stmts {
            out.push(self.stmt(s)?);
        }
        Ok(out)
    }

    fn stmt(&mut self, s: &Stmt) -> IrResult<Stmt> {
        Ok(match s {
            Stmt::Assign(l, e) => {
                let e = self.rewrite(e)?;
                let ety = self.expr_ty(&e)?;
                self.bind(l, &ety, &e)?;
                Stmt::Assign(l.clone(), e)
            }
            Stmt::Alloc { dst, record, cache } => {
                if self.corpus.record(record).is_none() {
                    return Err(IrError::UnresolvedType { name: record.clone() });
                }
                self.bind(dst, &ETy::ObjRef(record.clone()), &Expr::Int(0))?;
                Stmt::Alloc {
                    dst: dst.clone(),
                    record: record.clone(),
                    cache: cache.clone(),
                }
            }
            Stmt::Free(l) => {
                let t = self.lval_ty(l)?;
                if !matches!(t, ETy::ObjRef(_)) {
                    return Err(self.fail(format!("free of non-ref `{l}`")));
                }
                Stmt::Free(l.clone())
            }
            Stmt::If { cond, then_blk, else_blk } => {
                let cond = self.rewrite(cond)?;
                let cty = self.expr_ty(&cond)?;
                if !scalarish(&cty) {
                    return Err(self.fail(format!("branch condition must be scalar, got `{cond:?}`")));
                }
                let saved = self.env.clone();
                let then_blk = self.block(then_blk)?;
                let then_env = std::mem::replace(&mut self.env, saved.clone());
                let else_blk = self.block(else_blk)?;
                let else_env = std::mem::replace(&mut self.env, saved);
                // locals assigned identically in both arms survive the join
                for (name, ty) in &then_env {
                    if !self.env.contains_key(name) && else_env.get(name) == Some(ty) {
                        self.env.insert(name.clone(), ty.clone());
                    }
                }
                Stmt::If { cond, then_blk, else_blk }
            }
            Stmt::Call { func, args } => {
                let callee = self
                    .corpus
                    .function(func)
                    .ok_or_else(|| self.fail(format!("call to unknown function `{func}`")))?;
                let args = self.check_args(args, &callee.params.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>(), func)?;
                Stmt::Call {
                    func: func.clone(),
                    args,
                }
            }
            Stmt::ICall { target, args } => {
                let t = self.lval_ty(target)?;
                let sig = match t {
                    ETy::FnRef(sig) => sig,
                    _ => return Err(self.fail(format!("icall through non-fnref `{target}`"))),
                };
                if target.fields.is_empty() {
                    return Err(self.fail("icall target must be a fnref field"));
                }
                let args = self.check_args(args, &sig, &target.to_string())?;
                Stmt::ICall {
                    target: target.clone(),
                    args,
                }
            }
            Stmt::Return(e) => match (e, &self.func.ret) {
                (None, _) => Stmt::Return(None),
                (Some(e), Some(rt)) => {
                    let e = self.rewrite(e)?;
                    let ety = self.expr_ty(&e)?;
                    self.check_fits(&ety, rt, "return value")?;
                    Stmt::Return(Some(e))
                }
                (Some(_), None) => {
                    return Err(self.fail("return with value in function without return type"))
                }
            },
            Stmt::Builtin(b) => Stmt::Builtin(match b {
                Builtin::CopyToUser(e) => {
                    let e = self.rewrite(e)?;
                    let t = self.expr_ty(&e)?;
                    if !(scalarish(&t) || t == ETy::Data) {
                        return Err(self.fail("copy_to_user takes data or scalar"));
                    }
                    Builtin::CopyToUser(e)
                }
                Builtin::CopyFromUser(l) => {
                    self.bind(l, &ETy::Data, &Expr::Int(0))?;
                    Builtin::CopyFromUser(l.clone())
                }
                Builtin::PageRead(e, l) => {
                    let e = self.rewrite(e)?;
                    if self.expr_ty(&e)? != ETy::PageRef {
                        return Err(self.fail("page_read takes a pageref"));
                    }
                    self.bind(l, &ETy::Data, &Expr::Int(0))?;
                    Builtin::PageRead(e, l.clone())
                }
                Builtin::PageWrite(e1, e2) => {
                    let e1 = self.rewrite(e1)?;
                    let e2 = self.rewrite(e2)?;
                    if self.expr_ty(&e1)? != ETy::PageRef {
                        return Err(self.fail("page_write takes a pageref"));
                    }
                    if self.expr_ty(&e2)? != ETy::Data {
                        return Err(self.fail("page_write takes data"));
                    }
                    Builtin::PageWrite(e1, e2)
                }
                Builtin::DiskRead(e, l) => {
                    let e = self.rewrite(e)?;
                    let t = self.expr_ty(&e)?;
                    if !(t == ETy::Sector || t == ETy::IntLit) {
                        return Err(self.fail("disk_read takes a sector"));
                    }
                    self.bind(l, &ETy::Data, &Expr::Int(0))?;
                    Builtin::DiskRead(e, l.clone())
                }
                Builtin::DiskWrite(e1, e2) => {
                    let e1 = self.rewrite(e1)?;
                    let e2 = self.rewrite(e2)?;
                    let t = self.expr_ty(&e1)?;
                    if !(t == ETy::Sector || t == ETy::IntLit) {
                        return Err(self.fail("disk_write takes a sector"));
                    }
                    if self.expr_ty(&e2)? != ETy::Data {
                        return Err(self.fail("disk_write takes data"));
                    }
                    Builtin::DiskWrite(e1, e2)
                }
            }),
        })
    }

    fn check_args(&mut self, args: &[Expr], sig: &[Ty], what: &str) -> IrResult<Vec<Expr>> {
        if args.len() != sig.len() {
            return Err(self.fail(format!(
                "`{what}` expects {} argument(s), got {}",
                sig.len(),
                args.len()
            )));
        }
        let mut out = Vec::new();
        for (a, t) in args.iter().zip(sig) {
            let a = self.rewrite(a)?;
            let aty = self.expr_ty(&a)?;
            self.check_fits(&aty, t, what)?;
            out.push(a);
        }
        Ok(out)
    }

    fn check_fits(&self, ety: &ETy, slot: &Ty, what: &str) -> IrResult<()> {
        let ok = match slot {
            Ty::U8 | Ty::U16 | Ty::U32 | Ty::U64 | Ty::I32 => scalarish(ety),
            Ty::Sector => matches!(ety, ETy::Sector | ETy::IntLit),
            Ty::Data => *ety == ETy::Data,
            Ty::ObjRef(r) => matches!(ety, ETy::ObjRef(r2) if r2 == r),
            Ty::PageRef => *ety == ETy::PageRef,
            Ty::FnRef(_) | Ty::PageArr(_) => false,
        };
        if ok {
            Ok(())
        } else {
            Err(self.fail(format!("type mismatch for {what}: `{slot}` slot")))
        }
    }

    /// Bind an assignment target. Plain names become (or re-check) locals;
    /// field targets must already type-check.
    fn bind(&mut self, l: &Lval, ety: &ETy, _src: &Expr) -> IrResult<()> {
        if l.fields.is_empty() {
            if l.base == CURRENT_UID {
                return Err(self.fail("cannot assign to current_uid"));
            }
            if self.is_macro(&l.base) && !self.env.contains_key(&l.base) {
                return Err(self.fail(format!("cannot assign to macro `{}`", l.base)));
            }
            match self.env.get(&l.base) {
                Some(existing) => {
                    self.check_fits(ety, &existing.clone(), &l.base.clone())?;
                }
                None => {
                    self.env.insert(l.base.clone(), ety.store_ty());
                }
            }
            Ok(())
        } else {
            let slot = self.lval_ty(l)?;
            match &slot {
                ETy::FnRef(_) => Err(self.fail(format!("cannot assign to fnref field `{l}`"))),
                _ => self.check_fits(ety, &slot.store_ty(), &l.to_string()),
            }
        }
    }

    fn lval_ty(&self, l: &Lval) -> IrResult<ETy> {
        if l.fields.len() > 4 {
            return Err(self.fail(format!("access path `{l}` exceeds depth 4")));
        }
        let mut cur: ETy = if l.base == CURRENT_UID {
            if !l.fields.is_empty() {
                return Err(self.fail("current_uid has no fields"));
            }
            return Ok(ETy::Scalar);
        } else {
            match self.env.get(&l.base) {
                Some(t) => ETy::of(t).ok_or_else(|| self.fail(format!("`{}` is not addressable", l.base)))?,
                None => {
                    return Err(self.fail(format!(
                        "`{}` is not a parameter, local or global",
                        l.base
                    )))
                }
            }
        };
        for f in &l.fields {
            let rec_name = match &cur {
                ETy::ObjRef(r) => r.clone(),
                _ => return Err(self.fail(format!("`{l}`: `{f}` selected on non-record"))),
            };
            let rec = self
                .corpus
                .record(&rec_name)
                .ok_or_else(|| IrError::UnresolvedType { name: rec_name.clone() })?;
            let fty = rec
                .field_ty(f)
                .ok_or_else(|| self.fail(format!("record `{rec_name}` has no field `{f}`")))?;
            cur = ETy::of(fty).ok_or_else(|| self.fail(format!("field `{rec_name}.{f}` is not addressable")))?;
        }
        Ok(cur)
    }

    /// Rewrite bare names that resolve to macros into `Expr::Macro`.
    /// Params and locals shadow macros.
    fn rewrite(&self, e: &Expr) -> IrResult<Expr> {
        Ok(match e {
            Expr::Lval(l) if l.fields.is_empty() => {
                if !self.env.contains_key(&l.base) && l.base != CURRENT_UID && self.is_macro(&l.base) {
                    Expr::Macro(l.base.clone())
                } else {
                    Expr::Lval(l.clone())
                }
            }
            Expr::Lval(l) => Expr::Lval(l.clone()),
            Expr::Int(v) => Expr::Int(*v),
            Expr::Macro(m) => Expr::Macro(m.clone()),
            Expr::Not(inner) => Expr::Not(Box::new(self.rewrite(inner)?)),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(self.rewrite(a)?),
                Box::new(self.rewrite(b)?),
            ),
        })
    }

    fn expr_ty(&self, e: &Expr) -> IrResult<ETy> {
        Ok(match e {
            Expr::Int(_) | Expr::Macro(_) => ETy::IntLit,
            Expr::Lval(l) => self.lval_ty(l)?,
            Expr::Not(inner) => {
                let t = self.expr_ty(inner)?;
                if !scalarish(&t) {
                    return Err(self.fail("`~` applies to scalars"));
                }
                ETy::Scalar
            }
            Expr::Bin(op, a, b) => {
                let ta = self.expr_ty(a)?;
                let tb = self.expr_ty(b)?;
                let sector_side = ta == ETy::Sector || tb == ETy::Sector;
                let both_ok = (scalarish(&ta) || ta == ETy::Sector) && (scalarish(&tb) || tb == ETy::Sector);
                if !both_ok {
                    return Err(self.fail(format!(
                        "operator `{}` applies to scalar/sector operands",
                        op.symbol()
                    )));
                }
                if op.is_compare() {
                    ETy::Scalar
                } else if sector_side {
                    // sector arithmetic with scalars keeps the sector tag
                    ETy::Sector
                } else {
                    ETy::Scalar
                }
            }
        })
    }
}

/// Recompute the local/param symbol table of one function (types as fixed by
/// `validate`). Used by layout to answer canonicalization queries.
pub fn function_symbols(corpus: &Corpus, f: &FuncDef) -> BTreeMap<String, Ty> {
    let mut env: BTreeMap<String, Ty> = f.params.iter().cloned().collect();
    collect_block(corpus, &f.body, &mut env);
    env
}

fn collect_block(corpus: &Corpus, stmts: &[Stmt], env: &mut BTreeMap<String, Ty>) {
    for s in stmts {
        match s {
            Stmt::Assign(l, e) => {
                if l.fields.is_empty() && !env.contains_key(&l.base) {
                    if let Some(t) = infer_ty(corpus, e, env) {
                        env.insert(l.base.clone(), t);
                    }
                }
            }
            Stmt::Alloc { dst, record, .. } => {
                if dst.fields.is_empty() && !env.contains_key(&dst.base) {
                    env.insert(dst.base.clone(), Ty::ObjRef(record.clone()));
                }
            }
            Stmt::If { then_blk, else_blk, .. } => {
                // join semantics match validation: both arms, same type
                let mut te = env.clone();
                collect_block(corpus, then_blk, &mut te);
                let mut ee = env.clone();
                collect_block(corpus, else_blk, &mut ee);
                for (k, v) in &te {
                    if !env.contains_key(k) && ee.get(k) == Some(v) {
                        env.insert(k.clone(), v.clone());
                    }
                }
            }
            Stmt::Builtin(Builtin::CopyFromUser(l))
            | Stmt::Builtin(Builtin::PageRead(_, l))
            | Stmt::Builtin(Builtin::DiskRead(_, l)) => {
                if l.fields.is_empty() && !env.contains_key(&l.base) {
                    env.insert(l.base.clone(), Ty::Data);
                }
            }
            _ => {}
        }
    }
}

fn infer_ty(corpus: &Corpus, e: &Expr, env: &BTreeMap<String, Ty>) -> Option<Ty> {
    match e {
        Expr::Int(_) | Expr::Macro(_) | Expr::Not(_) => Some(Ty::U64),
        Expr::Lval(l) => lval_ty_in(corpus, l, env),
        Expr::Bin(op, a, b) => {
            let ta = infer_ty(corpus, a, env);
            let tb = infer_ty(corpus, b, env);
            if op.is_compare() {
                Some(Ty::U64)
            } else if ta == Some(Ty::Sector) || tb == Some(Ty::Sector) {
                Some(Ty::Sector)
            } else {
                Some(Ty::U64)
            }
        }
    }
}

pub fn lval_ty_in(corpus: &Corpus, l: &Lval, env: &BTreeMap<String, Ty>) -> Option<Ty> {
    if l.base == CURRENT_UID {
        return if l.fields.is_empty() { Some(Ty::U32) } else { None };
    }
    let mut cur = env.get(&l.base)?.clone();
    for f in &l.fields {
        let rec = match &cur {
            Ty::ObjRef(r) => corpus.record(r)?,
            _ => return None,
        };
        cur = rec.field_ty(f)?.clone();
    }
    Some(cur)
}
