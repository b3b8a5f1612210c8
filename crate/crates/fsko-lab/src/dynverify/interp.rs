//! Big-step interpreter for corpus entry functions, with record/patch taps
//! at field-access granularity.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ir::{
    AccessPath, Builtin, Expr, FuncDef, Lval, PathKey, Stmt, Ty, TypedCorpus, CURRENT_UID,
};

use super::{addr_to_page, page_addr, FileWorld};

pub const STEP_BUDGET: u64 = 1_000_000;

const TAG_PLAIN: u64 = 1 << 63;
const TAG_HEAP: u64 = 1 << 62;
const TAG_FN: u64 = 1 << 61;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RunError {
    #[error("unknown entry `{0}`")]
    UnknownEntry(String),
    #[error("`{0}` is not an entry function")]
    NotEntry(String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("type fault: {0}")]
    TypeFault(String),
    #[error("unknown path: {0}")]
    UnknownPath(String),
    #[error("recursion detected at `{0}`")]
    Recursion(String),
    #[error("step budget exceeded")]
    StepBudget,
}

type RunResult<T> = Result<T, RunError>;

/// Identity of a live object: interpreter-owned or heap-simulator-owned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ObjId {
    Plain(usize),
    Heap(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(u64),
    Sector(u64),
    Data(Vec<u8>),
    Page(u64),
    Obj(ObjId),
    Fn(String),
    /// FIEMAP-style sector list, from the `get_sector` intrinsic.
    Sectors(Vec<u64>),
    Null,
}

impl Value {
    pub fn as_int(&self) -> Option<u64> {
        match self {
            Value::Int(v) | Value::Sector(v) => Some(*v),
            Value::Null => Some(0),
            _ => None,
        }
    }

    /// Encode to a machine word, as stored in packed heap objects.
    pub fn to_word(&self) -> Option<u64> {
        Some(match self {
            Value::Int(v) | Value::Sector(v) => *v,
            Value::Page(id) => page_addr(*id),
            Value::Obj(ObjId::Plain(i)) => TAG_PLAIN | *i as u64,
            Value::Obj(ObjId::Heap(h)) => TAG_HEAP | *h,
            Value::Fn(_) => return None,
            Value::Null => 0,
            Value::Data(_) | Value::Sectors(_) => return None,
        })
    }
}

/// Decode a stored word according to the slot type.
pub fn word_to_value(word: u64, ty: &Ty, fn_names: &[String]) -> Value {
    match ty {
        t if t.is_scalar() => Value::Int(mask_scalar(word, t)),
        Ty::Sector => Value::Sector(word),
        Ty::PageRef => {
            if word == 0 {
                Value::Null
            } else {
                match addr_to_page(word) {
                    Some(id) => Value::Page(id),
                    None => Value::Null,
                }
            }
        }
        Ty::ObjRef(_) => {
            if word == 0 {
                Value::Null
            } else if word & TAG_PLAIN != 0 {
                Value::Obj(ObjId::Plain((word & !TAG_PLAIN) as usize))
            } else if word & TAG_HEAP != 0 {
                Value::Obj(ObjId::Heap(word & !TAG_HEAP))
            } else {
                Value::Null
            }
        }
        Ty::FnRef(_) => {
            if word & TAG_FN != 0 {
                let idx = (word & !TAG_FN) as usize;
                fn_names
                    .get(idx)
                    .map(|n| Value::Fn(n.clone()))
                    .unwrap_or(Value::Null)
            } else {
                Value::Null
            }
        }
        _ => Value::Null,
    }
}

pub fn mask_scalar(v: u64, ty: &Ty) -> u64 {
    match ty.scalar_bits() {
        Some(64) | None => v,
        Some(bits) => v & ((1u64 << bits) - 1),
    }
}

/// Storage the heap simulator exposes to the interpreter: raw page frames
/// plus the location of packed objects inside them.
pub trait ExternalHeap {
    fn page_bytes(&self, id: u64) -> Option<&[u8]>;
    fn page_bytes_mut(&mut self, id: u64) -> Option<&mut [u8]>;
    /// record name, page id and byte offset of a live object.
    fn obj_location(&self, handle: u64) -> Option<(String, u64, usize)>;
}

#[derive(Debug, Clone)]
struct PlainObj {
    record: String,
    fields: BTreeMap<String, Value>,
    /// Set when this object mirrors an on-disk inode of a world file.
    backing: Option<String>,
    alive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgValue {
    Int(u64),
    Str(String),
    Bound(ObjId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapTarget {
    Field(AccessPath),
    Local { func: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapMode {
    Record,
    Patch(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapPlan {
    pub target: TapTarget,
    pub mode: TapMode,
    /// 1-based access index the tap fires on; `None` fires on every access.
    pub occurrence: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapHit {
    pub access: u64,
    pub old: u64,
    pub new: u64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub result: Value,
    /// One hit list per tap plan, in plan order.
    pub tap_log: Vec<Vec<TapHit>>,
    pub user_out: Vec<Vec<u8>>,
    pub denials: Vec<String>,
}

/// Holds the file world and interpreter-owned objects across several entry
/// runs (an exploit session). Suite verification uses one run per session.
#[derive(Debug)]
pub struct Session {
    pub world: FileWorld,
    plain: Vec<PlainObj>,
}

impl Session {
    pub fn new(world: FileWorld) -> Self {
        Session {
            world,
            plain: Vec::new(),
        }
    }

    pub fn run(
        &mut self,
        tc: &TypedCorpus,
        heap: Option<&mut dyn ExternalHeap>,
        entry: &str,
        args: &[ArgValue],
        taps: &[TapPlan],
        user_data: &[u8],
    ) -> RunResult<RunOutcome> {
        // FIEMAP analog: sector disclosure is provided by the harness, not
        // by corpus code.
        if entry == "get_sector" {
            let path = match args {
                [ArgValue::Str(p)] => p,
                _ => return Err(RunError::BadArgs("get_sector(path)".to_string())),
            };
            let sectors = self
                .world
                .sectors_of(path)
                .ok_or_else(|| RunError::UnknownPath(path.clone()))?;
            return Ok(RunOutcome {
                result: Value::Sectors(sectors),
                tap_log: vec![Vec::new(); taps.len()],
                user_out: Vec::new(),
                denials: Vec::new(),
            });
        }

        let func = tc
            .corpus
            .function(entry)
            .ok_or_else(|| RunError::UnknownEntry(entry.to_string()))?
            .clone();
        if !func.entry {
            return Err(RunError::NotEntry(entry.to_string()));
        }
        if func.params.len() != args.len() {
            return Err(RunError::BadArgs(format!(
                "`{entry}` expects {} args, got {}",
                func.params.len(),
                args.len()
            )));
        }

        // validate taps against slot widths
        for t in taps {
            if let (TapTarget::Field(p), TapMode::Patch(v)) = (&t.target, &t.mode) {
                if let Some(ty) = tc.path_ty(p) {
                    if ty.is_scalar() && mask_scalar(*v, &ty) != *v {
                        return Err(RunError::BadArgs(format!(
                            "patch value {v:#x} does not fit `{p}`"
                        )));
                    }
                }
            }
        }

        let fn_names: Vec<String> = tc.corpus.functions.iter().map(|f| f.name.clone()).collect();
        let mut interp = Interp {
            tc,
            sess: self,
            heap,
            taps,
            tap_counts: vec![0; taps.len()],
            tap_log: vec![Vec::new(); taps.len()],
            steps: 0,
            user_out: Vec::new(),
            denials: Vec::new(),
            user_data: user_data.to_vec(),
            call_stack: Vec::new(),
            fn_names,
        };

        let mut bound = Vec::new();
        for ((pname, pty), arg) in func.params.iter().zip(args) {
            bound.push((pname.clone(), interp.materialize_arg(pty, arg)?));
        }
        let result = interp
            .call_fn(&func, bound.into_iter().map(|(_, v)| v).collect())?
            .unwrap_or(Value::Null);
        Ok(RunOutcome {
            result,
            tap_log: interp.tap_log,
            user_out: interp.user_out,
            denials: interp.denials,
        })
    }

    /// Create an interpreter-owned object (used by tests and the exploit
    /// harness for scratch objects).
    pub fn alloc_plain(&mut self, tc: &TypedCorpus, record: &str) -> Option<ObjId> {
        tc.corpus.record(record)?;
        self.plain.push(PlainObj {
            record: record.to_string(),
            fields: BTreeMap::new(),
            backing: None,
            alive: true,
        });
        Some(ObjId::Plain(self.plain.len() - 1))
    }
}

enum Flow {
    Normal,
    Return(Option<Value>),
}

struct Interp<'t, 's, 'h> {
    tc: &'t TypedCorpus,
    sess: &'s mut Session,
    heap: Option<&'h mut dyn ExternalHeap>,
    taps: &'s [TapPlan],
    tap_counts: Vec<u64>,
    tap_log: Vec<Vec<TapHit>>,
    steps: u64,
    user_out: Vec<Vec<u8>>,
    denials: Vec<String>,
    user_data: Vec<u8>,
    call_stack: Vec<String>,
    fn_names: Vec<String>,
}

impl<'t, 's, 'h> Interp<'t, 's, 'h> {
    fn materialize_arg(&mut self, pty: &Ty, arg: &ArgValue) -> RunResult<Value> {
        match (pty, arg) {
            (t, ArgValue::Int(v)) if t.is_scalar() => Ok(Value::Int(mask_scalar(*v, t))),
            (Ty::Sector, ArgValue::Int(v)) => Ok(Value::Sector(*v)),
            (Ty::Data, ArgValue::Str(s)) => Ok(Value::Data(s.as_bytes().to_vec())),
            (Ty::ObjRef(rec), ArgValue::Str(path)) => {
                if !self.sess.world.files.contains_key(path) {
                    return Err(RunError::UnknownPath(path.clone()));
                }
                self.sess.plain.push(PlainObj {
                    record: rec.clone(),
                    fields: BTreeMap::new(),
                    backing: Some(path.clone()),
                    alive: true,
                });
                Ok(Value::Obj(ObjId::Plain(self.sess.plain.len() - 1)))
            }
            (Ty::ObjRef(rec), ArgValue::Bound(id)) => {
                let actual = self.obj_record(*id)?;
                if &actual != rec {
                    return Err(RunError::BadArgs(format!(
                        "bound object is `{actual}`, parameter wants `{rec}`"
                    )));
                }
                Ok(Value::Obj(*id))
            }
            _ => Err(RunError::BadArgs(format!(
                "argument {arg:?} does not fit `{pty}` parameter"
            ))),
        }
    }

    fn obj_record(&self, id: ObjId) -> RunResult<String> {
        match id {
            ObjId::Plain(i) => self
                .sess
                .plain
                .get(i)
                .filter(|o| o.alive)
                .map(|o| o.record.clone())
                .ok_or_else(|| RunError::TypeFault("dead or unknown object".to_string())),
            ObjId::Heap(h) => match &self.heap {
                Some(heap) => heap
                    .obj_location(h)
                    .map(|(r, _, _)| r)
                    .ok_or_else(|| RunError::TypeFault(format!("dead heap object {h}"))),
                None => Err(RunError::TypeFault("no heap attached".to_string())),
            },
        }
    }

    fn call_fn(&mut self, func: &FuncDef, args: Vec<Value>) -> RunResult<Option<Value>> {
        if self.call_stack.iter().any(|f| f == &func.name) {
            return Err(RunError::Recursion(func.name.clone()));
        }
        self.call_stack.push(func.name.clone());
        let mut locals: BTreeMap<String, Value> = BTreeMap::new();
        for ((pname, _), v) in func.params.iter().zip(args) {
            locals.insert(pname.clone(), v);
        }
        let flow = self.exec_block(&func.name, &func.body, &mut locals)?;
        self.call_stack.pop();
        Ok(match flow {
            Flow::Return(v) => v,
            Flow::Normal => None,
        })
    }

    fn tick(&mut self) -> RunResult<()> {
        self.steps += 1;
        if self.steps > STEP_BUDGET {
            return Err(RunError::StepBudget);
        }
        Ok(())
    }

    fn exec_block(
        &mut self,
        func: &str,
        stmts: &[Stmt],
        locals: &mut BTreeMap<String, Value>,
    ) -> RunResult<Flow> {
        for s in stmts {
            self.tick()?;
            match s {
                Stmt::Assign(l, e) => {
                    let v = self.eval(func, e, locals)?;
                    self.write_lval(func, l, v, locals)?;
                }
                Stmt::Alloc { dst, record, .. } => {
                    let obj = self.alloc_obj(record);
                    self.write_lval(func, dst, obj, locals)?;
                }
                Stmt::Free(l) => {
                    let v = self.read_lval(func, l, locals)?;
                    match v {
                        Value::Obj(ObjId::Plain(i)) => {
                            if let Some(o) = self.sess.plain.get_mut(i) {
                                o.alive = false;
                            }
                        }
                        Value::Obj(ObjId::Heap(_)) | Value::Null => {}
                        other => {
                            return Err(RunError::TypeFault(format!("free of {other:?}")));
                        }
                    }
                }
                Stmt::If { cond, then_blk, else_blk } => {
                    let c = self.eval(func, cond, locals)?;
                    let taken = c.as_int().ok_or_else(|| {
                        RunError::TypeFault("non-scalar branch condition".to_string())
                    })? != 0;
                    let flow = if taken {
                        self.exec_block(func, then_blk, locals)?
                    } else {
                        self.exec_block(func, else_blk, locals)?
                    };
                    if let Flow::Return(v) = flow {
                        return Ok(Flow::Return(v));
                    }
                }
                Stmt::Call { func: callee, args } => {
                    let f = self
                        .tc
                        .corpus
                        .function(callee)
                        .ok_or_else(|| RunError::UnknownPath(format!("function {callee}")))?
                        .clone();
                    let mut vals = Vec::new();
                    for a in args {
                        vals.push(self.eval(func, a, locals)?);
                    }
                    self.call_fn(&f, vals)?;
                }
                Stmt::ICall { target, args } => {
                    let fv = self.read_lval(func, target, locals)?;
                    let name = match fv {
                        Value::Fn(n) => n,
                        Value::Null => {
                            return Err(RunError::TypeFault(format!(
                                "icall through null fnref `{target}`"
                            )))
                        }
                        other => {
                            return Err(RunError::TypeFault(format!("icall through {other:?}")))
                        }
                    };
                    let f = self
                        .tc
                        .corpus
                        .function(&name)
                        .ok_or_else(|| RunError::UnknownPath(format!("function {name}")))?
                        .clone();
                    let mut vals = Vec::new();
                    for a in args {
                        vals.push(self.eval(func, a, locals)?);
                    }
                    self.call_fn(&f, vals)?;
                }
                Stmt::Return(e) => {
                    let v = match e {
                        Some(e) => Some(self.eval(func, e, locals)?),
                        None => None,
                    };
                    return Ok(Flow::Return(v));
                }
                Stmt::Builtin(b) => self.exec_builtin(func, b, locals)?,
            }
        }
        Ok(Flow::Normal)
    }

    fn exec_builtin(
        &mut self,
        func: &str,
        b: &Builtin,
        locals: &mut BTreeMap<String, Value>,
    ) -> RunResult<()> {
        match b {
            Builtin::CopyToUser(e) => {
                let v = self.eval(func, e, locals)?;
                let bytes = match v {
                    Value::Data(d) => d,
                    Value::Int(x) | Value::Sector(x) => x.to_le_bytes().to_vec(),
                    other => {
                        return Err(RunError::TypeFault(format!("copy_to_user of {other:?}")))
                    }
                };
                self.user_out.push(bytes);
            }
            Builtin::CopyFromUser(l) => {
                let d = Value::Data(self.user_data.clone());
                self.write_lval(func, l, d, locals)?;
            }
            Builtin::PageRead(e, l) => {
                let id = self.eval_page(func, e, locals)?;
                let bytes = self.page_get(id)?;
                self.write_lval(func, l, Value::Data(bytes), locals)?;
            }
            Builtin::PageWrite(e, v) => {
                let id = self.eval_page(func, e, locals)?;
                let data = match self.eval(func, v, locals)? {
                    Value::Data(d) => d,
                    other => return Err(RunError::TypeFault(format!("page_write of {other:?}"))),
                };
                self.page_put(id, &data)?;
            }
            Builtin::DiskRead(e, l) => {
                let sector = self.eval_sector(func, e, locals)?;
                let content = self
                    .sess
                    .world
                    .file_by_sector(sector)
                    .map(|(_, f)| f.content.clone())
                    .unwrap_or_default();
                self.write_lval(func, l, Value::Data(content), locals)?;
            }
            Builtin::DiskWrite(e, v) => {
                let sector = self.eval_sector(func, e, locals)?;
                let data = match self.eval(func, v, locals)? {
                    Value::Data(d) => d,
                    other => return Err(RunError::TypeFault(format!("disk_write of {other:?}"))),
                };
                let owner = self
                    .sess
                    .world
                    .file_by_sector(sector)
                    .map(|(p, _)| p.clone());
                if let Some(path) = owner {
                    let sanitized = self.sess.world.policy.sector_sanitization
                        && self.sess.world.policy.whitelist.contains(&path)
                        && self.sess.world.actor_uid != 0;
                    if sanitized {
                        self.denials
                            .push(format!("disk_write to protected sector {sector} denied"));
                    } else if let Some(f) = self.sess.world.files.get_mut(&path) {
                        f.content = data;
                    }
                }
            }
        }
        Ok(())
    }

    fn eval_page(
        &mut self,
        func: &str,
        e: &Expr,
        locals: &mut BTreeMap<String, Value>,
    ) -> RunResult<u64> {
        match self.eval(func, e, locals)? {
            Value::Page(id) => Ok(id),
            Value::Null => Err(RunError::TypeFault("null page reference".to_string())),
            other => Err(RunError::TypeFault(format!("expected page, got {other:?}"))),
        }
    }

    fn eval_sector(
        &mut self,
        func: &str,
        e: &Expr,
        locals: &mut BTreeMap<String, Value>,
    ) -> RunResult<u64> {
        match self.eval(func, e, locals)? {
            Value::Sector(s) | Value::Int(s) => Ok(s),
            other => Err(RunError::TypeFault(format!("expected sector, got {other:?}"))),
        }
    }

    fn page_get(&mut self, id: u64) -> RunResult<Vec<u8>> {
        if let Some(h) = &self.heap {
            if let Some(b) = h.page_bytes(id) {
                return Ok(b.to_vec());
            }
        }
        self.sess
            .world
            .pages
            .get(&id)
            .cloned()
            .ok_or_else(|| RunError::UnknownPath(format!("page {id}")))
    }

    fn page_put(&mut self, id: u64, data: &[u8]) -> RunResult<()> {
        if let Some(h) = &mut self.heap {
            if let Some(b) = h.page_bytes_mut(id) {
                let n = data.len().min(b.len());
                b[..n].copy_from_slice(&data[..n]);
                for x in b[n..].iter_mut() {
                    *x = 0;
                }
                return Ok(());
            }
        }
        match self.sess.world.pages.get_mut(&id) {
            Some(slot) => {
                *slot = data.to_vec();
                Ok(())
            }
            None => Err(RunError::UnknownPath(format!("page {id}"))),
        }
    }

    fn alloc_obj(&mut self, record: &str) -> Value {
        let mut fields = BTreeMap::new();
        if let Some(rec) = self.tc.corpus.record(record) {
            for (fname, fty) in &rec.fields {
                if let Ty::FnRef(_) = fty {
                    let regs: Vec<&str> = self
                        .tc
                        .corpus
                        .registrations
                        .iter()
                        .filter(|r| r.record == record && &r.field == fname)
                        .map(|r| r.func.as_str())
                        .collect();
                    if regs.len() == 1 {
                        fields.insert(fname.clone(), Value::Fn(regs[0].to_string()));
                    }
                }
            }
        }
        self.sess.plain.push(PlainObj {
            record: record.to_string(),
            fields,
            backing: None,
            alive: true,
        });
        Value::Obj(ObjId::Plain(self.sess.plain.len() - 1))
    }

    fn eval(
        &mut self,
        func: &str,
        e: &Expr,
        locals: &mut BTreeMap<String, Value>,
    ) -> RunResult<Value> {
        Ok(match e {
            Expr::Int(v) => Value::Int(*v),
            Expr::Macro(m) => Value::Int(
                self.tc
                    .corpus
                    .macro_value(m)
                    .ok_or_else(|| RunError::UnknownPath(format!("macro {m}")))?,
            ),
            Expr::Lval(l) => self.read_lval(func, l, locals)?,
            Expr::Not(inner) => {
                let v = self.eval(func, inner, locals)?;
                let x = v
                    .as_int()
                    .ok_or_else(|| RunError::TypeFault("~ of non-scalar".to_string()))?;
                Value::Int(!x)
            }
            Expr::Bin(op, a, b) => {
                let va = self.eval(func, a, locals)?;
                let vb = self.eval(func, b, locals)?;
                let (x, y) = match (va.as_int(), vb.as_int()) {
                    (Some(x), Some(y)) => (x, y),
                    _ => {
                        return Err(RunError::TypeFault(format!(
                            "operator `{}` on non-scalars",
                            op.symbol()
                        )))
                    }
                };
                let sectorish =
                    matches!(va, Value::Sector(_)) || matches!(vb, Value::Sector(_));
                use crate::ir::BinOp::*;
                let r = match op {
                    And => x & y,
                    Or => x | y,
                    Xor => x ^ y,
                    Add => x.wrapping_add(y),
                    Sub => x.wrapping_sub(y),
                    Mul => x.wrapping_mul(y),
                    Shl => x.wrapping_shl(y as u32),
                    Shr => x.wrapping_shr(y as u32),
                    Eq => (x == y) as u64,
                    Ne => (x != y) as u64,
                    Lt => (x < y) as u64,
                };
                if sectorish && !op.is_compare() {
                    Value::Sector(r)
                } else {
                    Value::Int(r)
                }
            }
        })
    }

    // ---- lvalue access with taps ----

    fn read_lval(
        &mut self,
        func: &str,
        l: &Lval,
        locals: &mut BTreeMap<String, Value>,
    ) -> RunResult<Value> {
        if l.base == CURRENT_UID && l.fields.is_empty() {
            return Ok(Value::Int(self.sess.world.actor_uid as u64));
        }
        let mut v = locals
            .get(&l.base)
            .cloned()
            .ok_or_else(|| RunError::UnknownPath(format!("{func}: local {}", l.base)))?;
        if l.fields.is_empty() {
            return self.fire_local_tap(func, &l.base, v, None, locals);
        }
        for (i, fname) in l.fields.iter().enumerate() {
            let obj = match v {
                Value::Obj(id) => id,
                Value::Null => {
                    return Err(RunError::TypeFault(format!("null dereference at `{l}`")))
                }
                other => {
                    return Err(RunError::TypeFault(format!(
                        "field access on {other:?} at `{l}`"
                    )))
                }
            };
            let last = i + 1 == l.fields.len();
            v = self.read_field(obj, fname)?;
            if last {
                v = self.apply_field_taps(func, l, obj, fname, v, None)?;
            }
        }
        Ok(v)
    }

    fn write_lval(
        &mut self,
        func: &str,
        l: &Lval,
        v: Value,
        locals: &mut BTreeMap<String, Value>,
    ) -> RunResult<()> {
        if l.fields.is_empty() {
            let v = self.fire_local_tap(func, &l.base, v, Some(()), locals)?;
            locals.insert(l.base.clone(), v);
            return Ok(());
        }
        let mut cur = locals
            .get(&l.base)
            .cloned()
            .ok_or_else(|| RunError::UnknownPath(format!("{func}: local {}", l.base)))?;
        for fname in &l.fields[..l.fields.len() - 1] {
            let obj = match cur {
                Value::Obj(id) => id,
                _ => return Err(RunError::TypeFault(format!("null dereference at `{l}`"))),
            };
            cur = self.read_field(obj, fname)?;
        }
        let obj = match cur {
            Value::Obj(id) => id,
            _ => return Err(RunError::TypeFault(format!("null dereference at `{l}`"))),
        };
        let fname = l.fields.last().unwrap();
        let v = self.apply_field_taps(func, l, obj, fname, v, Some(()))?;
        self.write_field(obj, fname, v)
    }

    /// Taps on a bare local of the given function.
    fn fire_local_tap(
        &mut self,
        func: &str,
        name: &str,
        v: Value,
        _is_write: Option<()>,
        _locals: &mut BTreeMap<String, Value>,
    ) -> RunResult<Value> {
        let mut out = v;
        for (i, tap) in self.taps.iter().enumerate() {
            let TapTarget::Local { func: tf, name: tn } = &tap.target else {
                continue;
            };
            if tf != func || tn != name {
                continue;
            }
            out = self.fire_tap(i, out)?;
        }
        Ok(out)
    }

    /// Taps matching the canonical access path of this field access. A
    /// patched read is forced: the new value is written back to the object.
    fn apply_field_taps(
        &mut self,
        func: &str,
        l: &Lval,
        obj: ObjId,
        fname: &str,
        v: Value,
        is_write: Option<()>,
    ) -> RunResult<Value> {
        let canon = match self.tc.canonical_path(func, l) {
            PathKey::Field(p) => p,
            _ => return Ok(v),
        };
        let mut out = v.clone();
        for (i, tap) in self.taps.iter().enumerate() {
            let TapTarget::Field(p) = &tap.target else {
                continue;
            };
            if *p != canon {
                continue;
            }
            out = self.fire_tap(i, out)?;
        }
        if out != v && is_write.is_none() {
            self.write_field(obj, fname, out.clone())?;
        }
        Ok(out)
    }

    fn fire_tap(&mut self, idx: usize, v: Value) -> RunResult<Value> {
        self.tap_counts[idx] += 1;
        let access = self.tap_counts[idx];
        let old = v.to_word().unwrap_or(0);
        let plan = &self.taps[idx];
        let applies = plan.occurrence.map(|n| n == access).unwrap_or(true);
        let (new_word, out) = match (&plan.mode, applies) {
            (TapMode::Patch(pv), true) => {
                let nv = match &v {
                    Value::Sector(_) => Value::Sector(*pv),
                    Value::Page(_) | Value::Null => match addr_to_page(*pv) {
                        Some(id) => Value::Page(id),
                        None if *pv == 0 => Value::Null,
                        None => Value::Int(*pv),
                    },
                    _ => Value::Int(*pv),
                };
                (*pv, nv)
            }
            _ => (old, v),
        };
        self.tap_log[idx].push(TapHit {
            access,
            old,
            new: new_word,
        });
        Ok(out)
    }

    // ---- object field storage ----

    fn field_ty(&self, record: &str, fname: &str) -> RunResult<Ty> {
        self.tc
            .corpus
            .record(record)
            .and_then(|r| r.field_ty(fname))
            .cloned()
            .ok_or_else(|| RunError::UnknownPath(format!("{record}.{fname}")))
    }

    fn read_field(&mut self, obj: ObjId, fname: &str) -> RunResult<Value> {
        match obj {
            ObjId::Plain(i) => {
                let o = self
                    .sess
                    .plain
                    .get(i)
                    .ok_or_else(|| RunError::TypeFault("unknown object".to_string()))?;
                if !o.alive {
                    return Err(RunError::TypeFault(format!(
                        "use-after-free of `{}` object",
                        o.record
                    )));
                }
                let record = o.record.clone();
                let backing = o.backing.clone();
                if let Some(v) = o.fields.get(fname) {
                    return Ok(v.clone());
                }
                if let Some(path) = backing {
                    if let Some(v) = self.disk_inode_read(&path, fname)? {
                        return Ok(v);
                    }
                }
                let ty = self.field_ty(&record, fname)?;
                Ok(zero_value(&ty))
            }
            ObjId::Heap(h) => {
                let heap = self
                    .heap
                    .as_ref()
                    .ok_or_else(|| RunError::TypeFault("no heap attached".to_string()))?;
                let (record, page, slot) = heap
                    .obj_location(h)
                    .ok_or_else(|| RunError::TypeFault(format!("dead heap object {h}")))?;
                let ty = self.field_ty(&record, fname)?;
                let off = self
                    .tc
                    .layout(&record)
                    .and_then(|lo| lo.offset_of(fname))
                    .ok_or_else(|| RunError::UnknownPath(format!("{record}.{fname}")))?;
                let heap = self.heap.as_ref().unwrap();
                let bytes = heap
                    .page_bytes(page)
                    .ok_or_else(|| RunError::TypeFault(format!("heap page {page} gone")))?;
                Ok(read_packed(bytes, slot + off as usize, &ty, &self.fn_names))
            }
        }
    }

    fn write_field(&mut self, obj: ObjId, fname: &str, v: Value) -> RunResult<()> {
        match obj {
            ObjId::Plain(i) => {
                let o = self
                    .sess
                    .plain
                    .get(i)
                    .ok_or_else(|| RunError::TypeFault("unknown object".to_string()))?;
                if !o.alive {
                    return Err(RunError::TypeFault(format!(
                        "use-after-free of `{}` object",
                        o.record
                    )));
                }
                let record = o.record.clone();
                let backing = o.backing.clone();
                let ty = self.field_ty(&record, fname)?;
                let v = coerce(v, &ty);
                if let Some(path) = backing {
                    if self.disk_inode_write(&path, fname, &v)? {
                        return Ok(());
                    }
                }
                self.sess.plain[i].fields.insert(fname.to_string(), v);
                Ok(())
            }
            ObjId::Heap(h) => {
                let heap = self
                    .heap
                    .as_ref()
                    .ok_or_else(|| RunError::TypeFault("no heap attached".to_string()))?;
                let (record, page, slot) = heap
                    .obj_location(h)
                    .ok_or_else(|| RunError::TypeFault(format!("dead heap object {h}")))?;
                let ty = self.field_ty(&record, fname)?;
                let off = self
                    .tc
                    .layout(&record)
                    .and_then(|lo| lo.offset_of(fname))
                    .ok_or_else(|| RunError::UnknownPath(format!("{record}.{fname}")))?;
                let heap = self.heap.as_mut().unwrap();
                let bytes = heap
                    .page_bytes_mut(page)
                    .ok_or_else(|| RunError::TypeFault(format!("heap page {page} gone")))?;
                write_packed(bytes, slot + off as usize, &ty, &coerce(v, &ty), &self.fn_names)
            }
        }
    }

    /// World-backed reads of the on-disk inode image.
    fn disk_inode_read(&mut self, path: &str, fname: &str) -> RunResult<Option<Value>> {
        let f = self
            .sess
            .world
            .files
            .get(path)
            .ok_or_else(|| RunError::UnknownPath(path.to_string()))?;
        Ok(match fname {
            "i_mode" => Some(Value::Int(f.mode_bits as u64)),
            "i_uid" => Some(Value::Int(f.owner_uid as u64)),
            "i_gid" => Some(Value::Int(f.group_gid as u64)),
            "i_blk" => Some(Value::Sector(f.sectors.first().copied().unwrap_or(0) >> 3)),
            "i_page" => {
                let uncached = self.sess.world.policy.uncache_sensitive
                    && self.sess.world.policy.whitelist.contains(path);
                if uncached {
                    Some(Value::Null)
                } else {
                    match f.cached_pages.first() {
                        Some(p) => Some(Value::Page(*p)),
                        None => Some(Value::Null),
                    }
                }
            }
            _ => None,
        })
    }

    /// Metadata writes to a world-backed disk inode write through; block and
    /// page mirrors stay object-local (handled by the caller's field map).
    fn disk_inode_write(&mut self, path: &str, fname: &str, v: &Value) -> RunResult<bool> {
        let f = self
            .sess
            .world
            .files
            .get_mut(path)
            .ok_or_else(|| RunError::UnknownPath(path.to_string()))?;
        let word = v.to_word().unwrap_or(0);
        match fname {
            "i_mode" => {
                f.mode_bits = (word as u32) & 0o7777;
                Ok(true)
            }
            "i_uid" => {
                f.owner_uid = word as u32;
                Ok(true)
            }
            "i_gid" => {
                f.group_gid = word as u32;
                Ok(true)
            }
            _ => Ok(false),
        }
    }
}

fn zero_value(ty: &Ty) -> Value {
    match ty {
        t if t.is_scalar() => Value::Int(0),
        Ty::Sector => Value::Sector(0),
        Ty::Data => Value::Data(Vec::new()),
        _ => Value::Null,
    }
}

fn coerce(v: Value, ty: &Ty) -> Value {
    match (ty, v) {
        (t, Value::Int(x)) if t.is_scalar() => Value::Int(mask_scalar(x, t)),
        (Ty::Sector, Value::Int(x)) => Value::Sector(x),
        (t, Value::Sector(x)) if t.is_scalar() => Value::Int(mask_scalar(x, t)),
        (_, v) => v,
    }
}

/// Read one field out of packed page bytes.
pub fn read_packed(bytes: &[u8], off: usize, ty: &Ty, fn_names: &[String]) -> Value {
    match ty {
        Ty::Data => {
            let end = (off + 16).min(bytes.len());
            Value::Data(bytes.get(off..end).map(|b| b.to_vec()).unwrap_or_default())
        }
        _ => {
            let size = crate::ir::ty_size(ty).min(8) as usize;
            let mut word = [0u8; 8];
            if off + size <= bytes.len() {
                word[..size].copy_from_slice(&bytes[off..off + size]);
            }
            word_to_value(u64::from_le_bytes(word), ty, fn_names)
        }
    }
}

/// Write one field into packed page bytes.
pub fn write_packed(
    bytes: &mut [u8],
    off: usize,
    ty: &Ty,
    v: &Value,
    fn_names: &[String],
) -> RunResult<()> {
    match (ty, v) {
        (Ty::Data, Value::Data(d)) => {
            let n = d.len().min(16);
            if off + 16 <= bytes.len() {
                bytes[off..off + n].copy_from_slice(&d[..n]);
                for x in bytes[off + n..off + 16].iter_mut() {
                    *x = 0;
                }
            }
            Ok(())
        }
        (_, v) => {
            let word = match v {
                Value::Fn(name) => fn_names
                    .iter()
                    .position(|n| n == name)
                    .map(|i| TAG_FN | i as u64)
                    .unwrap_or(0),
                other => other
                    .to_word()
                    .ok_or_else(|| RunError::TypeFault(format!("cannot pack {other:?}")))?,
            };
            let size = crate::ir::ty_size(ty).min(8) as usize;
            if off + size <= bytes.len() {
                bytes[off..off + size].copy_from_slice(&word.to_le_bytes()[..size]);
            }
            Ok(())
        }
    }
}

/// One-shot entry run over a cloned world: returns the result value, the
/// world after the run, and the tap log.
pub fn run_entry(
    tc: &TypedCorpus,
    entry: &str,
    args: &[ArgValue],
    world: &FileWorld,
    taps: &[TapPlan],
) -> RunResult<(Value, FileWorld, Vec<Vec<TapHit>>)> {
    let mut sess = Session::new(world.clone());
    let out = sess.run(tc, None, entry, args, taps, b"")?;
    Ok((out.result, sess.world, out.tap_log))
}
