//! The textual intermediate representation the toy kernel file subsystem is
//! written in, plus deterministic field layout.
//!
//! A corpus file (`.fir`) declares integer macros, record types, functions
//! and function-pointer registrations. The grammar is LL(1); `#` starts a
//! line comment. [`parse_corpus`] parses and validates, [`layout_types`]
//! assigns byte offsets.

mod layout;
mod lex;
mod parse;
mod pretty;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::{layout_types, ty_align, ty_size, RecordLayout, TypedCorpus};
pub use pretty::pretty_print;

/// Errors produced while parsing or validating a corpus.
#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum IrError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("unresolved type `{name}`")]
    UnresolvedType { name: String },
    #[error("in function `{func}`: {msg}")]
    BadFunction { func: String, msg: String },
    #[error("invalid registration `{target}`: {msg}")]
    BadRegistration { target: String, msg: String },
}

pub type IrResult<T> = Result<T, IrError>;

/// Scalar and reference types a field, parameter or local may carry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ty {
    U8,
    U16,
    U32,
    U64,
    I32,
    /// Disk sector number. Alias of u64 but tagged: participates in +,-,*,<<,>>
    /// with scalars only.
    Sector,
    /// Opaque byte string occupying a fixed 16-byte slot.
    Data,
    /// Reference to a heap object of the named record type.
    ObjRef(String),
    /// Reference to one physical page.
    PageRef,
    /// Fixed-length inline array of page references.
    PageArr(u32),
    /// Function pointer with the given parameter signature.
    FnRef(Vec<Ty>),
}

impl Ty {
    pub fn is_scalar(&self) -> bool {
        matches!(self, Ty::U8 | Ty::U16 | Ty::U32 | Ty::U64 | Ty::I32)
    }

    /// Bit width of scalar storage; scalars are masked to this on store.
    pub fn scalar_bits(&self) -> Option<u32> {
        match self {
            Ty::U8 => Some(8),
            Ty::U16 => Some(16),
            Ty::U32 | Ty::I32 => Some(32),
            Ty::U64 | Ty::Sector => Some(64),
            _ => None,
        }
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::U8 => write!(f, "u8"),
            Ty::U16 => write!(f, "u16"),
            Ty::U32 => write!(f, "u32"),
            Ty::U64 => write!(f, "u64"),
            Ty::I32 => write!(f, "i32"),
            Ty::Sector => write!(f, "sector"),
            Ty::Data => write!(f, "data"),
            Ty::ObjRef(r) => write!(f, "ref<{r}>"),
            Ty::PageRef => write!(f, "pageref"),
            Ty::PageArr(n) => write!(f, "pagearr[{n}]"),
            Ty::FnRef(tys) => {
                write!(f, "fnref(")?;
                for (i, t) in tys.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroDef {
    pub name: String,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDef {
    pub name: String,
    pub fields: Vec<(String, Ty)>,
}

impl RecordDef {
    pub fn field_ty(&self, name: &str) -> Option<&Ty> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Binary operators. `Not` is the only unary op and lives on [`Expr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    And,
    Or,
    Xor,
    Add,
    Sub,
    Mul,
    Shl,
    Shr,
    Eq,
    Ne,
    Lt,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
        }
    }

    pub fn is_bitwise(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or | BinOp::Xor)
    }

    pub fn is_arith(self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Shl | BinOp::Shr
        )
    }

    pub fn is_compare(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt)
    }
}

/// An lvalue: a base name followed by zero or more field selections.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Lval {
    pub base: String,
    pub fields: Vec<String>,
}

impl Lval {
    pub fn local(name: &str) -> Self {
        Lval {
            base: name.to_string(),
            fields: Vec::new(),
        }
    }
}

impl fmt::Display for Lval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base)?;
        for fld in &self.fields {
            write!(f, ".{fld}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Lval(Lval),
    Int(u64),
    /// A name that resolved to a macro. The parser first sees a bare NAME;
    /// validation rewrites it to `Macro` when it matches a macro definition.
    Macro(String),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// All lvalues mentioned anywhere in the expression, left to right.
    pub fn lvals(&self) -> Vec<&Lval> {
        let mut out = Vec::new();
        self.collect_lvals(&mut out);
        out
    }

    fn collect_lvals<'a>(&'a self, out: &mut Vec<&'a Lval>) {
        match self {
            Expr::Lval(l) => out.push(l),
            Expr::Not(e) => e.collect_lvals(out),
            Expr::Bin(_, a, b) => {
                a.collect_lvals(out);
                b.collect_lvals(out);
            }
            _ => {}
        }
    }

    /// Macro names mentioned anywhere in the expression.
    pub fn macros(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_macros(&mut out);
        out
    }

    fn collect_macros<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Macro(m) => out.push(m),
            Expr::Not(e) => e.collect_macros(out),
            Expr::Bin(_, a, b) => {
                a.collect_macros(out);
                b.collect_macros(out);
            }
            _ => {}
        }
    }
}

/// World-coupled builtin statements. These are the only way corpus code
/// touches file content, pages or disk sectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Builtin {
    CopyToUser(Expr),
    CopyFromUser(Lval),
    PageRead(Expr, Lval),
    PageWrite(Expr, Expr),
    DiskRead(Expr, Lval),
    DiskWrite(Expr, Expr),
}

impl Builtin {
    pub fn name(&self) -> &'static str {
        match self {
            Builtin::CopyToUser(_) => "copy_to_user",
            Builtin::CopyFromUser(_) => "copy_from_user",
            Builtin::PageRead(..) => "page_read",
            Builtin::PageWrite(..) => "page_write",
            Builtin::DiskRead(..) => "disk_read",
            Builtin::DiskWrite(..) => "disk_write",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stmt {
    Assign(Lval, Expr),
    Alloc {
        dst: Lval,
        record: String,
        cache: String,
    },
    Free(Lval),
    If {
        cond: Expr,
        then_blk: Vec<Stmt>,
        else_blk: Vec<Stmt>,
    },
    Call {
        func: String,
        args: Vec<Expr>,
    },
    ICall {
        target: Lval,
        args: Vec<Expr>,
    },
    Return(Option<Expr>),
    Builtin(Builtin),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<(String, Ty)>,
    pub ret: Option<Ty>,
    pub body: Vec<Stmt>,
    pub entry: bool,
    /// Entry-pair tag, e.g. "read"/"write" on the two halves of a syscall pair.
    pub pair_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnRegistration {
    pub record: String,
    pub field: String,
    pub func: String,
}

/// A parsed, name-resolved corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub macros: Vec<MacroDef>,
    pub records: Vec<RecordDef>,
    pub functions: Vec<FuncDef>,
    pub registrations: Vec<FnRegistration>,
}

impl Corpus {
    pub fn macro_value(&self, name: &str) -> Option<u64> {
        self.macros.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn record(&self, name: &str) -> Option<&RecordDef> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&FuncDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn macro_map(&self) -> BTreeMap<&str, u64> {
        self.macros.iter().map(|m| (m.name.as_str(), m.value)).collect()
    }
}

/// Name of the single builtin global: the calling user's uid, bound by the
/// interpreter to the acting user. Read-only from corpus code.
pub const CURRENT_UID: &str = "current_uid";

/// Canonical identity of a field access: the base record type plus the field
/// chain, e.g. `(bio, [bi_iter, bi_sector])`. Two lvalues with the same
/// canonical path alias each other across entry functions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AccessPath {
    pub base: String,
    pub chain: Vec<String>,
}

impl AccessPath {
    pub fn new(base: &str, chain: &[&str]) -> Self {
        AccessPath {
            base: base.to_string(),
            chain: chain.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Parse "record.field.field" notation, as used in config files.
    pub fn parse(s: &str) -> Option<Self> {
        let mut parts = s.split('.');
        let base = parts.next()?.to_string();
        let chain: Vec<String> = parts.map(|p| p.to_string()).collect();
        if base.is_empty() || chain.is_empty() || chain.iter().any(|c| c.is_empty()) {
            return None;
        }
        Some(AccessPath { base, chain })
    }
}

impl fmt::Display for AccessPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base)?;
        for c in &self.chain {
            write!(f, ".{c}")?;
        }
        Ok(())
    }
}

/// Either a canonical field path or a function-scoped local (or the builtin
/// global). Locals participate in propagation but are never emitted as
/// catalog candidates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathKey {
    Field(AccessPath),
    Local { func: String, name: String },
    Global(String),
}

impl fmt::Display for PathKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathKey::Field(p) => write!(f, "{p}"),
            PathKey::Local { func, name } => write!(f, "{func}::{name}"),
            PathKey::Global(g) => write!(f, "${g}"),
        }
    }
}

/// Parse and validate a corpus from text.
///
/// Total and deterministic: the same text yields the same `Corpus` or the
/// same error. Name resolution (macros vs locals), type checks on statements
/// and the entry-parameter restriction all happen here, so `layout_types`
/// cannot fail.
pub fn parse_corpus(text: &str) -> IrResult<Corpus> {
    let items = parse::parse(text)?;
    validate::validate(items)
}

/// Canonicalize an lvalue inside a given function.
///
/// Returns `PathKey::Field` for field accesses (keyed by the base's record
/// type), `PathKey::Local` for plain locals and params, `PathKey::Global`
/// for the builtin global.
pub fn access_path_of(tc: &TypedCorpus, func: &str, lval: &Lval) -> PathKey {
    tc.canonical_path(func, lval)
}
