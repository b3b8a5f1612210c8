//! Deterministic field layout.
//!
//! Sizes: u8=1, u16=2, u32=4, u64=8, i32=4, sector=8, ref=8, pageref=8,
//! fnref=8, data=16, pagearr(N)=8N. Each field starts at the next offset
//! aligned to its size (pagearr aligns to 8); the record size is rounded up
//! to the maximum field alignment.

use std::collections::BTreeMap;

use serde::Serialize;

use super::validate::{function_symbols, lval_ty_in};
use super::{AccessPath, Corpus, Lval, PathKey, Ty, CURRENT_UID};

pub fn ty_size(ty: &Ty) -> u64 {
    match ty {
        Ty::U8 => 1,
        Ty::U16 => 2,
        Ty::U32 | Ty::I32 => 4,
        Ty::U64 | Ty::Sector | Ty::ObjRef(_) | Ty::PageRef | Ty::FnRef(_) => 8,
        Ty::Data => 16,
        Ty::PageArr(n) => 8 * *n as u64,
    }
}

pub fn ty_align(ty: &Ty) -> u64 {
    match ty {
        Ty::PageArr(_) => 8,
        other => ty_size(other),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordLayout {
    /// (field name, byte offset), in declaration order.
    pub offsets: Vec<(String, u64)>,
    pub size: u64,
    pub align: u64,
}

impl RecordLayout {
    pub fn offset_of(&self, field: &str) -> Option<u64> {
        self.offsets.iter().find(|(n, _)| n == field).map(|(_, o)| *o)
    }
}

/// A corpus with layout tables and per-function symbol tables attached.
#[derive(Debug, Clone)]
pub struct TypedCorpus {
    pub corpus: Corpus,
    pub layouts: BTreeMap<String, RecordLayout>,
    symbols: BTreeMap<String, BTreeMap<String, Ty>>,
}

/// Assign offsets to every record. Deterministic: identical corpora yield
/// byte-identical layout tables.
pub fn layout_types(corpus: Corpus) -> TypedCorpus {
    let mut layouts = BTreeMap::new();
    for rec in &corpus.records {
        let mut off = 0u64;
        let mut max_align = 1u64;
        let mut offsets = Vec::new();
        for (name, ty) in &rec.fields {
            let align = ty_align(ty);
            max_align = max_align.max(align);
            off = off.div_ceil(align) * align;
            offsets.push((name.clone(), off));
            off += ty_size(ty);
        }
        let size = off.div_ceil(max_align) * max_align;
        layouts.insert(
            rec.name.clone(),
            RecordLayout {
                offsets,
                size,
                align: max_align,
            },
        );
    }
    let symbols = corpus
        .functions
        .iter()
        .map(|f| (f.name.clone(), function_symbols(&corpus, f)))
        .collect();
    TypedCorpus {
        corpus,
        layouts,
        symbols,
    }
}

impl TypedCorpus {
    pub fn layout(&self, record: &str) -> Option<&RecordLayout> {
        self.layouts.get(record)
    }

    /// Symbol table (params + locals) of a function.
    pub fn symbols(&self, func: &str) -> Option<&BTreeMap<String, Ty>> {
        self.symbols.get(func)
    }

    /// Static type of an lvalue inside a function.
    pub fn lval_ty(&self, func: &str, l: &Lval) -> Option<Ty> {
        let env = self.symbols.get(func)?;
        lval_ty_in(&self.corpus, l, env)
    }

    /// Canonical path of an lvalue: field accesses are keyed by the base's
    /// record type, bare names are function-scoped locals.
    pub fn canonical_path(&self, func: &str, l: &Lval) -> PathKey {
        if l.base == CURRENT_UID && l.fields.is_empty() {
            return PathKey::Global(CURRENT_UID.to_string());
        }
        if l.fields.is_empty() {
            return PathKey::Local {
                func: func.to_string(),
                name: l.base.clone(),
            };
        }
        let base_rec = self
            .symbols
            .get(func)
            .and_then(|env| env.get(&l.base))
            .and_then(|t| match t {
                Ty::ObjRef(r) => Some(r.clone()),
                _ => None,
            })
            .unwrap_or_else(|| l.base.clone());
        PathKey::Field(AccessPath {
            base: base_rec,
            chain: l.fields.clone(),
        })
    }

    /// Record owning the final field of a path, and that field's name.
    /// For `bio.bi_iter.bi_sector` this is `(bvec_iter, bi_sector)`.
    pub fn final_field(&self, path: &AccessPath) -> Option<(String, String)> {
        let mut rec_name = path.base.clone();
        for (i, f) in path.chain.iter().enumerate() {
            if i + 1 == path.chain.len() {
                return Some((rec_name, f.clone()));
            }
            let rec = self.corpus.record(&rec_name)?;
            match rec.field_ty(f)? {
                Ty::ObjRef(r) => rec_name = r.clone(),
                _ => return None,
            }
        }
        None
    }

    /// Type of the final field of a path.
    pub fn path_ty(&self, path: &AccessPath) -> Option<Ty> {
        let (rec, field) = self.final_field(path)?;
        self.corpus.record(&rec)?.field_ty(&field).cloned()
    }

    /// Byte offset of the final field within its owning record, plus that
    /// record's name. This is the offset that matters when the object is
    /// sprayed into a slab.
    pub fn path_offset(&self, path: &AccessPath) -> Option<(String, u64)> {
        let (rec, field) = self.final_field(path)?;
        let off = self.layouts.get(&rec)?.offset_of(&field)?;
        Some((rec, off))
    }
}
