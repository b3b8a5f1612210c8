//! Capability-to-strategy pairing: which exploit strategies a given
//! vulnerability supports against the verified catalog and bridge list.

use serde::{Deserialize, Serialize};

use crate::analysis::{BridgeRecord, FskoCandidate, SemanticClass};
use crate::dynverify::{CandidateStatus, VerifiedCatalog, PAGE_SIZE};
use crate::ir::TypedCorpus;

use super::capability::{BugKind, CapabilityDescriptor, ValueModel};
use super::{CacheKind, HeapConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    CorruptFlag,
    OwnerOverwrite,
    SectorOverwrite,
    RefSwapWithInfoleak,
    RefSwapLowBits,
    #[serde(rename = "PageUAF")]
    PageUaf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge: Option<String>,
    #[serde(rename = "requiresInfoleak")]
    pub requires_infoleak: bool,
}

/// Everything pairing consults.
pub struct PairingInput<'a> {
    pub tc: &'a TypedCorpus,
    pub candidates: &'a [FskoCandidate],
    pub verified: &'a VerifiedCatalog,
    pub bridges: &'a [BridgeRecord],
    pub config: &'a HeapConfig,
}

fn cache_kind(config: &HeapConfig, name: &str) -> Option<CacheKind> {
    config.caches.iter().find(|c| c.name == name).map(|c| c.kind)
}

fn cache_object_size(config: &HeapConfig, name: &str) -> Option<u64> {
    config
        .caches
        .iter()
        .find(|c| c.name == name)
        .map(|c| c.object_size as u64)
}

/// Can objects with this catalog cache attribution be placed in the
/// vulnerable object's cache? "variable" means elastic array allocations,
/// which land in any generic kmalloc cache; "stack" and "page" never
/// co-locate with slab objects.
fn cache_compat(config: &HeapConfig, cand_caches: &[String], vuln_cache: &str) -> bool {
    let vuln_kind = cache_kind(config, vuln_cache);
    cand_caches.iter().any(|c| match c.as_str() {
        "variable" => matches!(vuln_kind, Some(CacheKind::Generic)),
        "stack" | "page" => false,
        exact => exact == vuln_cache,
    })
}

/// Is some victim placement's field offset inside the capability's window?
/// OOB writes land past the vulnerable object (adjacent slots); UAF and
/// double-free writes land in the reallocated slot itself (and beyond).
fn offset_reachable(cap: &CapabilityDescriptor, object_size: u64, field_off: u64) -> bool {
    let slots = (PAGE_SIZE as u64 / object_size).max(1);
    let start = match cap.bug {
        BugKind::Oob => 1,
        BugKind::Uaf | BugKind::DoubleFree => 0,
    };
    (start..slots).any(|m| cap.offset_ok(m * object_size + field_off))
}

fn flag_value_expressible(model: &ValueModel, target: u64) -> bool {
    match model {
        ValueModel::Constant { value } => *value == target,
        ValueModel::Controlled => true,
        ValueModel::BitSet => target.count_ones() == 1,
        ValueModel::LowBytesZero { .. } => target == 0,
        // junk after the payload corrupts neighbouring fields: useless for
        // precise flag writes
        ValueModel::ControlledWithJunkSuffix { .. } => false,
    }
}

/// Pair one capability with the catalog.
///
/// Flag and owner targets need a verified target value the model can
/// express at a reachable offset in a co-located cache. Sector overwrites
/// need fully controlled values (the sector of any file is disclosed by the
/// FIEMAP analog, so no infoleak). Reference swaps apply to page-cache
/// references in dedicated caches: low-bits swaps without infoleak,
/// controlled-value swaps with one. The page-UAF strategy applies whenever
/// a read+write bridge fits the vulnerable cache with its page-reference
/// offset reachable; capabilities that cannot cleanly corrupt low pointer
/// bits (junk suffixes, fixed-width controlled writes) carry the infoleak
/// requirement.
pub fn pair_strategies(input: &PairingInput, cap: &CapabilityDescriptor) -> Vec<Strategy> {
    let mut out = Vec::new();
    let Some(object_size) = cache_object_size(input.config, &cap.vuln_cache) else {
        return out; // unknown, subsystem-confined cache: unpairable
    };

    for cand in input.candidates {
        let Some(path) = cand.access_path() else { continue };
        let Some((_, field_off)) = input.tc.path_offset(&path) else {
            continue;
        };
        if !cache_compat(input.config, &cand.cache, &cap.vuln_cache) {
            continue;
        }
        if !offset_reachable(cap, object_size, field_off) {
            continue;
        }
        match cand.class {
            SemanticClass::Permission | SemanticClass::Operation | SemanticClass::CowFlag => {
                if input.verified.status_of(&cand.path) == Some(CandidateStatus::Pe) {
                    if let Some(v) = input.verified.target_value_of(&cand.path) {
                        if flag_value_expressible(&cap.value_model, v) {
                            out.push(Strategy {
                                kind: StrategyKind::CorruptFlag,
                                field: Some(cand.path.clone()),
                                bridge: None,
                                requires_infoleak: false,
                            });
                        }
                    }
                }
            }
            SemanticClass::Owner => {
                if input.verified.status_of(&cand.path) == Some(CandidateStatus::Pe)
                    && matches!(cap.value_model, ValueModel::Controlled)
                {
                    out.push(Strategy {
                        kind: StrategyKind::OwnerOverwrite,
                        field: Some(cand.path.clone()),
                        bridge: None,
                        requires_infoleak: false,
                    });
                }
            }
            SemanticClass::Sector => {
                if matches!(cap.value_model, ValueModel::Controlled) {
                    out.push(Strategy {
                        kind: StrategyKind::SectorOverwrite,
                        field: Some(cand.path.clone()),
                        bridge: None,
                        requires_infoleak: false,
                    });
                }
            }
            SemanticClass::PageCacheRef => {
                let dedicated = cand
                    .cache
                    .iter()
                    .any(|c| cache_kind(input.config, c) == Some(CacheKind::Dedicated));
                if !dedicated {
                    continue;
                }
                match cap.value_model {
                    ValueModel::LowBytesZero { .. } => out.push(Strategy {
                        kind: StrategyKind::RefSwapLowBits,
                        field: Some(cand.path.clone()),
                        bridge: None,
                        requires_infoleak: false,
                    }),
                    ValueModel::Controlled => out.push(Strategy {
                        kind: StrategyKind::RefSwapWithInfoleak,
                        field: Some(cand.path.clone()),
                        bridge: None,
                        requires_infoleak: true,
                    }),
                    _ => {}
                }
            }
        }
    }

    // page-UAF: any read+write bridge that fits the vulnerable cache
    let mut page_uaf: Option<Strategy> = None;
    for bridge in input.bridges {
        if !(bridge.read_capable && bridge.write_capable) {
            continue;
        }
        if !cache_compat(input.config, &bridge.cache, &cap.vuln_cache) {
            continue;
        }
        let Some(field) = bridge.page_fields.first() else { continue };
        let Some(fpath) = crate::ir::AccessPath::parse(field) else { continue };
        let Some((_, field_off)) = input.tc.path_offset(&fpath) else { continue };

        let reachable = offset_reachable(cap, object_size, field_off);
        let clean = match (cap.bug, cap.pause_resume, &cap.value_model) {
            (BugKind::DoubleFree, true, ValueModel::Controlled)
            | (BugKind::DoubleFree, true, ValueModel::LowBytesZero { .. }) => true,
            (BugKind::DoubleFree, ..) => false,
            (_, _, ValueModel::BitSet) => reachable,
            (_, _, ValueModel::LowBytesZero { .. }) => reachable,
            (_, _, ValueModel::Controlled) => reachable && cap.min_len() == 1,
            _ => false,
        };
        let leak = !clean
            && reachable
            && matches!(
                cap.value_model,
                ValueModel::Controlled | ValueModel::ControlledWithJunkSuffix { .. }
            );
        if clean || leak {
            let s = Strategy {
                kind: StrategyKind::PageUaf,
                field: None,
                bridge: Some(bridge.record.clone()),
                requires_infoleak: !clean,
            };
            match &page_uaf {
                // prefer a no-infoleak bridge
                Some(prev) if !prev.requires_infoleak => {}
                _ => page_uaf = Some(s),
            }
        }
    }
    if let Some(s) = page_uaf {
        out.push(s);
    }

    out.sort_by(|a, b| (a.kind, &a.field).cmp(&(b.kind, &b.field)));
    out.dedup();
    out
}
