//! Kernel-heap simulation: order-0 buddy pages with migrate groups, slab
//! caches with LIFO slot reuse, vulnerability write primitives, the
//! page-UAF exploit strategy, capability/strategy pairing, and mitigation
//! toggles. Escalation checks run through the file world via the
//! interpreter.

mod capability;
mod pageuaf;
mod pairing;
mod scenario;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynverify::{ExternalHeap, FileWorld, PAGE_SIZE};
use crate::ir::TypedCorpus;

pub use capability::{corrupt, BugKind, CapabilityDescriptor, CapabilityFixtures, ValueModel, WriteSpec};
pub use pageuaf::{build_page_uaf, exploit_flag_playbook, exploit_ref_playbook, PageUafHandle, Route};
pub use pairing::{pair_strategies, Strategy, StrategyKind};
pub use scenario::{
    run_scenario, success_rate, NoiseModel, Outcome, OutcomeStatus, Script, ScriptStep,
};

pub type PageId = u64;
pub type Handle = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("out of pages in group {0}")]
    OutOfPages(usize),
    #[error("unknown cache `{0}`")]
    UnknownCache(String),
    #[error("record `{0}` does not fit cache `{1}`")]
    DoesNotFit(String, String),
    #[error("write outside capability envelope: {0}")]
    CapabilityViolation(String),
    #[error("infoleak required")]
    InfoleakRequired,
    #[error("no adjacent bridge placement achievable")]
    NoPlacement,
    #[error("reclamation blocked by page-group isolation")]
    MitigationBlocked,
    #[error("feedback read found no recognizable slot")]
    Retry,
    #[error("interpreter fault: {0}")]
    Interp(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PageState {
    Free,
    Slab { cache: String },
    UserContent { owner: Handle },
    FileCache { path: String },
}

#[derive(Debug, Clone)]
pub struct PhysPage {
    pub id: PageId,
    pub group: usize,
    pub state: PageState,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheKind {
    Generic,
    Dedicated,
    #[serde(rename = "cg")]
    CgSeparated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheConfig {
    pub name: String,
    #[serde(rename = "objectSize")]
    pub object_size: usize,
    pub kind: CacheKind,
}

#[derive(Debug, Clone)]
pub struct SlabCache {
    pub name: String,
    pub object_size: usize,
    pub kind: CacheKind,
    pub pages: Vec<PageId>,
    /// LIFO stack of free (page, slot offset).
    free_slots: Vec<(PageId, usize)>,
}

impl SlabCache {
    pub fn free_slot_count(&self) -> usize {
        self.free_slots.len()
    }
}

#[derive(Debug, Clone)]
pub struct HeapObject {
    pub handle: Handle,
    pub record: String,
    pub cache: String,
    pub page: PageId,
    pub slot_offset: usize,
    pub live: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeapConfig {
    #[serde(rename = "pageCount")]
    pub page_count: u64,
    /// Migrate group names; index is the group id.
    pub groups: Vec<String>,
    pub caches: Vec<CacheConfig>,
}

impl Default for HeapConfig {
    fn default() -> Self {
        HeapConfig {
            page_count: 512,
            groups: vec![
                "unmovable".to_string(),
                "movable".to_string(),
                "reclaimable".to_string(),
                "highatomic".to_string(),
            ],
            caches: vec![
                CacheConfig { name: "kmalloc-32".into(), object_size: 32, kind: CacheKind::Generic },
                CacheConfig { name: "kmalloc-64".into(), object_size: 64, kind: CacheKind::Generic },
                CacheConfig { name: "kmalloc-96".into(), object_size: 96, kind: CacheKind::Generic },
                CacheConfig { name: "kmalloc-128".into(), object_size: 128, kind: CacheKind::Generic },
                CacheConfig { name: "kmalloc-256".into(), object_size: 256, kind: CacheKind::Generic },
                CacheConfig { name: "kmalloc-1024".into(), object_size: 1024, kind: CacheKind::Generic },
                CacheConfig { name: "kmalloc-cg-64".into(), object_size: 64, kind: CacheKind::CgSeparated },
                CacheConfig { name: "filp_cachep".into(), object_size: 64, kind: CacheKind::Dedicated },
                CacheConfig { name: "filp_cachep_priv".into(), object_size: 64, kind: CacheKind::Dedicated },
                CacheConfig { name: "ext4_inode_cachep".into(), object_size: 64, kind: CacheKind::Dedicated },
                CacheConfig { name: "bh_cachep".into(), object_size: 32, kind: CacheKind::Dedicated },
                CacheConfig { name: "bio_slab".into(), object_size: 32, kind: CacheKind::Dedicated },
                CacheConfig { name: "dio_cache".into(), object_size: 32, kind: CacheKind::Dedicated },
            ],
        }
    }
}

/// Mitigation toggles; see `configure_mitigations`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mitigations {
    #[serde(default)]
    pub isolate_user_pages: bool,
    #[serde(default)]
    pub file_object_isolation: bool,
    #[serde(default)]
    pub uncache_sensitive: bool,
    #[serde(default)]
    pub sector_sanitization: bool,
    #[serde(default)]
    pub setuid_whitelist: bool,
}

impl Mitigations {
    pub fn from_names(names: &[String]) -> Result<Mitigations, SimError> {
        let mut m = Mitigations::default();
        for n in names {
            match n.as_str() {
                "isolate_user_pages" => m.isolate_user_pages = true,
                "file_object_isolation" => m.file_object_isolation = true,
                "uncache_sensitive" => m.uncache_sensitive = true,
                "sector_sanitization" => m.sector_sanitization = true,
                "setuid_whitelist" => m.setuid_whitelist = true,
                other => return Err(SimError::Config(format!("unknown mitigation `{other}`"))),
            }
        }
        Ok(m)
    }
}

#[derive(Debug)]
pub struct HeapWorld {
    pub pages: Vec<PhysPage>,
    /// Per-group LIFO free stacks (pop from the back).
    free_lists: Vec<Vec<PageId>>,
    pub caches: BTreeMap<String, SlabCache>,
    pub objects: BTreeMap<Handle, HeapObject>,
    next_handle: Handle,
    /// Group used for slab pages and (by default) user-content pages: the
    /// load-bearing co-grouping the page-UAF strategy exploits.
    pub slab_group: usize,
    pub user_group: usize,
    pub file_group: usize,
    pub mitigations: Mitigations,
}

impl HeapWorld {
    /// Build a heap and adopt the file world's cached pages as file-cache
    /// frames (their bytes move into physical pages here).
    pub fn init_world(config: &HeapConfig, fw: &mut FileWorld) -> Result<HeapWorld, SimError> {
        if config.page_count == 0 {
            return Err(SimError::Config("page count must be positive".into()));
        }
        if config.groups.len() < 2 {
            return Err(SimError::Config("need at least two migrate groups".into()));
        }
        let file_pages_needed = fw.files.values().map(|f| f.cached_pages.len() as u64).sum::<u64>();
        if config.page_count < file_pages_needed + 8 {
            return Err(SimError::Config(format!(
                "page count {} cannot cover {} file pages plus working space",
                config.page_count, file_pages_needed
            )));
        }

        let n = config.page_count;
        let mut pages = Vec::with_capacity(n as usize);
        // group layout: most pages in group 0 (slabs + user content), a
        // movable share in group 1 for the page cache, a sliver elsewhere
        let g1_start = n * 7 / 10;
        let g2_start = n * 9 / 10;
        let g3_start = n * 19 / 20;
        for id in 0..n {
            let group = if id < g1_start {
                0
            } else if id < g2_start {
                1
            } else if id < g3_start {
                2
            } else {
                3.min(config.groups.len() - 1)
            };
            pages.push(PhysPage {
                id,
                group,
                state: PageState::Free,
                bytes: vec![0u8; PAGE_SIZE],
            });
        }
        let mut free_lists: Vec<Vec<PageId>> = vec![Vec::new(); config.groups.len()];
        // push descending so pops hand out ascending ids
        for p in pages.iter().rev() {
            free_lists[p.group].push(p.id);
        }
        let mut caches = BTreeMap::new();
        for c in &config.caches {
            if c.object_size == 0 || c.object_size > PAGE_SIZE {
                return Err(SimError::Config(format!("bad object size in `{}`", c.name)));
            }
            caches.insert(
                c.name.clone(),
                SlabCache {
                    name: c.name.clone(),
                    object_size: c.object_size,
                    kind: c.kind,
                    pages: Vec::new(),
                    free_slots: Vec::new(),
                },
            );
        }
        let mut hw = HeapWorld {
            pages,
            free_lists,
            caches,
            objects: BTreeMap::new(),
            next_handle: 1,
            slab_group: 0,
            user_group: 0,
            file_group: 1,
            mitigations: Mitigations::default(),
        };
        // adopt file pages
        let paths: Vec<String> = fw.files.keys().cloned().collect();
        for path in paths {
            let old_pages = fw.files[&path].cached_pages.clone();
            let mut new_pages = Vec::new();
            for old in old_pages {
                let pid = hw.alloc_page(hw.file_group)?;
                let content = fw.pages.get(&old).cloned().unwrap_or_default();
                let page = &mut hw.pages[pid as usize];
                page.state = PageState::FileCache { path: path.clone() };
                let nlen = content.len().min(PAGE_SIZE);
                page.bytes[..nlen].copy_from_slice(&content[..nlen]);
                for b in page.bytes[nlen..].iter_mut() {
                    *b = 0;
                }
                new_pages.push(pid);
            }
            fw.files.get_mut(&path).unwrap().cached_pages = new_pages;
        }
        fw.pages.clear();
        hw.assert_conservation();
        Ok(hw)
    }

    pub fn total_pages(&self) -> u64 {
        self.pages.len() as u64
    }

    /// Allocator conservation: every page is in exactly one state, and free
    /// pages sit in exactly one free list of their own group.
    pub fn assert_conservation(&self) {
        let mut free = 0u64;
        let mut other = 0u64;
        for p in &self.pages {
            match p.state {
                PageState::Free => free += 1,
                _ => other += 1,
            }
        }
        assert_eq!(free + other, self.total_pages(), "page states must partition");
        let mut listed = 0u64;
        let mut seen = std::collections::BTreeSet::new();
        for (g, list) in self.free_lists.iter().enumerate() {
            for id in list {
                assert!(seen.insert(*id), "page {id} on two free lists");
                assert_eq!(
                    self.pages[*id as usize].group, g,
                    "page {id} on the wrong group's list"
                );
                assert!(
                    matches!(self.pages[*id as usize].state, PageState::Free),
                    "non-free page {id} on a free list"
                );
                listed += 1;
            }
        }
        assert_eq!(listed, free, "every free page sits in exactly one free list");
    }

    fn alloc_page(&mut self, group: usize) -> Result<PageId, SimError> {
        let list = self
            .free_lists
            .get_mut(group)
            .ok_or(SimError::Config(format!("no group {group}")))?;
        let id = list.pop().ok_or(SimError::OutOfPages(group))?;
        Ok(id)
    }

    /// Return a page to the buddy allocator. The page keeps its migrate
    /// group: reallocation stays within the group.
    pub fn free_page(&mut self, id: PageId) {
        let page = &mut self.pages[id as usize];
        if matches!(page.state, PageState::Free) {
            return;
        }
        page.state = PageState::Free;
        let g = page.group;
        self.free_lists[g].push(id);
    }

    /// Allocate a user-content page (pipe data and the like).
    pub fn alloc_user_page(&mut self, owner: Handle) -> Result<PageId, SimError> {
        let id = self.alloc_page(self.user_group)?;
        let page = &mut self.pages[id as usize];
        page.state = PageState::UserContent { owner };
        page.bytes.fill(0);
        Ok(id)
    }

    /// Spray `n` objects of a record into a cache; returns handles in
    /// allocation order. New slab pages come from the buddy allocator when
    /// slots run out.
    pub fn spray(
        &mut self,
        tc: &TypedCorpus,
        record: &str,
        cache_name: &str,
        n: usize,
    ) -> Result<Vec<Handle>, SimError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.alloc_object(tc, record, cache_name)?);
        }
        Ok(out)
    }

    pub fn alloc_object(
        &mut self,
        tc: &TypedCorpus,
        record: &str,
        cache_name: &str,
    ) -> Result<Handle, SimError> {
        let size = tc
            .layout(record)
            .map(|l| l.size.max(1) as usize)
            .unwrap_or(16);
        if cache_name == "page" {
            // page-allocator object: one object per page, drawn from the
            // slab group
            let id = self.alloc_page(self.slab_group)?;
            let page = &mut self.pages[id as usize];
            page.state = PageState::Slab { cache: "page".to_string() };
            page.bytes.fill(0);
            let handle = self.next_handle;
            self.next_handle += 1;
            self.objects.insert(
                handle,
                HeapObject {
                    handle,
                    record: record.to_string(),
                    cache: "page".to_string(),
                    page: id,
                    slot_offset: 0,
                    live: true,
                },
            );
            return Ok(handle);
        }
        let cache = self
            .caches
            .get(cache_name)
            .ok_or_else(|| SimError::UnknownCache(cache_name.to_string()))?;
        if size > cache.object_size {
            return Err(SimError::DoesNotFit(record.to_string(), cache_name.to_string()));
        }
        let slab_group = self.slab_group;
        let object_size = cache.object_size;
        let (page, slot) = {
            let popped = self.caches.get_mut(cache_name).unwrap().free_slots.pop();
            match popped {
                Some(ps) => ps,
                None => {
                    let id = self.alloc_page(slab_group)?;
                    let cache = self.caches.get_mut(cache_name).unwrap();
                    cache.pages.push(id);
                    let slots = PAGE_SIZE / object_size;
                    for s in (1..slots).rev() {
                        cache.free_slots.push((id, s * object_size));
                    }
                    let page = &mut self.pages[id as usize];
                    page.state = PageState::Slab { cache: cache_name.to_string() };
                    page.bytes.fill(0);
                    (id, 0)
                }
            }
        };
        // fresh slot: zero it
        let ps = &mut self.pages[page as usize];
        ps.bytes[slot..slot + size].fill(0);
        let handle = self.next_handle;
        self.next_handle += 1;
        self.objects.insert(
            handle,
            HeapObject {
                handle,
                record: record.to_string(),
                cache: cache_name.to_string(),
                page,
                slot_offset: slot,
                live: true,
            },
        );
        Ok(handle)
    }

    /// Free an object's slot back to its cache (LIFO), or its page for
    /// page-allocator objects. The bytes stay behind.
    pub fn free_object(&mut self, handle: Handle) -> Result<(), SimError> {
        let obj = self
            .objects
            .get_mut(&handle)
            .ok_or_else(|| SimError::Config(format!("unknown object {handle}")))?;
        if !obj.live {
            return Err(SimError::Config(format!("object {handle} already freed")));
        }
        obj.live = false;
        let (cache, page, slot) = (obj.cache.clone(), obj.page, obj.slot_offset);
        if cache == "page" {
            self.free_page(page);
        } else if let Some(c) = self.caches.get_mut(&cache) {
            c.free_slots.push((page, slot));
        }
        Ok(())
    }

    /// Drain a cache's free slots so the next allocation must take a fresh
    /// page from the buddy allocator (the exhaust-then-spray precondition).
    pub fn exhaust_cache(&mut self, tc: &TypedCorpus, cache_name: &str) -> Result<Vec<Handle>, SimError> {
        let mut fillers = Vec::new();
        loop {
            let free = self
                .caches
                .get(cache_name)
                .ok_or_else(|| SimError::UnknownCache(cache_name.to_string()))?
                .free_slots
                .len();
            if free == 0 {
                return Ok(fillers);
            }
            fillers.push(self.alloc_object(tc, "kiocb", cache_name)?);
        }
    }

    pub fn object(&self, handle: Handle) -> Option<&HeapObject> {
        self.objects.get(&handle)
    }

    pub fn page_bytes_raw(&self, id: PageId) -> Option<&[u8]> {
        self.pages.get(id as usize).map(|p| p.bytes.as_slice())
    }

    pub fn page_bytes_raw_mut(&mut self, id: PageId) -> Option<&mut [u8]> {
        self.pages.get_mut(id as usize).map(|p| p.bytes.as_mut_slice())
    }

    /// Read a packed field word out of an object's slot, live or dead.
    pub fn read_field_word(&self, tc: &TypedCorpus, handle: Handle, field: &str) -> Option<u64> {
        let obj = self.objects.get(&handle)?;
        let off = tc.layout(&obj.record)?.offset_of(field)? as usize;
        let ty = tc.corpus.record(&obj.record)?.field_ty(field)?.clone();
        let bytes = &self.pages[obj.page as usize].bytes;
        let size = crate::ir::ty_size(&ty).min(8) as usize;
        let mut word = [0u8; 8];
        word[..size].copy_from_slice(&bytes[obj.slot_offset + off..obj.slot_offset + off + size]);
        Some(u64::from_le_bytes(word))
    }

    /// Write a packed field word into an object's slot (harness-side write,
    /// not subject to capability checks).
    pub fn write_field_word(
        &mut self,
        tc: &TypedCorpus,
        handle: Handle,
        field: &str,
        word: u64,
    ) -> Option<()> {
        let obj = self.objects.get(&handle)?;
        let off = tc.layout(&obj.record)?.offset_of(field)? as usize;
        let ty = tc.corpus.record(&obj.record)?.field_ty(field)?.clone();
        let size = crate::ir::ty_size(&ty).min(8) as usize;
        let (page, slot) = (obj.page, obj.slot_offset);
        let bytes = &mut self.pages[page as usize].bytes;
        bytes[slot + off..slot + off + size].copy_from_slice(&word.to_le_bytes()[..size]);
        Some(())
    }

    /// Apply the page-side mitigation toggles; file-side toggles are
    /// applied by `configure_mitigations`.
    fn apply_page_mitigations(&mut self, m: Mitigations) {
        self.mitigations = m;
        if m.isolate_user_pages && self.user_group == self.slab_group {
            // add another migrate group and move half of group 0's free
            // pages into it; user-content allocations draw from it from now
            // on
            let new_group = self.free_lists.len();
            self.free_lists.push(Vec::new());
            let donor = self.slab_group;
            let list = std::mem::take(&mut self.free_lists[donor]);
            let mut keep = Vec::new();
            let mut moved = Vec::new();
            for (i, id) in list.into_iter().enumerate() {
                if i % 2 == 0 {
                    keep.push(id);
                } else {
                    moved.push(id);
                }
            }
            for id in &moved {
                self.pages[*id as usize].group = new_group;
            }
            self.free_lists[donor] = keep;
            self.free_lists[new_group] = moved;
            self.user_group = new_group;
        }
    }

    /// Cache a file object belongs in, honoring DirtyCred-style privilege
    /// separation when enabled.
    pub fn file_cache_for(&self, fw: &FileWorld, path: &str) -> String {
        if self.mitigations.file_object_isolation {
            if let Some(f) = fw.files.get(path) {
                if f.owner_uid == 0 {
                    return "filp_cachep_priv".to_string();
                }
            }
        }
        "filp_cachep".to_string()
    }
}

impl ExternalHeap for HeapWorld {
    fn page_bytes(&self, id: u64) -> Option<&[u8]> {
        self.pages.get(id as usize).map(|p| p.bytes.as_slice())
    }

    fn page_bytes_mut(&mut self, id: u64) -> Option<&mut [u8]> {
        self.pages.get_mut(id as usize).map(|p| p.bytes.as_mut_slice())
    }

    fn obj_location(&self, handle: u64) -> Option<(String, u64, usize)> {
        self.objects
            .get(&handle)
            .filter(|o| o.live)
            .map(|o| (o.record.clone(), o.page, o.slot_offset))
    }
}

/// Apply mitigation toggles to both worlds.
///
/// `isolate_user_pages` adds a migrate group for user-writable pages;
/// `file_object_isolation` splits the file-object cache by privilege;
/// `uncache_sensitive` forces direct-path access for whitelisted files;
/// `sector_sanitization` denies disk writes to whitelisted files' sectors
/// for non-root actors; `setuid_whitelist` blocks setuid execution of
/// unlisted programs. Whitelists can only be grown by root afterwards.
pub fn configure_mitigations(hw: &mut HeapWorld, fw: &mut FileWorld, m: Mitigations) {
    hw.apply_page_mitigations(m);
    fw.policy.uncache_sensitive = m.uncache_sensitive;
    fw.policy.sector_sanitization = m.sector_sanitization;
    fw.policy.setuid_whitelist = m.setuid_whitelist;
    if fw.policy.whitelist.is_empty() {
        for p in ["/etc/passwd", "/etc/shadow", "/usr/bin/vi"] {
            fw.policy.whitelist.insert(p.to_string());
        }
    }
    if fw.policy.setuid_programs.is_empty() {
        fw.policy.setuid_programs.insert("/usr/bin/passwd".to_string());
    }
}
