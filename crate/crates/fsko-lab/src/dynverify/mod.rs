//! Differential dynamic verification.
//!
//! Entry functions run against a modeled file world. A tap records a field's
//! value during a legitimate write, a second run patches that value into a
//! read of a protected file, and the escalation predicates decide whether
//! the candidate really carries privilege semantics.

mod interp;
mod verify;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use interp::{
    run_entry, ArgValue, ExternalHeap, ObjId, RunError, RunOutcome, Session, TapHit, TapMode,
    TapPlan, TapTarget, Value, STEP_BUDGET,
};
pub use verify::{
    load_suite, verify_candidate, verify_catalog, CandidateStatus, Scenario, ScenarioRole,
    ScenarioSuite, VerifiedCatalog, VerifiedEntry,
};

/// Base of the modeled `struct page` array: page object i sits at
/// `PAGE_ADDR_BASE + i * PAGE_OBJ_SIZE`. Contiguous physical pages therefore
/// have page-object addresses 0x40 apart, and zeroing the low bytes of a
/// page reference lands on an earlier array slot.
pub const PAGE_ADDR_BASE: u64 = 0xea00_0000;
pub const PAGE_OBJ_SIZE: u64 = 0x40;
pub const PAGE_SIZE: usize = 4096;

pub fn page_addr(id: u64) -> u64 {
    PAGE_ADDR_BASE + id * PAGE_OBJ_SIZE
}

pub fn addr_to_page(addr: u64) -> Option<u64> {
    if addr < PAGE_ADDR_BASE || (addr - PAGE_ADDR_BASE) % PAGE_OBJ_SIZE != 0 {
        return None;
    }
    Some((addr - PAGE_ADDR_BASE) / PAGE_OBJ_SIZE)
}

/// rwx permission bit helpers over the 12-bit mode word.
pub const MODE_SETUID: u32 = 0o4000;
pub const MODE_SETGID: u32 = 0o2000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    #[serde(rename = "ownerUid")]
    pub owner_uid: u32,
    #[serde(rename = "groupGid")]
    pub group_gid: u32,
    /// rwxrwxrwx plus setuid/setgid, 12 bits.
    #[serde(rename = "modeBits")]
    pub mode_bits: u32,
    pub content: Vec<u8>,
    pub sectors: Vec<u64>,
    #[serde(rename = "cachedPages")]
    pub cached_pages: Vec<u64>,
}

/// File-integrity policies (the heap simulator toggles the page-side ones).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilePolicy {
    pub uncache_sensitive: bool,
    pub sector_sanitization: bool,
    pub setuid_whitelist: bool,
    /// Protected files, mutable only by root.
    pub whitelist: BTreeSet<String>,
    /// Programs allowed to run setuid, mutable only by root.
    pub setuid_programs: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileWorld {
    pub files: BTreeMap<String, FileEntry>,
    pub actor_uid: u32,
    pub policy: FilePolicy,
    next_sector: u64,
    next_page: u64,
    /// Frame store for standalone runs; when a heap world is attached the
    /// frames live there instead and this map is empty.
    pub pages: BTreeMap<u64, Vec<u8>>,
}

impl FileWorld {
    pub fn new(actor_uid: u32) -> Self {
        FileWorld {
            files: BTreeMap::new(),
            actor_uid,
            policy: FilePolicy::default(),
            next_sector: 8,
            next_page: 0,
            pages: BTreeMap::new(),
        }
    }

    /// Add a file with one sector and one cached page mirroring the content.
    pub fn add_file(&mut self, path: &str, owner: u32, gid: u32, mode: u32, content: &[u8]) {
        let sector = self.next_sector;
        self.next_sector += 8;
        let page = self.next_page;
        self.next_page += 1;
        self.pages.insert(page, content.to_vec());
        self.files.insert(
            path.to_string(),
            FileEntry {
                owner_uid: owner,
                group_gid: gid,
                mode_bits: mode,
                content: content.to_vec(),
                sectors: vec![sector],
                cached_pages: vec![page],
            },
        );
    }

    pub fn file_by_sector(&self, sector: u64) -> Option<(&String, &FileEntry)> {
        self.files.iter().find(|(_, f)| f.sectors.contains(&sector))
    }

    pub fn file_owning_page(&self, page: u64) -> Option<&String> {
        self.files
            .iter()
            .find(|(_, f)| f.cached_pages.contains(&page))
            .map(|(p, _)| p)
    }

    /// FIEMAP-style sector disclosure: unprivileged callers may query any
    /// file's sector list.
    pub fn sectors_of(&self, path: &str) -> Option<Vec<u64>> {
        self.files.get(path).map(|f| f.sectors.clone())
    }

    pub fn writable_by(&self, entry: &FileEntry, uid: u32) -> bool {
        uid == 0 || (entry.owner_uid == uid && entry.mode_bits & 0o200 != 0) || entry.mode_bits & 0o002 != 0
    }

    /// Whitelists are mutable only by root.
    pub fn update_whitelist(&mut self, actor: u32, file: &str) -> Result<(), String> {
        if actor != 0 {
            return Err("only root can update the whitelist".to_string());
        }
        self.policy.whitelist.insert(file.to_string());
        Ok(())
    }

    pub fn update_setuid_whitelist(&mut self, actor: u32, program: &str) -> Result<(), String> {
        if actor != 0 {
            return Err("only root can update the whitelist".to_string());
        }
        self.policy.setuid_programs.insert(program.to_string());
        Ok(())
    }

    /// Would executing `path` grant the owner's uid? Checks the setuid bit,
    /// root ownership and (when enabled) the setuid program whitelist.
    pub fn exec_gains_root(&self, path: &str) -> Result<bool, String> {
        let f = self.files.get(path).ok_or_else(|| format!("no such file {path}"))?;
        let setuid_root = f.mode_bits & MODE_SETUID != 0 && f.owner_uid == 0;
        if !setuid_root {
            return Ok(false);
        }
        if self.policy.setuid_whitelist && !self.policy.setuid_programs.contains(path) {
            return Err(format!("setuid execution of {path} blocked by whitelist"));
        }
        Ok(true)
    }
}

/// The bundled protected-file fixture plus an attacker home directory.
pub fn default_file_world() -> FileWorld {
    let mut w = FileWorld::new(1000);
    w.add_file("/etc/passwd", 0, 0, 0o644, b"root:x:0:0:root:/root:/bin/sh\n");
    w.add_file("/etc/shadow", 0, 0, 0o000, b"root:!:19000:0:99999:7:::\n");
    w.add_file("/usr/bin/vi", 0, 0, 0o755, b"\x7fELF vi\n");
    w.add_file("/home/attacker/own.txt", 1000, 1000, 0o666, b"attacker data\n");
    w.add_file("/home/attacker/scratch", 1000, 1000, 0o666, b"scratch page\n");
    w.add_file("/home/attacker/tool", 1000, 1000, 0o4755, b"\x7fELF tool\n");
    w
}

/// A comparable snapshot of the file world, page bytes included, usable
/// whether or not the frames live in an attached heap world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldSnapshot {
    pub files: BTreeMap<String, (FileEntry, Vec<Vec<u8>>)>,
    pub actor_uid: u32,
}

pub fn snapshot(world: &FileWorld, heap: Option<&dyn ExternalHeap>) -> WorldSnapshot {
    let mut files = BTreeMap::new();
    for (path, f) in &world.files {
        let mut page_bytes = Vec::new();
        for p in &f.cached_pages {
            let bytes = match heap {
                Some(h) => h.page_bytes(*p).map(|b| b.to_vec()),
                None => world.pages.get(p).cloned(),
            };
            page_bytes.push(bytes.unwrap_or_default());
        }
        files.insert(path.clone(), (f.clone(), page_bytes));
    }
    WorldSnapshot {
        files,
        actor_uid: world.actor_uid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predicate {
    /// Unauthorized content write.
    P1,
    /// Setuid-root gain.
    P2,
    /// Ownership gain.
    P3,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationVerdict {
    pub escalated: bool,
    pub predicate: Option<Predicate>,
    pub evidence: Vec<String>,
}

impl EscalationVerdict {
    pub fn none() -> Self {
        EscalationVerdict {
            escalated: false,
            predicate: None,
            evidence: Vec::new(),
        }
    }
}

/// Evaluate the escalation predicates over a world diff.
///
/// P1: a file the actor could not write (by mode and owner) changed content
/// or cached pages. P2: a root-owned file gained the setuid bit, or an
/// actor-owned setuid file's owner became root. P3: a protected file's
/// owner became the actor.
pub fn check_escalation(
    before: &WorldSnapshot,
    after: &WorldSnapshot,
    actor_uid: u32,
) -> EscalationVerdict {
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    let mut p3 = Vec::new();
    for (path, (fb, pages_b)) in &before.files {
        let Some((fa, pages_a)) = after.files.get(path) else {
            continue;
        };
        let writable = actor_uid == 0
            || (fb.owner_uid == actor_uid && fb.mode_bits & 0o200 != 0)
            || fb.mode_bits & 0o002 != 0;
        if !writable && (fa.content != fb.content || pages_a != pages_b) {
            p1.push(format!("{path}: protected content changed"));
        }
        let gained_setuid = fb.mode_bits & MODE_SETUID == 0 && fa.mode_bits & MODE_SETUID != 0;
        if fa.owner_uid == 0 && gained_setuid {
            p2.push(format!("{path}: root-owned file gained setuid"));
        }
        if fb.owner_uid == actor_uid && fb.mode_bits & MODE_SETUID != 0 && fa.owner_uid == 0 {
            p2.push(format!("{path}: actor setuid file became root-owned"));
        }
        if !writable && fb.owner_uid != actor_uid && fa.owner_uid == actor_uid {
            p3.push(format!("{path}: ownership moved to actor"));
        }
    }
    if !p1.is_empty() {
        EscalationVerdict {
            escalated: true,
            predicate: Some(Predicate::P1),
            evidence: p1,
        }
    } else if !p2.is_empty() {
        EscalationVerdict {
            escalated: true,
            predicate: Some(Predicate::P2),
            evidence: p2,
        }
    } else if !p3.is_empty() {
        EscalationVerdict {
            escalated: true,
            predicate: Some(Predicate::P3),
            evidence: p3,
        }
    } else {
        EscalationVerdict::none()
    }
}

/// Convenience for standalone worlds (no attached heap).
pub fn check_escalation_worlds(before: &FileWorld, after: &FileWorld) -> EscalationVerdict {
    check_escalation(
        &snapshot(before, None),
        &snapshot(after, None),
        before.actor_uid,
    )
}
