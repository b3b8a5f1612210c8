//! Vulnerability write models and the capability-checked corrupt operation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Handle, HeapWorld, SimError};
use crate::dynverify::PAGE_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BugKind {
    #[serde(rename = "OOB")]
    Oob,
    #[serde(rename = "UAF")]
    Uaf,
    #[serde(rename = "DoubleFree")]
    DoubleFree,
}

/// What values the invalid write can place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ValueModel {
    /// Only this constant, repeated.
    #[serde(rename = "constant")]
    Constant { value: u64 },
    /// Attacker-chosen bytes.
    #[serde(rename = "controlled")]
    Controlled,
    /// Sets one arbitrary bit to 1.
    #[serde(rename = "bitSet")]
    BitSet,
    /// Zeroes up to `k` low bytes at the chosen offset.
    #[serde(rename = "lowBytesZero")]
    LowBytesZero { k: u8 },
    /// Attacker bytes followed by `j` uncontrollable junk bytes.
    #[serde(rename = "controlledWithJunkSuffix")]
    ControlledWithJunkSuffix { j: u8 },
}

/// A vulnerability's write model: bug kind, reachable offsets and lengths
/// relative to the vulnerable object, expressible values, home cache, and
/// whether a pause/resume write cursor is available.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityDescriptor {
    pub id: String,
    pub bug: BugKind,
    /// Inclusive byte offset range relative to the vulnerable object start.
    #[serde(rename = "offsetRange")]
    pub offset_range: (u64, u64),
    /// Inclusive write length range in bytes.
    #[serde(rename = "lengthRange")]
    pub length_range: (u64, u64),
    #[serde(rename = "valueModel")]
    pub value_model: ValueModel,
    #[serde(rename = "vulnCache")]
    pub vuln_cache: String,
    /// FUSE-style pause/resume write cursor available.
    #[serde(rename = "pauseResume", default)]
    pub pause_resume: bool,
}

impl CapabilityDescriptor {
    pub fn offset_ok(&self, offset: u64) -> bool {
        offset >= self.offset_range.0 && offset <= self.offset_range.1
    }

    pub fn length_ok(&self, len: u64) -> bool {
        len >= self.length_range.0 && len <= self.length_range.1
    }

    pub fn min_len(&self) -> u64 {
        self.length_range.0
    }
}

/// Capability fixtures file: id -> descriptor, JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapabilityFixtures {
    pub capabilities: Vec<CapabilityDescriptor>,
}

impl CapabilityFixtures {
    pub fn load(json: &str) -> Result<Self, String> {
        serde_json::from_str(json).map_err(|e| format!("bad capability fixtures: {e}"))
    }

    pub fn get(&self, id: &str) -> Option<&CapabilityDescriptor> {
        self.capabilities.iter().find(|c| c.id == id)
    }

    pub fn by_id(&self) -> BTreeMap<&str, &CapabilityDescriptor> {
        self.capabilities.iter().map(|c| (c.id.as_str(), c)).collect()
    }
}

/// One concrete invalid write demanded of a capability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteSpec {
    /// Attacker byte string at an offset.
    Bytes { offset: u64, bytes: Vec<u8> },
    /// OR a single bit into one byte.
    SetBit { offset: u64, bit: u8 },
    /// Zero `count` bytes at an offset.
    ZeroLow { offset: u64, count: u8 },
    /// Free the vulnerable slot a second time.
    DoubleFree,
}

impl WriteSpec {
    fn offset(&self) -> u64 {
        match self {
            WriteSpec::Bytes { offset, .. }
            | WriteSpec::SetBit { offset, .. }
            | WriteSpec::ZeroLow { offset, .. } => *offset,
            WriteSpec::DoubleFree => 0,
        }
    }

    fn len(&self) -> u64 {
        match self {
            WriteSpec::Bytes { bytes, .. } => bytes.len() as u64,
            WriteSpec::SetBit { .. } => 1,
            WriteSpec::ZeroLow { count, .. } => *count as u64,
            WriteSpec::DoubleFree => 0,
        }
    }
}

/// Apply an invalid write through a vulnerability. The demanded write must
/// fall inside the capability's (offset, length, value) envelope; anything
/// outside is rejected as non-exploitable demand. OOB and UAF writes land
/// in the vulnerable object's page relative to its slot; a double free
/// pushes the slot onto the free list again, enabling reallocation overlap.
pub fn corrupt(
    world: &mut HeapWorld,
    cap: &CapabilityDescriptor,
    vuln: Handle,
    spec: &WriteSpec,
    rng: &mut impl Rng,
) -> Result<(), SimError> {
    let obj = world
        .objects
        .get(&vuln)
        .ok_or_else(|| SimError::Config(format!("unknown vuln object {vuln}")))?;
    if obj.cache != cap.vuln_cache {
        return Err(SimError::CapabilityViolation(format!(
            "vulnerable object lives in `{}`, capability is for `{}`",
            obj.cache, cap.vuln_cache
        )));
    }

    if let WriteSpec::DoubleFree = spec {
        if cap.bug != BugKind::DoubleFree {
            return Err(SimError::CapabilityViolation(
                "capability has no double free".to_string(),
            ));
        }
        let (cache, page, slot) = (obj.cache.clone(), obj.page, obj.slot_offset);
        if world.objects[&vuln].live {
            return Err(SimError::CapabilityViolation(
                "double free requires an already-freed slot".to_string(),
            ));
        }
        if let Some(c) = world.caches.get_mut(&cache) {
            c.free_slots.push((page, slot));
        }
        return Ok(());
    }

    if !cap.offset_ok(spec.offset()) {
        return Err(SimError::CapabilityViolation(format!(
            "offset {} outside {:?}",
            spec.offset(),
            cap.offset_range
        )));
    }
    if !cap.length_ok(spec.len().max(1)) {
        return Err(SimError::CapabilityViolation(format!(
            "length {} outside {:?}",
            spec.len(),
            cap.length_range
        )));
    }

    let junk = match (&cap.value_model, spec) {
        (ValueModel::Controlled, WriteSpec::Bytes { .. }) => 0,
        (ValueModel::Constant { value }, WriteSpec::Bytes { bytes, .. }) => {
            let pattern = value.to_le_bytes();
            if bytes.iter().enumerate().any(|(i, b)| *b != pattern[i % 8]) {
                return Err(SimError::CapabilityViolation(
                    "constant-value capability cannot write those bytes".to_string(),
                ));
            }
            0
        }
        (ValueModel::BitSet, WriteSpec::SetBit { .. }) => 0,
        (ValueModel::LowBytesZero { k }, WriteSpec::ZeroLow { count, .. }) => {
            if count > k || *count == 0 {
                return Err(SimError::CapabilityViolation(format!(
                    "can zero at most {k} bytes"
                )));
            }
            0
        }
        // zeroing is also expressible by writing explicit zero bytes
        (ValueModel::Controlled, WriteSpec::ZeroLow { .. }) => 0,
        (ValueModel::ControlledWithJunkSuffix { j }, WriteSpec::Bytes { .. }) => *j as usize,
        _ => {
            return Err(SimError::CapabilityViolation(format!(
                "write {spec:?} not expressible by {:?}",
                cap.value_model
            )))
        }
    };

    let (page, base) = (obj.page, obj.slot_offset as u64);
    let start = (base + spec.offset()) as usize;
    let bytes = &mut world.pages[page as usize].bytes;
    match spec {
        WriteSpec::Bytes { bytes: data, .. } => {
            if start + data.len() + junk > PAGE_SIZE {
                return Err(SimError::CapabilityViolation(
                    "write would leave the page".to_string(),
                ));
            }
            bytes[start..start + data.len()].copy_from_slice(data);
            for i in 0..junk {
                bytes[start + data.len() + i] = rng.gen();
            }
        }
        WriteSpec::SetBit { bit, .. } => {
            if *bit > 7 || start >= PAGE_SIZE {
                return Err(SimError::CapabilityViolation("bad bit write".to_string()));
            }
            bytes[start] |= 1 << bit;
        }
        WriteSpec::ZeroLow { count, .. } => {
            if start + *count as usize > PAGE_SIZE {
                return Err(SimError::CapabilityViolation(
                    "write would leave the page".to_string(),
                ));
            }
            for i in 0..*count as usize {
                bytes[start + i] = 0;
            }
        }
        WriteSpec::DoubleFree => unreachable!(),
    }
    Ok(())
}
