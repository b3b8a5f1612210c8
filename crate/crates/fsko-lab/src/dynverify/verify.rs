//! The three-step differential procedure over a scenario suite: record the
//! candidate's value during a legitimate write, patch it into a read of a
//! protected file, and test the escalation predicates on the world diff.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::analysis::FskoCandidate;
use crate::ir::{AccessPath, TypedCorpus};

use super::interp::{run_entry, ArgValue, TapMode, TapPlan, TapTarget};
use super::{check_escalation, snapshot, FileWorld, Predicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ScenarioRole {
    LegitWrite,
    ProtectedRead,
    Aux,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub entry: String,
    pub args: Vec<Json>,
    #[serde(rename = "actorUid")]
    pub actor_uid: u32,
    pub role: ScenarioRole,
}

impl Scenario {
    pub fn arg_values(&self) -> Result<Vec<ArgValue>, String> {
        self.args
            .iter()
            .map(|j| match j {
                Json::Number(n) => n
                    .as_u64()
                    .map(ArgValue::Int)
                    .ok_or_else(|| format!("bad numeric arg in `{}`", self.name)),
                Json::String(s) => Ok(ArgValue::Str(s.clone())),
                other => Err(format!("unsupported arg {other} in `{}`", self.name)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSuite {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSuite {
    pub fn empty() -> Self {
        ScenarioSuite { scenarios: Vec::new() }
    }

    fn by_role(&self, role: ScenarioRole) -> impl Iterator<Item = &Scenario> {
        self.scenarios.iter().filter(move |s| s.role == role)
    }

    /// Every referenced entry must exist in the corpus.
    pub fn validate(&self, tc: &TypedCorpus) -> Result<(), String> {
        for s in &self.scenarios {
            if tc.corpus.function(&s.entry).is_none() {
                return Err(format!(
                    "scenario `{}` references unknown entry `{}`",
                    s.name, s.entry
                ));
            }
        }
        Ok(())
    }
}

pub fn load_suite(json: &str) -> Result<ScenarioSuite, String> {
    serde_json::from_str(json).map_err(|e| format!("bad suite: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateStatus {
    #[serde(rename = "PE")]
    Pe,
    #[serde(rename = "NPE")]
    Npe,
    #[serde(rename = "NoTest")]
    NoTest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifiedEntry {
    pub candidate: String,
    pub class: String,
    pub status: CandidateStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate>,
    #[serde(rename = "targetValue", skip_serializing_if = "Option::is_none")]
    pub target_value: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifiedCatalog {
    pub entries: Vec<VerifiedEntry>,
    pub funnel: Funnel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Funnel {
    #[serde(rename = "static")]
    pub static_count: usize,
    pub tested: usize,
    pub pe: usize,
}

impl VerifiedCatalog {
    pub fn status_of(&self, candidate: &str) -> Option<CandidateStatus> {
        self.entries
            .iter()
            .find(|e| e.candidate == candidate)
            .map(|e| e.status)
    }

    pub fn target_value_of(&self, candidate: &str) -> Option<u64> {
        self.entries
            .iter()
            .find(|e| e.candidate == candidate)
            .and_then(|e| e.target_value)
    }
}

/// Verify one candidate against every (legitWrite, protectedRead) pair.
///
/// Step 1 runs the legitimate write with a record tap and keeps the last
/// observed value. Step 2 runs the protected read with that value patched in
/// at every access. Step 3 checks the escalation predicates on the world
/// diff. PE on the first pair that escalates; NPE when the tap fired
/// somewhere but nothing escalated; NoTest when no scenario ever reached it.
pub fn verify_candidate(
    tc: &TypedCorpus,
    cand: &FskoCandidate,
    suite: &ScenarioSuite,
    world: &FileWorld,
) -> Result<(CandidateStatus, Option<u64>, Option<Predicate>), String> {
    suite.validate(tc)?;
    let Some(path) = AccessPath::parse(&cand.path) else {
        return Err(format!("candidate path `{}` is not a field path", cand.path));
    };
    let target = TapTarget::Field(path);
    let mut covered = false;

    for lw in suite.by_role(ScenarioRole::LegitWrite) {
        let mut w = world.clone();
        w.actor_uid = lw.actor_uid;
        let record_tap = TapPlan {
            target: target.clone(),
            mode: TapMode::Record,
            occurrence: None,
        };
        let args = lw.arg_values()?;
        let Ok((_, _, log)) = run_entry(tc, &lw.entry, &args, &w, &[record_tap]) else {
            continue;
        };
        let hits = &log[0];
        if hits.is_empty() {
            continue;
        }
        covered = true;
        let value = hits.last().unwrap().new;

        for pr in suite.by_role(ScenarioRole::ProtectedRead) {
            let mut base = world.clone();
            base.actor_uid = pr.actor_uid;
            let patch_tap = TapPlan {
                target: target.clone(),
                mode: TapMode::Patch(value),
                occurrence: None,
            };
            let args = pr.arg_values()?;
            let before = snapshot(&base, None);
            let Ok((_, after_world, log)) = run_entry(tc, &pr.entry, &args, &base, &[patch_tap])
            else {
                continue;
            };
            if !log[0].is_empty() {
                covered = true;
            } else {
                continue;
            }
            let after = snapshot(&after_world, None);
            let verdict = check_escalation(&before, &after, pr.actor_uid);
            if verdict.escalated {
                return Ok((CandidateStatus::Pe, Some(value), verdict.predicate));
            }
        }
    }

    if !covered {
        // coverage probe: any scenario (including aux) that reaches the tap
        for s in &suite.scenarios {
            let mut w = world.clone();
            w.actor_uid = s.actor_uid;
            let tap = TapPlan {
                target: target.clone(),
                mode: TapMode::Record,
                occurrence: None,
            };
            let Ok(args) = s.arg_values() else { continue };
            if let Ok((_, _, log)) = run_entry(tc, &s.entry, &args, &w, &[tap]) {
                if !log[0].is_empty() {
                    covered = true;
                    break;
                }
            }
        }
    }

    if covered {
        Ok((CandidateStatus::Npe, None, None))
    } else {
        Ok((CandidateStatus::NoTest, None, None))
    }
}

/// Run `verify_candidate` over a whole catalog. Candidates are independent
/// and verified in parallel under the `parallel` feature.
pub fn verify_catalog(
    tc: &TypedCorpus,
    candidates: &[FskoCandidate],
    suite: &ScenarioSuite,
    world: &FileWorld,
) -> Result<VerifiedCatalog, String> {
    suite.validate(tc)?;
    let results = crate::par::map_slice(candidates, |cand| {
        verify_candidate(tc, cand, suite, world)
            .map(|(status, value, predicate)| VerifiedEntry {
                candidate: cand.path.clone(),
                class: cand.class.name().to_string(),
                status,
                predicate,
                target_value: value,
            })
    });
    let mut entries = Vec::new();
    for r in results {
        entries.push(r?);
    }
    entries.sort_by(|a, b| a.candidate.cmp(&b.candidate));
    let tested = entries
        .iter()
        .filter(|e| e.status != CandidateStatus::NoTest)
        .count();
    let pe = entries
        .iter()
        .filter(|e| e.status == CandidateStatus::Pe)
        .count();
    Ok(VerifiedCatalog {
        funnel: Funnel {
            static_count: entries.len(),
            tested,
            pe,
        },
        entries,
    })
}
