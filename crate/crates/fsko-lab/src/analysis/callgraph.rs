//! Call graph with registration-resolved indirect edges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::ir::{PathKey, TypedCorpus};

use super::db::{registration_targets, StmtDb};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CallEdge {
    pub caller: String,
    pub callee: String,
    pub indirect: bool,
}

#[derive(Debug, Default)]
pub struct CallGraph {
    pub edges: BTreeSet<CallEdge>,
    /// Warnings such as icalls through never-registered fields.
    pub warnings: Vec<String>,
}

impl CallGraph {
    pub fn callees<'a>(&'a self, func: &'a str) -> impl Iterator<Item = &'a CallEdge> + 'a {
        self.edges.iter().filter(move |e| e.caller == func)
    }

    /// Functions reachable from `entry`, inclusive.
    pub fn reachable(&self, entry: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(entry.to_string());
        queue.push_back(entry.to_string());
        while let Some(f) = queue.pop_front() {
            for e in self.callees(&f) {
                if seen.insert(e.callee.clone()) {
                    queue.push_back(e.callee.clone());
                }
            }
        }
        seen
    }

    /// Error with the offending function if any call cycle exists. The toy
    /// language has no loops, so cycles would defeat the interpreter's
    /// termination argument.
    pub fn check_acyclic(&self) -> Result<(), String> {
        let mut nodes: BTreeSet<&str> = BTreeSet::new();
        for e in &self.edges {
            nodes.insert(&e.caller);
            nodes.insert(&e.callee);
        }
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        for n in &nodes {
            if self.visit(n, &mut state).is_err() {
                return Err(format!("recursive call cycle through `{n}`"));
            }
        }
        Ok(())
    }

    fn visit<'a>(&'a self, n: &'a str, state: &mut BTreeMap<&'a str, u8>) -> Result<(), ()> {
        match state.get(n) {
            Some(2) => return Ok(()),
            Some(1) => return Err(()),
            _ => {}
        }
        state.insert(n, 1);
        for e in self.callees(n) {
            self.visit(&e.callee, state)?;
        }
        state.insert(n, 2);
        Ok(())
    }
}

/// Build the call graph: direct edges from call statements; indirect edges
/// from icall statements to exactly the functions registered into the same
/// (record, field) with a matching signature.
pub fn build_callgraph(tc: &TypedCorpus, db: &StmtDb) -> CallGraph {
    let mut cg = CallGraph::default();
    for (fname, fdb) in &db.funcs {
        for call in &fdb.calls {
            if call.is_indirect {
                match &call.icall_key {
                    Some(key) => {
                        let targets = registration_targets(tc, key);
                        if targets.is_empty() {
                            cg.warnings.push(format!(
                                "icall through never-registered field {}.{} at {}",
                                key.0, key.1, call.site
                            ));
                        }
                        for t in targets {
                            cg.edges.insert(CallEdge {
                                caller: fname.clone(),
                                callee: t,
                                indirect: true,
                            });
                        }
                    }
                    None => cg
                        .warnings
                        .push(format!("unresolvable icall target at {}", call.site)),
                }
            } else {
                for callee in &call.callees {
                    cg.edges.insert(CallEdge {
                        caller: fname.clone(),
                        callee: callee.clone(),
                        indirect: false,
                    });
                }
            }
        }
    }
    cg
}

/// The alias map: canonical path -> sites reading or writing it.
pub fn alias_map(db: &StmtDb) -> BTreeMap<PathKey, BTreeSet<String>> {
    let mut map: BTreeMap<PathKey, BTreeSet<String>> = BTreeMap::new();
    for (fname, fdb) in &db.funcs {
        for k in &fdb.referenced {
            map.entry(k.clone()).or_default().insert(fname.clone());
        }
    }
    map
}
