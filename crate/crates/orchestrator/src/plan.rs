//! Desired-state reconciliation as a pure set computation.

use std::collections::{BTreeMap, BTreeSet};

use lambda_proto::{DesiredState, FunctionManifest};

/// What is currently deployed for one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployed {
    pub manifest: FunctionManifest,
    pub checksum: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Plan {
    pub spawn: BTreeSet<String>,
    pub stop: BTreeSet<String>,
    pub keep: BTreeSet<String>,
    pub restart_changed: BTreeSet<String>,
}

impl Plan {
    /// True when applying the plan changes nothing.
    pub fn is_empty(&self) -> bool {
        self.spawn.is_empty() && self.stop.is_empty() && self.restart_changed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("stale revision {got} (last applied {applied})")]
pub struct StaleRevision {
    pub got: u64,
    pub applied: u64,
}

pub fn sync(current: &BTreeMap<String, Deployed>, desired: &DesiredState, last_applied: u64) -> Result<Plan, StaleRevision> {
    if desired.revision < last_applied {
        return Err(StaleRevision { got: desired.revision, applied: last_applied });
    }
    let mut plan = Plan::default();
    let mut wanted = BTreeSet::new();
    for f in &desired.functions {
        let name = &f.manifest.name;
        wanted.insert(name.clone());
        match current.get(name) {
            None => plan.spawn.insert(name.clone()),
            Some(d) if d.checksum != f.checksum || d.manifest != f.manifest => plan.restart_changed.insert(name.clone()),
            Some(_) => plan.keep.insert(name.clone()),
        };
    }
    plan.stop = current.keys().filter(|n| !wanted.contains(*n)).cloned().collect();
    Ok(plan)
}
