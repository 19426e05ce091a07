use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::{LedgerValue, WriteEntry};
use crate::canonical::canonical_digest;
use crate::digest::Digest;
use crate::pid::Pid;

/// The current key → value view, derived by replaying valid transactions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorldState {
    entries: BTreeMap<Pid, LedgerValue>,
}

impl WorldState {
    pub fn get(&self, pid: &Pid) -> Option<&LedgerValue> {
        self.entries.get(pid)
    }

    pub fn version(&self, pid: &Pid) -> Option<u64> {
        self.entries.get(pid).map(|v| v.version)
    }

    pub fn apply(&mut self, writes: &[WriteEntry]) {
        for w in writes {
            self.entries.insert(w.pid.clone(), w.value.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Pid, &LedgerValue)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Digest of the canonical serialization; equal on every replica holding
    /// the same state.
    pub fn digest(&self) -> Digest {
        canonical_digest(&self.entries)
    }
}
