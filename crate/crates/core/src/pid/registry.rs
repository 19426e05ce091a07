use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{LinkRequest, ObjectKind, Pid, PidError, PidRecord, PidService, META_OWNER};
use crate::canonical::canonical_digest;
use crate::digest::Digest;
use crate::identity::{check_auth, Capability, Federation, Identity};

const INTENT_FILE: &str = "link.intent.json";
const SUFFIX_WIDTH: usize = 6;

/// Local PID registry. Records live in memory and, when a directory is
/// configured, as one JSON file per suffix.
pub struct PidRegistry {
    prefix: String,
    dir: Option<PathBuf>,
    federation: Arc<Federation>,
    records: RwLock<BTreeMap<String, PidRecord>>,
}

#[derive(Serialize, Deserialize)]
struct Intent {
    records: Vec<PidRecord>,
}

fn unavailable(e: impl std::fmt::Display) -> PidError {
    PidError::RegistryUnavailable(e.to_string())
}

impl PidRegistry {
    pub fn in_memory(prefix: impl Into<String>, federation: Arc<Federation>) -> Self {
        PidRegistry { prefix: prefix.into(), dir: None, federation, records: RwLock::new(BTreeMap::new()) }
    }

    /// Opens (or creates) a registry persisted under `dir`, finishing any
    /// link that was interrupted half-way.
    pub fn open(prefix: impl Into<String>, dir: impl Into<PathBuf>, federation: Arc<Federation>) -> Result<Self, PidError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(unavailable)?;
        let registry = PidRegistry { prefix: prefix.into(), dir: Some(dir.clone()), federation, records: RwLock::new(BTreeMap::new()) };
        let intent_path = dir.join(INTENT_FILE);
        if intent_path.exists() {
            let raw = fs::read(&intent_path).map_err(unavailable)?;
            if let Ok(intent) = serde_json::from_slice::<Intent>(&raw) {
                for record in &intent.records {
                    registry.write_record_file(record)?;
                }
            }
            fs::remove_file(&intent_path).map_err(unavailable)?;
        }
        let mut records = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(unavailable)? {
            let path = entry.map_err(unavailable)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let raw = fs::read(&path).map_err(unavailable)?;
            let record: PidRecord = serde_json::from_slice(&raw)
                .map_err(|e| unavailable(format!("{}: {e}", path.display())))?;
            records.insert(record.pid.suffix().to_string(), record);
        }
        *registry.records.write() = records;
        Ok(registry)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn record_path(dir: &Path, suffix: &str) -> PathBuf {
        dir.join(format!("{}.json", suffix.replace('/', "_")))
    }

    fn write_record_file(&self, record: &PidRecord) -> Result<(), PidError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = Self::record_path(dir, record.pid.suffix());
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec_pretty(record).expect("record serializes");
        let mut f = fs::File::create(&tmp).map_err(unavailable)?;
        f.write_all(&bytes).map_err(unavailable)?;
        f.sync_all().map_err(unavailable)?;
        fs::rename(&tmp, &path).map_err(unavailable)
    }

    /// Writes several records as one unit: an intent file first, then each
    /// record, then the intent is removed. `open` replays a leftover intent.
    fn persist_all(&self, records: &[&PidRecord]) -> Result<(), PidError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let intent = Intent { records: records.iter().map(|r| (*r).clone()).collect() };
        let intent_path = dir.join(INTENT_FILE);
        fs::write(&intent_path, serde_json::to_vec(&intent).expect("intent serializes")).map_err(unavailable)?;
        for record in records {
            self.write_record_file(record)?;
        }
        fs::remove_file(&intent_path).map_err(unavailable)
    }

    fn own_suffix<'a>(&self, pid: &'a Pid) -> Result<&'a str, PidError> {
        if pid.prefix() != self.prefix {
            return Err(PidError::UnknownPid(pid.to_string()));
        }
        Ok(pid.suffix())
    }

    fn get(records: &BTreeMap<String, PidRecord>, pid: &Pid) -> Option<PidRecord> {
        records.get(pid.suffix()).filter(|r| r.pid == *pid).cloned()
    }

    fn next_suffix(records: &BTreeMap<String, PidRecord>) -> String {
        let next = records.keys().filter_map(|s| s.parse::<u64>().ok()).max().unwrap_or(0) + 1;
        format!("{next:0width$}", width = SUFFIX_WIDTH)
    }

    /// Owner of the chain `pid` belongs to, taken from its first version.
    fn chain_root(records: &BTreeMap<String, PidRecord>, pid: &Pid) -> Result<PidRecord, PidError> {
        let mut current = Self::get(records, pid).ok_or_else(|| PidError::UnknownPid(pid.to_string()))?;
        let mut steps = 0usize;
        while let Some(prev) = current.predecessor.clone() {
            current = Self::get(records, &prev).ok_or_else(|| PidError::BrokenChain(prev.to_string()))?;
            steps += 1;
            if steps > records.len() {
                return Err(PidError::BrokenChain(pid.to_string()));
            }
        }
        Ok(current)
    }

    fn authorize_link(&self, records: &BTreeMap<String, PidRecord>, request: &LinkRequest) -> Result<(), PidError> {
        if !request.signature_valid() {
            return Err(PidError::Unauthorized(request.old.to_string()));
        }
        let root = Self::chain_root(records, &request.old)?;
        let owners: Vec<String> = root.owner().map(str::to_string).into_iter().collect();
        let ok = check_auth(
            &root.pid,
            request.permission.as_ref(),
            &request.caller,
            Some(&owners),
            Capability::UpdateProvenance,
            &self.federation,
        );
        if ok {
            Ok(())
        } else {
            Err(PidError::Unauthorized(request.old.to_string()))
        }
    }
}

impl PidService for PidRegistry {
    fn mint(&self, kind: ObjectKind, target_uri: &str, checksum: Option<Digest>, owner: &str) -> Result<PidRecord, PidError> {
        let mut records = self.records.write();
        let suffix = Self::next_suffix(&records);
        let pid = Pid::new(self.prefix.clone(), suffix.clone())?;
        let record = PidRecord {
            pid,
            target_uri: target_uri.to_string(),
            checksum,
            object_kind: kind,
            version_number: 1,
            predecessor: None,
            successor: None,
            metadata: BTreeMap::from([(META_OWNER.to_string(), owner.to_string())]),
        };
        self.persist_all(&[&record])?;
        records.insert(suffix, record.clone());
        Ok(record)
    }

    fn resolve(&self, pid: &Pid) -> Result<PidRecord, PidError> {
        self.own_suffix(pid)?;
        Self::get(&self.records.read(), pid).ok_or_else(|| PidError::UnknownPid(pid.to_string()))
    }

    fn link_new_version(&self, request: &LinkRequest) -> Result<(), PidError> {
        self.own_suffix(&request.old)?;
        self.own_suffix(&request.new)?;
        let mut records = self.records.write();
        let unknown = |p: &Pid| PidError::UnknownPid(p.to_string());
        let mut old = Self::get(&records, &request.old).ok_or_else(|| unknown(&request.old))?;
        let mut new = Self::get(&records, &request.new).ok_or_else(|| unknown(&request.new))?;
        for r in [&old, &new] {
            if r.object_kind != ObjectKind::ProvenanceRecord {
                return Err(PidError::KindMismatch(format!("{} is an {}", r.pid, r.object_kind)));
            }
        }
        if old.pid == new.pid {
            return Err(PidError::KindMismatch(format!("{} cannot succeed itself", old.pid)));
        }
        if old.successor.is_some() {
            return Err(PidError::SuccessorExists(old.pid.to_string()));
        }
        if new.predecessor.is_some() || new.successor.is_some() {
            return Err(PidError::SuccessorExists(new.pid.to_string()));
        }
        self.authorize_link(&records, request)?;
        old.successor = Some(new.pid.clone());
        new.predecessor = Some(old.pid.clone());
        new.version_number = old.version_number + 1;
        self.persist_all(&[&old, &new])?;
        records.insert(old.pid.suffix().to_string(), old);
        records.insert(new.pid.suffix().to_string(), new);
        Ok(())
    }

    fn version_history(&self, pid: &Pid) -> Result<Vec<PidRecord>, PidError> {
        self.own_suffix(pid)?;
        let records = self.records.read();
        let root = Self::chain_root(&records, pid)?;
        let mut chain = vec![root];
        while let Some(next) = chain.last().and_then(|r| r.successor.clone()) {
            let record = Self::get(&records, &next).ok_or_else(|| PidError::BrokenChain(next.to_string()))?;
            if chain.len() > records.len() {
                return Err(PidError::BrokenChain(next.to_string()));
            }
            chain.push(record);
        }
        Ok(chain)
    }

    fn revert_link(&self, request: &LinkRequest) -> Result<(), PidError> {
        let mut records = self.records.write();
        let unknown = |p: &Pid| PidError::UnknownPid(p.to_string());
        let mut old = Self::get(&records, &request.old).ok_or_else(|| unknown(&request.old))?;
        let mut new = Self::get(&records, &request.new).ok_or_else(|| unknown(&request.new))?;
        if old.successor.as_ref() != Some(&new.pid) || new.predecessor.as_ref() != Some(&old.pid) || new.successor.is_some() {
            return Err(PidError::KindMismatch(format!("{} -> {} is not the newest link", old.pid, new.pid)));
        }
        self.authorize_link(&records, request)?;
        old.successor = None;
        new.predecessor = None;
        new.version_number = 1;
        self.persist_all(&[&old, &new])?;
        records.insert(old.pid.suffix().to_string(), old);
        records.insert(new.pid.suffix().to_string(), new);
        Ok(())
    }

    fn discard(&self, pid: &Pid, caller: &Identity) -> Result<(), PidError> {
        self.own_suffix(pid)?;
        let mut records = self.records.write();
        let mut record = Self::get(&records, pid).ok_or_else(|| PidError::UnknownPid(pid.to_string()))?;
        if record.owner() != Some(caller.principal().as_str()) || !self.federation.verify_identity(caller) {
            return Err(PidError::Unauthorized(pid.to_string()));
        }
        if record.predecessor.is_some() || record.successor.is_some() {
            return Err(PidError::SuccessorExists(pid.to_string()));
        }
        let newest = records.keys().filter_map(|s| s.parse::<u64>().ok()).max();
        if newest.is_some() && newest == pid.suffix().parse::<u64>().ok() {
            if let Some(dir) = &self.dir {
                fs::remove_file(Self::record_path(dir, pid.suffix())).map_err(unavailable)?;
            }
            records.remove(pid.suffix());
        } else {
            record.metadata.insert("orphaned".into(), "true".into());
            self.persist_all(&[&record])?;
            records.insert(pid.suffix().to_string(), record);
        }
        Ok(())
    }

    fn fill_target(&self, pid: &Pid, uri: &str, checksum: Digest, caller: &Identity) -> Result<PidRecord, PidError> {
        self.own_suffix(pid)?;
        let mut records = self.records.write();
        let mut record = Self::get(&records, pid).ok_or_else(|| PidError::UnknownPid(pid.to_string()))?;
        if record.owner() != Some(caller.principal().as_str()) || !self.federation.verify_identity(caller) {
            return Err(PidError::Unauthorized(pid.to_string()));
        }
        if !record.target_uri.is_empty() {
            return Err(PidError::TargetAlreadySet(pid.to_string()));
        }
        record.target_uri = uri.to_string();
        record.checksum = Some(checksum);
        self.persist_all(&[&record])?;
        records.insert(pid.suffix().to_string(), record.clone());
        Ok(record)
    }

    fn state_digest(&self) -> Result<Digest, PidError> {
        Ok(canonical_digest(&*self.records.read()))
    }
}
