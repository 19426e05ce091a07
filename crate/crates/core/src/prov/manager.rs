//! Client-side provenance manager: publishing artifacts with their documents,
//! the atomic update of a provenance record, and consumer-side verification.

use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::classify::{explain_update, UpdateClass};
use super::document::{InvalidDocument, ProvDocument};
use super::store::{ContentStore, ProvStore, StoreError, Stored, DATA_SCHEME, PROV_SCHEME};
use crate::canonical::canonical_digest;
use crate::digest::Digest;
use crate::identity::{check_auth, Capability, Identity, Permission};
use crate::ledger::{ChaincodeError, LedgerClient, LedgerError, LedgerValue, Receipt, Status, SubmitError};
use crate::pid::{LinkRequest, ObjectKind, Pid, PidError, PidRecord, PidService};

#[derive(Debug, thiserror::Error)]
pub enum ProvError {
    #[error("Error: Unauthorized user ({0})")]
    Unauthorized(String),
    #[error("unknown pid `{0}`")]
    UnknownPid(String),
    #[error("`{0}` is not a provenance record")]
    NotProvenance(String),
    #[error("`{0}` already has a newer version")]
    SuccessorExists(String),
    #[error("illegal update: {}", .0.join("; "))]
    IllegalUpdate(Vec<String>),
    #[error(transparent)]
    InvalidDocument(#[from] InvalidDocument),
    #[error("integrity failure: {0}")]
    Integrity(String),
    #[error("ledger rejected the transaction: {0}")]
    LedgerRejected(SubmitError),
    #[error("ledger unavailable: {0}")]
    Ledger(#[from] LedgerError),
    #[error("registry error: {0}")]
    Registry(PidError),
    #[error("storage error: {0}")]
    Store(StoreError),
    #[error("injected failure at {0:?}")]
    Injected(FailurePoint),
    #[error("{0}")]
    Usage(String),
}

impl From<PidError> for ProvError {
    fn from(e: PidError) -> Self {
        match e {
            PidError::UnknownPid(p) => ProvError::UnknownPid(p),
            PidError::SuccessorExists(p) => ProvError::SuccessorExists(p),
            PidError::Unauthorized(p) => ProvError::Unauthorized(p),
            other => ProvError::Registry(other),
        }
    }
}

impl From<StoreError> for ProvError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Invalid(i) => ProvError::InvalidDocument(i),
            StoreError::ChecksumMismatch { .. } | StoreError::NotFound(_) | StoreError::Unparseable(_) => {
                ProvError::Integrity(e.to_string())
            }
            other => ProvError::Store(other),
        }
    }
}

impl From<SubmitError> for ProvError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Chaincode(ChaincodeError::Unauthorized) => ProvError::Unauthorized("ledger refused the caller".into()),
            SubmitError::Ledger(l) => ProvError::Ledger(l),
            other => ProvError::LedgerRejected(other),
        }
    }
}

/// Points inside [`ProvManager::atomic_update`] where a failure can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePoint {
    BeforeStore,
    AfterStore,
    AfterMint,
    AfterLink,
    LedgerCommit,
}

impl FailurePoint {
    pub const ALL: [FailurePoint; 5] = [
        FailurePoint::BeforeStore,
        FailurePoint::AfterStore,
        FailurePoint::AfterMint,
        FailurePoint::AfterLink,
        FailurePoint::LedgerCommit,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct UpdateOutcome {
    pub old_pid: Pid,
    pub new_pid: Pid,
    pub root_pid: Pid,
    pub classification: UpdateClass,
    pub version: u64,
    pub uri: String,
    pub checksum: Digest,
    pub tx_id: Digest,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PublishedArtifact {
    pub entity: String,
    pub pid: Pid,
    pub uri: String,
    pub checksum: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PublishOutcome {
    pub artifacts: Vec<PublishedArtifact>,
    pub prov_pid: Pid,
    pub prov_uri: String,
    pub prov_checksum: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Verified,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct VersionSummary {
    pub pid: Pid,
    pub version: u64,
    pub uri: String,
    pub checksum: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LedgerEntrySummary {
    pub height: u64,
    pub tx_id: Digest,
    pub kind: crate::ledger::TxKind,
    pub version: u64,
    pub status: Status,
    pub timestamp: crate::time::Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct VerifyReport {
    pub pid: Pid,
    pub kind: ObjectKind,
    pub verdict: Verdict,
    pub status: Status,
    pub ledger_key: Pid,
    pub ledger_version: u64,
    pub computed_checksum: Option<Digest>,
    pub expected_checksum: Digest,
    pub problems: Vec<String>,
    pub versions: Vec<VersionSummary>,
    pub ledger_history: Vec<LedgerEntrySummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Journal {
    old_pid: Pid,
    root_pid: Pid,
    caller: Identity,
    blob: Option<Stored>,
    new_pid: Option<Pid>,
    link: Option<LinkRequest>,
}

/// Coordinates the document store, the PID service and the ledger on behalf
/// of one caller.
pub struct ProvManager {
    ledger: LedgerClient,
    pids: Arc<dyn PidService>,
    store: Arc<ProvStore>,
    data: Arc<ContentStore>,
    journal_dir: Option<PathBuf>,
    failpoint: Mutex<Option<FailurePoint>>,
    in_flight: Mutex<HashSet<Pid>>,
}

fn ledger_version_of(receipt: &Receipt) -> (Digest, u64) {
    (receipt.tx_id, receipt.height)
}

impl ProvManager {
    pub fn new(ledger: LedgerClient, pids: Arc<dyn PidService>, store: Arc<ProvStore>, data: Arc<ContentStore>) -> Self {
        ProvManager {
            ledger,
            pids,
            store,
            data,
            journal_dir: None,
            failpoint: Mutex::new(None),
            in_flight: Mutex::new(HashSet::new()),
        }
    }

    /// Keeps a write-ahead journal of in-progress updates under `dir`.
    pub fn with_journal(mut self, dir: impl Into<PathBuf>) -> Self {
        self.journal_dir = Some(dir.into());
        self
    }

    /// Arms a one-shot failure at `point` for the next update.
    pub fn inject_failure(&self, point: FailurePoint) {
        *self.failpoint.lock() = Some(point);
    }

    pub fn ledger(&self) -> &LedgerClient {
        &self.ledger
    }

    pub fn pids(&self) -> &Arc<dyn PidService> {
        &self.pids
    }

    pub fn store(&self) -> &Arc<ProvStore> {
        &self.store
    }

    pub fn data(&self) -> &Arc<ContentStore> {
        &self.data
    }

    fn caller(&self) -> &Identity {
        &self.ledger.credentials().identity
    }

    fn fail_at(&self, point: FailurePoint) -> Result<(), ProvError> {
        let mut armed = self.failpoint.lock();
        if *armed == Some(point) {
            *armed = None;
            return Err(ProvError::Injected(point));
        }
        Ok(())
    }

    fn require_writer(&self) -> Result<(), ProvError> {
        let me = self.caller();
        if !self.ledger.federation().verify_identity(me) {
            return Err(ProvError::Unauthorized(format!("identity {me} does not verify")));
        }
        if !me.role.can_write() {
            return Err(ProvError::Unauthorized(format!("{me} has a read-only role")));
        }
        Ok(())
    }

    fn check_entity_pids(&self, doc: &ProvDocument, skip: &[&str]) -> Result<(), ProvError> {
        for e in &doc.entities {
            if skip.contains(&e.local_id.as_str()) {
                continue;
            }
            if let Some(pid) = &e.artifact_pid {
                self.pids.resolve(pid).map_err(|_| {
                    ProvError::InvalidDocument(InvalidDocument(vec![format!(
                        "artifact-pid {pid} of entity `{}` does not resolve",
                        e.local_id
                    )]))
                })?;
            }
        }
        Ok(())
    }

    /// Stores each artifact, mints its PID and records it in `doc` on the
    /// named entity, then stores and registers the document. Both kinds of
    /// record are created on the ledger.
    pub fn publish(&self, artifacts: &[(Vec<u8>, String)], mut doc: ProvDocument) -> Result<PublishOutcome, ProvError> {
        self.require_writer()?;
        let owner = self.ledger.principal();
        for (_, entity) in artifacts {
            if doc.entity(entity).is_none() {
                return Err(InvalidDocument(vec![format!("entity `{entity}` is not declared")]).into());
            }
        }
        let skip: Vec<&str> = artifacts.iter().map(|(_, e)| e.as_str()).collect();
        self.check_entity_pids(&doc, &skip)?;
        doc.validate()?;

        let mut published = Vec::new();
        for (bytes, entity) in artifacts {
            let stored = self.data.put(bytes)?;
            let rec = self.pids.mint(ObjectKind::Artifact, &stored.uri, Some(stored.checksum), &owner)?;
            let e = doc.entity_mut(entity).expect("checked above");
            e.artifact_pid = Some(rec.pid.clone());
            e.checksum = Some(stored.checksum);
            published.push(PublishedArtifact { entity: entity.clone(), pid: rec.pid, uri: stored.uri, checksum: stored.checksum });
        }
        let stored = self.store.store_document(&doc)?;
        let prov = self.pids.mint(ObjectKind::ProvenanceRecord, &stored.uri, Some(stored.checksum), &owner)?;

        for a in &published {
            self.ledger.hlf_create(ObjectKind::Artifact, &a.pid, &a.uri, a.checksum, vec![owner.clone()])?;
        }
        self.ledger.hlf_create(ObjectKind::ProvenanceRecord, &prov.pid, &stored.uri, stored.checksum, vec![owner])?;
        Ok(PublishOutcome { artifacts: published, prov_pid: prov.pid, prov_uri: stored.uri, prov_checksum: stored.checksum })
    }

    /// Stores and registers a single artifact without a document, for
    /// artifacts that existing documents will reference later.
    pub fn register_artifact(&self, bytes: &[u8]) -> Result<PublishedArtifact, ProvError> {
        self.require_writer()?;
        let owner = self.ledger.principal();
        let stored = self.data.put(bytes)?;
        let rec = self.pids.mint(ObjectKind::Artifact, &stored.uri, Some(stored.checksum), &owner)?;
        self.ledger.hlf_create(ObjectKind::Artifact, &rec.pid, &stored.uri, stored.checksum, vec![owner])?;
        Ok(PublishedArtifact { entity: String::new(), pid: rec.pid, uri: stored.uri, checksum: stored.checksum })
    }

    /// Fetches the document registered under `pid` (any version), verifying
    /// its checksum.
    pub fn fetch(&self, pid: &Pid) -> Result<(PidRecord, ProvDocument), ProvError> {
        let rec = self.pids.resolve(pid)?;
        if rec.object_kind != ObjectKind::ProvenanceRecord {
            return Err(ProvError::NotProvenance(pid.to_string()));
        }
        let checksum = rec.checksum.ok_or_else(|| ProvError::Integrity(format!("{pid} has no checksum")))?;
        let mut doc = self.store.fetch_document(&rec.target_uri, &checksum)?;
        doc.doc_id = Some(rec.pid.clone());
        Ok((rec, doc))
    }

    /// Fetches a document by its ledger coordinates.
    pub fn fetch_ledger_document(&self, value: &LedgerValue) -> Result<ProvDocument, ProvError> {
        Ok(self.store.fetch_document(&value.uri, &value.checksum)?)
    }

    /// The newest record of the chain `pid` belongs to, and its root.
    pub fn chain_ends(&self, pid: &Pid) -> Result<(PidRecord, PidRecord), ProvError> {
        let history = self.pids.version_history(pid)?;
        let root = history.first().cloned().ok_or_else(|| ProvError::UnknownPid(pid.to_string()))?;
        let newest = history.last().cloned().expect("non-empty");
        Ok((root, newest))
    }

    /// Replaces the document of provenance record `old_pid` with `new_doc` as
    /// a new version. Either every step takes effect or none does.
    pub fn atomic_update(
        &self,
        old_pid: &Pid,
        new_doc: ProvDocument,
        permission: Option<Permission>,
    ) -> Result<UpdateOutcome, ProvError> {
        self.require_writer()?;
        if !self.in_flight.lock().insert(old_pid.clone()) {
            return Err(ProvError::SuccessorExists(old_pid.to_string()));
        }
        let result = self.update_inner(old_pid, new_doc, permission);
        self.in_flight.lock().remove(old_pid);
        result
    }

    fn update_inner(
        &self,
        old_pid: &Pid,
        mut new_doc: ProvDocument,
        permission: Option<Permission>,
    ) -> Result<UpdateOutcome, ProvError> {
        let (old_rec, old_doc) = self.fetch(old_pid)?;
        if old_rec.successor.is_some() {
            return Err(ProvError::SuccessorExists(old_pid.to_string()));
        }
        let (root, _) = self.chain_ends(old_pid)?;
        let value = self.ledger.hlf_read(&root.pid)?.ok_or_else(|| ProvError::UnknownPid(root.pid.to_string()))?;
        let me = self.caller();
        if !check_auth(
            &root.pid,
            permission.as_ref(),
            me,
            Some(&value.owners),
            Capability::UpdateProvenance,
            self.ledger.federation(),
        ) {
            return Err(ProvError::Unauthorized(format!("{me} may not update {}", root.pid)));
        }
        if Some(value.checksum) != old_rec.checksum || value.version != old_rec.version_number {
            return Err(ProvError::Integrity(format!("ledger and registry disagree on the newest version of {}", root.pid)));
        }
        new_doc.validate()?;
        self.check_entity_pids(&new_doc, &[])?;
        let classification = explain_update(&old_doc, &new_doc);
        if classification.class == UpdateClass::Illegal {
            return Err(ProvError::IllegalUpdate(classification.violations));
        }
        new_doc.doc_id = None;

        let mut journal =
            Journal { old_pid: old_pid.clone(), root_pid: root.pid.clone(), caller: me.clone(), blob: None, new_pid: None, link: None };
        let outcome = self.apply_update(&mut journal, &new_doc, permission);
        match outcome {
            Ok(receipt) => {
                self.clear_journal(&journal);
                let blob = journal.blob.expect("stored");
                let (tx_id, height) = ledger_version_of(&receipt);
                Ok(UpdateOutcome {
                    old_pid: old_pid.clone(),
                    new_pid: journal.new_pid.expect("minted"),
                    root_pid: root.pid,
                    classification: classification.class,
                    version: old_rec.version_number + 1,
                    uri: blob.uri,
                    checksum: blob.checksum,
                    tx_id,
                    height,
                })
            }
            Err(e) => {
                if let Err(rb) = self.roll_back(&journal) {
                    log::error!("rollback of update to {old_pid} incomplete: {rb}");
                    return Err(e);
                }
                self.clear_journal(&journal);
                Err(e)
            }
        }
    }

    fn apply_update(
        &self,
        journal: &mut Journal,
        new_doc: &ProvDocument,
        permission: Option<Permission>,
    ) -> Result<Receipt, ProvError> {
        self.write_journal(journal)?;
        self.fail_at(FailurePoint::BeforeStore)?;
        let stored = self.store.store_document(new_doc)?;
        journal.blob = Some(stored.clone());
        self.write_journal(journal)?;
        self.fail_at(FailurePoint::AfterStore)?;

        let owner = self.ledger.principal();
        let rec = self.pids.mint(ObjectKind::ProvenanceRecord, &stored.uri, Some(stored.checksum), &owner)?;
        journal.new_pid = Some(rec.pid.clone());
        self.write_journal(journal)?;
        self.fail_at(FailurePoint::AfterMint)?;

        let link = LinkRequest::sign(self.ledger.credentials(), journal.old_pid.clone(), rec.pid.clone(), permission.clone());
        journal.link = Some(link.clone());
        self.write_journal(journal)?;
        self.pids.link_new_version(&link)?;
        self.fail_at(FailurePoint::AfterLink)?;

        self.fail_at(FailurePoint::LedgerCommit)?;
        Ok(self.ledger.hlf_update_prov(&journal.root_pid, &stored.uri, stored.checksum, permission)?)
    }

    fn roll_back(&self, journal: &Journal) -> Result<(), ProvError> {
        if let Some(link) = &journal.link {
            match self.pids.revert_link(link) {
                Ok(()) => {}
                // The link itself may not have happened.
                Err(PidError::BrokenChain(_)) | Err(PidError::UnknownPid(_)) => {}
                Err(e) => {
                    let linked = self.pids.resolve(&link.old).map(|r| r.successor.as_ref() == Some(&link.new)).unwrap_or(false);
                    if linked {
                        return Err(e.into());
                    }
                }
            }
        }
        if let Some(pid) = &journal.new_pid {
            self.pids.discard(pid, &journal.caller)?;
        }
        if let Some(blob) = &journal.blob {
            if blob.created && !self.blob_referenced(&blob.checksum)? {
                self.store.blobs().remove(&blob.checksum)?;
            }
        }
        Ok(())
    }

    /// Whether any ledger entry still points at this document blob.
    fn blob_referenced(&self, checksum: &Digest) -> Result<bool, ProvError> {
        let state = self.ledger.world_state()?;
        let referenced = state.iter().any(|(_, v)| v.checksum == *checksum);
        Ok(referenced)
    }

    fn journal_path(&self, journal: &Journal) -> Option<PathBuf> {
        let name = journal.old_pid.to_string().replace(['/', '\\'], "_");
        self.journal_dir.as_ref().map(|d| d.join(format!("{name}.json")))
    }

    fn write_journal(&self, journal: &Journal) -> Result<(), ProvError> {
        let Some(path) = self.journal_path(journal) else {
            return Ok(());
        };
        let io = |e: std::io::Error| ProvError::Store(StoreError::Io(e));
        fs::create_dir_all(path.parent().expect("journal dir")).map_err(io)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(journal).expect("journal serializes")).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    fn clear_journal(&self, journal: &Journal) {
        if let Some(path) = self.journal_path(journal) {
            let _ = fs::remove_file(path);
        }
    }

    /// Finishes or undoes updates interrupted by a crash. Returns the number of
    /// journal entries handled.
    pub fn recover(&self) -> Result<usize, ProvError> {
        let Some(dir) = &self.journal_dir else {
            return Ok(0);
        };
        if !dir.exists() {
            return Ok(0);
        }
        let mut handled = 0;
        let entries = fs::read_dir(dir).map_err(|e| ProvError::Store(StoreError::Io(e)))?;
        for entry in entries {
            let path = entry.map_err(|e| ProvError::Store(StoreError::Io(e)))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Ok(raw) = fs::read(&path) else { continue };
            let Ok(journal) = serde_json::from_slice::<Journal>(&raw) else {
                let _ = fs::remove_file(&path);
                continue;
            };
            let committed = match (&journal.blob, self.ledger.hlf_read(&journal.root_pid)?) {
                (Some(blob), Some(v)) => v.checksum == blob.checksum && journal.link.is_some(),
                _ => false,
            };
            if !committed {
                self.roll_back(&journal)?;
            }
            let _ = fs::remove_file(&path);
            handled += 1;
        }
        Ok(handled)
    }

    pub fn invalidate(&self, pid: &Pid, reason: &str, permission: Option<Permission>) -> Result<Receipt, ProvError> {
        let rec = self.pids.resolve(pid)?;
        if rec.object_kind != ObjectKind::Artifact {
            return Err(ProvError::LedgerRejected(SubmitError::Chaincode(ChaincodeError::ProvDeleteRejected)));
        }
        Ok(self.ledger.hlf_invalidate(pid, reason, permission)?)
    }

    fn fetch_content(&self, uri: &str, expected: &Digest) -> Result<Vec<u8>, StoreError> {
        let scheme = uri.split_once("://").map(|(s, _)| s).unwrap_or("");
        match scheme {
            s if s == PROV_SCHEME => self.store.blobs().get(uri, expected),
            s if s == DATA_SCHEME => self.data.get(uri, expected),
            _ => Err(StoreError::BadUri(uri.to_string())),
        }
    }

    /// Resolves `pid`, fetches its content, recomputes the checksum and
    /// compares it with the registry and the ledger. Needs no write capability.
    pub fn verify(&self, pid: &Pid) -> Result<VerifyReport, ProvError> {
        let rec = self.pids.resolve(pid)?;
        let (versions, ledger_key) = match rec.object_kind {
            ObjectKind::Artifact => (vec![rec.clone()], rec.pid.clone()),
            ObjectKind::ProvenanceRecord => {
                let h = self.pids.version_history(pid)?;
                let root = h[0].pid.clone();
                (h, root)
            }
        };
        let value = self.ledger.hlf_read(&ledger_key)?.ok_or_else(|| ProvError::UnknownPid(ledger_key.to_string()))?;
        let history = self.ledger.get_history(&ledger_key)?;
        let mut problems = Vec::new();

        let expected = match rec.checksum {
            Some(c) => c,
            None => {
                problems.push("registry record has no checksum".to_string());
                value.checksum
            }
        };
        let is_newest = rec.successor.is_none();
        if is_newest && expected != value.checksum {
            problems.push(format!("registry checksum {expected} differs from ledger checksum {}", value.checksum));
        }
        if !is_newest {
            let on_ledger = history
                .iter()
                .filter_map(|h| h.value_for(&ledger_key))
                .any(|v| v.version == rec.version_number && v.checksum == expected);
            if !on_ledger {
                problems.push(format!("version {} is not recorded on the ledger", rec.version_number));
            }
        }
        let computed = match self.fetch_content(&rec.target_uri, &expected) {
            Ok(bytes) => Some(Digest::of(&bytes)),
            Err(StoreError::ChecksumMismatch { actual, .. }) => {
                problems.push(format!("content checksum {actual} does not match {expected}"));
                Some(actual)
            }
            Err(e) => {
                problems.push(format!("content unavailable: {e}"));
                None
            }
        };
        let ledger_history = history
            .iter()
            .filter_map(|h| {
                h.value_for(&ledger_key).map(|v| LedgerEntrySummary {
                    height: h.height,
                    tx_id: h.tx.tx_id,
                    kind: h.tx.kind(),
                    version: v.version,
                    status: v.status,
                    timestamp: h.tx.timestamp(),
                })
            })
            .collect();
        Ok(VerifyReport {
            pid: pid.clone(),
            kind: rec.object_kind,
            verdict: if problems.is_empty() { Verdict::Verified } else { Verdict::Mismatch },
            status: value.status,
            ledger_key,
            ledger_version: value.version,
            computed_checksum: computed,
            expected_checksum: expected,
            problems,
            versions: versions
                .iter()
                .map(|r| VersionSummary { pid: r.pid.clone(), version: r.version_number, uri: r.target_uri.clone(), checksum: r.checksum })
                .collect(),
            ledger_history,
        })
    }

    /// Digest over ledger world state, registry and both stores; equal before
    /// and after any failed update.
    pub fn system_digest(&self) -> Result<Digest, ProvError> {
        let ledger = self.ledger.world_state()?.digest();
        let registry = self.pids.state_digest()?;
        let docs = self.store.blobs().digest()?;
        let data = self.data.digest()?;
        Ok(canonical_digest(&[ledger, registry, docs, data]))
    }
}
