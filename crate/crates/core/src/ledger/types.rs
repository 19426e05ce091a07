use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::{canonical_digest, to_canonical_bytes};
use crate::crypto::Signature;
use crate::digest::Digest;
use crate::identity::{Federation, Identity, Permission, UserCredentials};
use crate::pid::{ObjectKind, Pid};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Valid,
    Invalidated,
    Affected,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Valid => "valid",
            Status::Invalidated => "invalidated",
            Status::Affected => "affected",
        })
    }
}

/// World-state value stored under a PID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerValue {
    pub uri: String,
    pub checksum: Digest,
    pub version: u64,
    pub owners: Vec<String>,
    pub timestamp: Timestamp,
    /// Artifact vs provenance record, fixed at creation.
    pub kind: ObjectKind,
    pub status: Status,
}

impl LedgerValue {
    pub fn is_invalidated(&self) -> bool {
        self.status == Status::Invalidated
    }
}

/// Chaincode invocation carried by a proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op")]
pub enum ChaincodeOp {
    CreateArtifact { uri: String, checksum: Digest, owners: Vec<String> },
    CreateProv { uri: String, checksum: Digest, owners: Vec<String> },
    UpdateProv { new_uri: String, new_checksum: Digest, permission: Option<Permission> },
    InvalidateArtifact { reason: String, permission: Option<Permission> },
    /// Status flag written by an invalidation cascade; `cause` must already be invalidated.
    FlagStatus { cause: Pid, status: Status },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxKind {
    CreateArtifact,
    CreateProv,
    UpdateProv,
    InvalidateArtifact,
    FlagStatus,
}

impl ChaincodeOp {
    pub fn kind(&self) -> TxKind {
        match self {
            ChaincodeOp::CreateArtifact { .. } => TxKind::CreateArtifact,
            ChaincodeOp::CreateProv { .. } => TxKind::CreateProv,
            ChaincodeOp::UpdateProv { .. } => TxKind::UpdateProv,
            ChaincodeOp::InvalidateArtifact { .. } => TxKind::InvalidateArtifact,
            ChaincodeOp::FlagStatus { .. } => TxKind::FlagStatus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub pid: Pid,
    pub op: ChaincodeOp,
    pub creator: Identity,
    pub timestamp: Timestamp,
    pub nonce: u64,
}

impl Proposal {
    pub fn kind(&self) -> TxKind {
        self.op.kind()
    }

    /// Transaction id: digest of the canonical proposal body.
    pub fn tx_id(&self) -> Digest {
        canonical_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedProposal {
    pub proposal: Proposal,
    pub tx_id: Digest,
    pub signature: Signature,
}

impl SignedProposal {
    pub fn sign(creds: &UserCredentials, proposal: Proposal) -> Self {
        let tx_id = proposal.tx_id();
        SignedProposal { signature: creds.sign(tx_id.as_bytes()), tx_id, proposal }
    }

    /// The id matches the body and the signature is the creator's.
    pub fn verify(&self) -> bool {
        self.proposal.tx_id() == self.tx_id && self.proposal.creator.public_key.verify(self.tx_id.as_bytes(), &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadEntry {
    pub pid: Pid,
    /// `None` when the key was absent at simulation time.
    pub version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteEntry {
    pub pid: Pid,
    pub value: LedgerValue,
}

/// What an endorsing peer observed when simulating a proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub reads: Vec<ReadEntry>,
    pub writes: Vec<WriteEntry>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub endorser: Identity,
    pub signature: Signature,
}

#[derive(Serialize)]
struct EndorsementBody<'a> {
    tx_id: &'a Digest,
    endorser: &'a Identity,
    result: &'a SimulationResult,
}

impl Endorsement {
    pub fn sign(peer: &UserCredentials, tx_id: &Digest, result: &SimulationResult) -> Self {
        let body = to_canonical_bytes(&EndorsementBody { tx_id, endorser: &peer.identity, result });
        Endorsement { endorser: peer.identity.clone(), signature: peer.sign(&body) }
    }

    pub fn verify(&self, tx_id: &Digest, result: &SimulationResult) -> bool {
        let body = to_canonical_bytes(&EndorsementBody { tx_id, endorser: &self.endorser, result });
        self.endorser.public_key.verify(&body, &self.signature)
    }
}

/// An endorsed transaction as submitted for ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Digest,
    pub proposal: Proposal,
    pub client_signature: Signature,
    pub result: SimulationResult,
    pub endorsements: Vec<Endorsement>,
}

impl Transaction {
    pub fn pid(&self) -> &Pid {
        &self.proposal.pid
    }

    pub fn kind(&self) -> TxKind {
        self.proposal.kind()
    }

    pub fn timestamp(&self) -> Timestamp {
        self.proposal.timestamp
    }

    pub fn touches(&self, pid: &Pid) -> bool {
        self.result.writes.iter().any(|w| w.pid == *pid)
    }

    pub fn client_signature_valid(&self) -> bool {
        self.proposal.tx_id() == self.tx_id
            && self.proposal.creator.public_key.verify(self.tx_id.as_bytes(), &self.client_signature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValidationCode {
    Valid,
    MvccReadConflict,
    EndorsementPolicyFailure,
    BadSignature,
    UnknownCreator,
    DuplicateTxId,
}

impl fmt::Display for ValidationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("code serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedTx {
    pub tx: Transaction,
    pub validation: ValidationCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    /// Digest over the ordered `(tx_id, validation)` pairs.
    pub data_hash: Digest,
    /// Digest over `(height, prev_hash, data_hash)`.
    pub block_hash: Digest,
    pub transactions: Vec<CommittedTx>,
}

#[derive(Serialize)]
struct DataEntry<'a> {
    tx_id: &'a Digest,
    validation: ValidationCode,
}

#[derive(Serialize)]
struct Header<'a> {
    height: u64,
    prev_hash: &'a Digest,
    data_hash: &'a Digest,
}

impl Block {
    pub fn compute_data_hash(transactions: &[CommittedTx]) -> Digest {
        let entries: Vec<DataEntry> =
            transactions.iter().map(|t| DataEntry { tx_id: &t.tx.tx_id, validation: t.validation }).collect();
        canonical_digest(&entries)
    }

    pub fn compute_block_hash(height: u64, prev_hash: &Digest, data_hash: &Digest) -> Digest {
        canonical_digest(&Header { height, prev_hash, data_hash })
    }

    pub fn new(height: u64, prev_hash: Digest, transactions: Vec<CommittedTx>) -> Self {
        let data_hash = Self::compute_data_hash(&transactions);
        let block_hash = Self::compute_block_hash(height, &prev_hash, &data_hash);
        Block { height, prev_hash, data_hash, block_hash, transactions }
    }

    pub fn genesis() -> Self {
        Block::new(0, Digest::ZERO, Vec::new())
    }

    pub fn header_consistent(&self) -> bool {
        self.data_hash == Self::compute_data_hash(&self.transactions)
            && self.block_hash == Self::compute_block_hash(self.height, &self.prev_hash, &self.data_hash)
    }
}

/// Which producer organizations must endorse before a transaction is ordered.
/// The read-only organization never counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EndorsementPolicy {
    #[default]
    AnyOneProducerOrg,
    MajorityProducerOrgs,
    AllProducerOrgs,
}

impl EndorsementPolicy {
    pub fn satisfied<'a>(&self, endorsing_orgs: impl IntoIterator<Item = &'a str>, federation: &Federation) -> bool {
        let producers: BTreeSet<&str> = federation.producer_orgs().map(|o| o.name.as_str()).collect();
        let count = endorsing_orgs.into_iter().filter(|o| producers.contains(o)).collect::<BTreeSet<_>>().len();
        let total = producers.len();
        match self {
            EndorsementPolicy::AnyOneProducerOrg => count >= 1,
            EndorsementPolicy::MajorityProducerOrgs => count * 2 > total,
            EndorsementPolicy::AllProducerOrgs => total > 0 && count == total,
        }
    }
}

/// Outcome of ordering and committing one transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: Digest,
    pub height: u64,
    pub validation: ValidationCode,
    pub response: String,
}

impl Receipt {
    pub fn is_valid(&self) -> bool {
        self.validation == ValidationCode::Valid
    }
}
