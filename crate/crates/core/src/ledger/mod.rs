//! Permissioned, hash-chained ledger: world state keyed by PID, endorsing
//! peers, a single ordering service, and the provenance chaincode.

mod chaincode;
mod client;
mod orderer;
mod peer;
mod replica;
mod state;
mod store;
mod types;
mod verify;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::pid::Pid;

pub use chaincode::{simulate, ChaincodeError, MSG_CREATED, MSG_FLAGGED, MSG_INVALIDATED, MSG_UNCHANGED, MSG_UPDATED};
pub use client::{status_string, LedgerClient, SubmitError};
pub use orderer::{BatchConfig, Orderer};
pub use peer::Peer;
pub use replica::{validate_tx, Replica};
pub use state::WorldState;
pub use store::{read_blocks, write_blocks, LedgerFile};
pub use types::{
    Block, ChaincodeOp, CommittedTx, Endorsement, EndorsementPolicy, LedgerValue, Proposal, ReadEntry, Receipt,
    SignedProposal, SimulationResult, Status, Transaction, TxKind, ValidationCode, WriteEntry,
};
pub use verify::{verify_chain, verify_ledger_bytes, verify_ledger_file, Fault, FaultKind, VerificationReport};

/// User id under which every organization's ledger node is enrolled.
pub const PEER_USER: &str = "peer";

/// Maximum distance between a transaction timestamp and the orderer clock.
pub const MAX_CLOCK_SKEW_MS: u64 = 5 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "error")]
pub enum LedgerError {
    #[error("node unreachable: {detail}")]
    Unreachable { detail: String },
    #[error("malformed proposal: {detail}")]
    BadProposal { detail: String },
    #[error("block {got} is out of sequence, expected {expected}")]
    HeightGap { expected: u64, got: u64 },
    #[error("block {height} rejected: {reason}")]
    BlockRejected { height: u64, reason: String },
    #[error("timestamp {timestamp} is more than 5 minutes from orderer time {now}")]
    TimestampOutOfRange { timestamp: String, now: String },
    #[error("storage error: {detail}")]
    Storage { detail: String },
    #[error("corrupt ledger at height {height}: {reason}")]
    Corrupt { height: u64, reason: String },
    #[error("protocol error: {detail}")]
    Protocol { detail: String },
}

impl LedgerError {
    pub(crate) fn storage(e: impl std::fmt::Display) -> Self {
        LedgerError::Storage { detail: e.to_string() }
    }
}

/// One committed valid transaction that wrote a PID, with its block height.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub height: u64,
    pub tx: Transaction,
}

impl HistoryEntry {
    /// The value this transaction wrote for `pid`.
    pub fn value_for(&self, pid: &Pid) -> Option<&LedgerValue> {
        self.tx.result.writes.iter().find(|w| w.pid == *pid).map(|w| &w.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NodeStatus {
    pub node: String,
    pub height: u64,
    pub tip: Digest,
    pub state_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "query")]
pub enum Query {
    Read { pid: Pid },
    History { pid: Pid },
    Status,
    State,
    Blocks { from: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "answer")]
pub enum QueryResponse {
    Value { value: Option<LedgerValue> },
    History { entries: Vec<HistoryEntry> },
    Status { status: NodeStatus },
    State { state: WorldState },
    Blocks { blocks: Vec<Block> },
}

/// A peer's answer to a proposal.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome")]
pub enum ProposalResponse {
    Endorsed { result: SimulationResult, endorsement: Endorsement },
    Refused { error: ChaincodeError },
}

/// What clients and the orderer need from an organization's ledger node,
/// whether it runs in-process or behind a socket.
pub trait PeerApi: Send + Sync {
    fn org(&self) -> &str;
    fn endorse(&self, proposal: &SignedProposal) -> Result<ProposalResponse, LedgerError>;
    fn deliver(&self, block: &Block) -> Result<(), LedgerError>;
    fn query(&self, query: &Query) -> Result<QueryResponse, LedgerError>;
}

pub trait OrderingApi: Send + Sync {
    /// Submits transactions that arrived together and waits for their receipts.
    fn broadcast(&self, txs: Vec<Transaction>) -> Result<Vec<Receipt>, LedgerError>;
    fn query(&self, query: &Query) -> Result<QueryResponse, LedgerError>;
}

fn unexpected(r: QueryResponse) -> LedgerError {
    LedgerError::Protocol { detail: format!("unexpected answer {r:?}") }
}

macro_rules! query_helpers {
    ($t:ty) => {
        impl $t {
            pub fn read(&self, pid: &Pid) -> Result<Option<LedgerValue>, LedgerError> {
                match self.query(&Query::Read { pid: pid.clone() })? {
                    QueryResponse::Value { value } => Ok(value),
                    r => Err(unexpected(r)),
                }
            }

            pub fn history(&self, pid: &Pid) -> Result<Vec<HistoryEntry>, LedgerError> {
                match self.query(&Query::History { pid: pid.clone() })? {
                    QueryResponse::History { entries } => Ok(entries),
                    r => Err(unexpected(r)),
                }
            }

            pub fn status(&self) -> Result<NodeStatus, LedgerError> {
                match self.query(&Query::Status)? {
                    QueryResponse::Status { status } => Ok(status),
                    r => Err(unexpected(r)),
                }
            }

            pub fn world_state(&self) -> Result<WorldState, LedgerError> {
                match self.query(&Query::State)? {
                    QueryResponse::State { state } => Ok(state),
                    r => Err(unexpected(r)),
                }
            }

            pub fn blocks_from(&self, from: u64) -> Result<Vec<Block>, LedgerError> {
                match self.query(&Query::Blocks { from })? {
                    QueryResponse::Blocks { blocks } => Ok(blocks),
                    r => Err(unexpected(r)),
                }
            }
        }
    };
}

query_helpers!(dyn PeerApi + '_);
query_helpers!(dyn OrderingApi + '_);

/// Answers a query from a local replica.
pub(crate) fn answer(replica: &Replica, name: &str, query: &Query) -> QueryResponse {
    match query {
        Query::Read { pid } => QueryResponse::Value { value: replica.read(pid) },
        Query::History { pid } => QueryResponse::History { entries: replica.history(pid) },
        Query::Status => QueryResponse::Status { status: replica.status(name) },
        Query::State => QueryResponse::State { state: replica.state().clone() },
        Query::Blocks { from } => QueryResponse::Blocks { blocks: replica.blocks_from(*from) },
    }
}
