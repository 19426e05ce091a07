use std::collections::{BTreeMap, HashSet};

use super::state::WorldState;
use super::store::LedgerFile;
use super::types::{Block, CommittedTx, EndorsementPolicy, LedgerValue, Transaction, ValidationCode};
use super::{HistoryEntry, LedgerError, NodeStatus, PEER_USER};
use crate::digest::Digest;
use crate::identity::Federation;
use crate::pid::Pid;

/// Validation of one transaction against `state` plus the writes of earlier
/// valid transactions in the same block (`overlay`).
pub fn validate_tx(
    tx: &Transaction,
    state: &WorldState,
    overlay: &BTreeMap<Pid, u64>,
    duplicate: bool,
    federation: &Federation,
    policy: EndorsementPolicy,
) -> ValidationCode {
    if duplicate {
        return ValidationCode::DuplicateTxId;
    }
    if !federation.verify_identity(&tx.proposal.creator) {
        return ValidationCode::UnknownCreator;
    }
    if !tx.client_signature_valid() {
        return ValidationCode::BadSignature;
    }
    for e in &tx.endorsements {
        if e.endorser.user_id != PEER_USER || !federation.verify_identity(&e.endorser) || !e.verify(&tx.tx_id, &tx.result) {
            return ValidationCode::BadSignature;
        }
    }
    if !policy.satisfied(tx.endorsements.iter().map(|e| e.endorser.org.as_str()), federation) {
        return ValidationCode::EndorsementPolicyFailure;
    }
    for r in &tx.result.reads {
        let current = overlay.get(&r.pid).copied().or_else(|| state.version(&r.pid));
        if current != r.version {
            return ValidationCode::MvccReadConflict;
        }
    }
    ValidationCode::Valid
}

/// One node's copy of the chain and the world state derived from it.
pub struct Replica {
    federation: std::sync::Arc<Federation>,
    policy: EndorsementPolicy,
    blocks: Vec<Block>,
    state: WorldState,
    tx_ids: HashSet<Digest>,
    history: BTreeMap<Pid, Vec<(usize, usize)>>,
    file: Option<LedgerFile>,
}

impl Replica {
    pub fn new(federation: std::sync::Arc<Federation>, policy: EndorsementPolicy) -> Self {
        Replica {
            federation,
            policy,
            blocks: vec![Block::genesis()],
            state: WorldState::default(),
            tx_ids: HashSet::new(),
            history: BTreeMap::new(),
            file: None,
        }
    }

    /// Opens a persisted replica, writing genesis into an empty file and
    /// replaying (with full validation) whatever is already there.
    pub fn open(
        federation: std::sync::Arc<Federation>,
        policy: EndorsementPolicy,
        path: &std::path::Path,
    ) -> Result<Self, LedgerError> {
        let (mut file, blocks) = LedgerFile::open(path)?;
        let mut replica = Replica::new(federation, policy);
        let mut iter = blocks.into_iter();
        match iter.next() {
            None => file.append(&replica.blocks[0])?,
            Some(g) if g == replica.blocks[0] => {}
            Some(_) => return Err(LedgerError::Corrupt { height: 0, reason: "genesis block differs".into() }),
        }
        for block in iter {
            let height = block.height;
            replica.append(block).map_err(|e| LedgerError::Corrupt { height, reason: e.to_string() })?;
        }
        replica.file = Some(file);
        Ok(replica)
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn tip_hash(&self) -> Digest {
        self.blocks.last().expect("genesis present").block_hash
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn read(&self, pid: &Pid) -> Option<LedgerValue> {
        self.state.get(pid).cloned()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_from(&self, height: u64) -> Vec<Block> {
        self.blocks.iter().skip(height as usize).cloned().collect()
    }

    pub fn history(&self, pid: &Pid) -> Vec<HistoryEntry> {
        self.history
            .get(pid)
            .map(|idx| {
                idx.iter()
                    .map(|&(b, t)| HistoryEntry { height: b as u64, tx: self.blocks[b].transactions[t].tx.clone() })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn status(&self, name: &str) -> NodeStatus {
        NodeStatus { node: name.to_string(), height: self.height(), tip: self.tip_hash(), state_digest: self.state.digest() }
    }

    fn codes_for(&self, txs: &[Transaction]) -> Vec<ValidationCode> {
        let mut overlay = BTreeMap::new();
        let mut in_block = HashSet::new();
        txs.iter()
            .map(|tx| {
                let duplicate = self.tx_ids.contains(&tx.tx_id) || !in_block.insert(tx.tx_id);
                let code = validate_tx(tx, &self.state, &overlay, duplicate, &self.federation, self.policy);
                if code == ValidationCode::Valid {
                    for w in &tx.result.writes {
                        overlay.insert(w.pid.clone(), w.value.version);
                    }
                }
                code
            })
            .collect()
    }

    /// Builds the next block from `txs` in the given order.
    pub fn prepare(&self, txs: Vec<Transaction>) -> Block {
        let codes = self.codes_for(&txs);
        let committed = txs.into_iter().zip(codes).map(|(tx, validation)| CommittedTx { tx, validation }).collect();
        Block::new(self.height(), self.tip_hash(), committed)
    }

    /// Checks `block` against this replica and applies it. Validation codes are
    /// recomputed locally; a block whose codes disagree is refused.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        self.commit(block, true)
    }

    /// Appends a block this replica produced itself with [`Replica::prepare`].
    pub fn append_prepared(&mut self, block: Block) -> Result<(), LedgerError> {
        self.commit(block, false)
    }

    fn commit(&mut self, block: Block, recheck: bool) -> Result<(), LedgerError> {
        if block.height != self.height() {
            return Err(LedgerError::HeightGap { expected: self.height(), got: block.height });
        }
        let reject = |reason: &str| LedgerError::BlockRejected { height: block.height, reason: reason.to_string() };
        if block.prev_hash != self.tip_hash() {
            return Err(reject("prev-hash does not match local tip"));
        }
        if !block.header_consistent() {
            return Err(reject("header hashes do not recompute"));
        }
        if recheck {
            let txs: Vec<Transaction> = block.transactions.iter().map(|c| c.tx.clone()).collect();
            let codes = self.codes_for(&txs);
            if codes.iter().zip(&block.transactions).any(|(c, t)| *c != t.validation) {
                return Err(reject("validation codes differ from local replay"));
            }
        }
        if let Some(file) = self.file.as_mut() {
            file.append(&block)?;
        }
        let b = self.blocks.len();
        for (t, c) in block.transactions.iter().enumerate() {
            self.tx_ids.insert(c.tx.tx_id);
            if c.validation == ValidationCode::Valid {
                self.state.apply(&c.tx.result.writes);
                for w in &c.tx.result.writes {
                    self.history.entry(w.pid.clone()).or_default().push((b, t));
                }
            }
        }
        self.blocks.push(block);
        Ok(())
    }
}
