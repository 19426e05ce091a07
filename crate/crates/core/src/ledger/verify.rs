//! Offline chain verification over blocks or a persisted ledger file.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::Block;
use super::PEER_USER;
use crate::canonical::to_canonical_bytes;
use crate::digest::Digest;
use crate::identity::Federation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    Unreadable,
    Unparseable,
    NonCanonical,
    HeightSequence,
    BadGenesis,
    PrevHashMismatch,
    DataHashMismatch,
    BlockHashMismatch,
    TxIdMismatch,
    BadClientSignature,
    BadEndorsement,
    UnknownIdentity,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub height: u64,
    pub kind: FaultKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct VerificationReport {
    pub blocks_checked: u64,
    pub tip: Option<Digest>,
    /// Lowest height at which verification failed.
    pub first_fault: Option<Fault>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.first_fault.is_none()
    }
}

fn fault(height: u64, kind: FaultKind, detail: impl Into<String>) -> Fault {
    Fault { height, kind, detail: detail.into() }
}

fn check_block(block: &Block, expected_height: u64, prev: &Digest, federation: Option<&Federation>) -> Result<(), Fault> {
    let h = expected_height;
    if block.height != expected_height {
        return Err(fault(h, FaultKind::HeightSequence, format!("found height {}", block.height)));
    }
    if h == 0 && (!block.prev_hash.is_zero() || !block.transactions.is_empty()) {
        return Err(fault(h, FaultKind::BadGenesis, "genesis must have zero prev-hash and no transactions"));
    }
    if block.prev_hash != *prev {
        return Err(fault(h, FaultKind::PrevHashMismatch, format!("expected {prev}")));
    }
    if block.data_hash != Block::compute_data_hash(&block.transactions) {
        return Err(fault(h, FaultKind::DataHashMismatch, "transaction list does not match data-hash"));
    }
    if block.block_hash != Block::compute_block_hash(block.height, &block.prev_hash, &block.data_hash) {
        return Err(fault(h, FaultKind::BlockHashMismatch, "header does not match block-hash"));
    }
    for (i, c) in block.transactions.iter().enumerate() {
        let tx = &c.tx;
        if tx.proposal.tx_id() != tx.tx_id {
            return Err(fault(h, FaultKind::TxIdMismatch, format!("tx #{i}")));
        }
        if !tx.client_signature_valid() {
            return Err(fault(h, FaultKind::BadClientSignature, format!("tx #{i}")));
        }
        for e in &tx.endorsements {
            if e.endorser.user_id != PEER_USER || !e.verify(&tx.tx_id, &tx.result) {
                return Err(fault(h, FaultKind::BadEndorsement, format!("tx #{i} endorser {}", e.endorser)));
            }
        }
        if let Some(fed) = federation {
            let ids = std::iter::once(&tx.proposal.creator).chain(tx.endorsements.iter().map(|e| &e.endorser));
            for id in ids {
                if !fed.verify_identity(id) {
                    return Err(fault(h, FaultKind::UnknownIdentity, format!("tx #{i} identity {id}")));
                }
            }
        }
    }
    Ok(())
}

/// Recomputes hashes, links and signatures over `blocks`. With a federation,
/// every creator and endorser certificate is also checked.
pub fn verify_chain(blocks: &[Block], federation: Option<&Federation>) -> VerificationReport {
    let mut prev = Digest::ZERO;
    for (i, block) in blocks.iter().enumerate() {
        if let Err(f) = check_block(block, i as u64, &prev, federation) {
            return VerificationReport { blocks_checked: i as u64, tip: None, first_fault: Some(f) };
        }
        prev = block.block_hash;
    }
    VerificationReport { blocks_checked: blocks.len() as u64, tip: blocks.last().map(|b| b.block_hash), first_fault: None }
}

/// Verifies a ledger file line by line. Each line must parse and be in
/// canonical form, so any byte-level change is attributed to its line.
pub fn verify_ledger_file(path: &Path, federation: Option<&Federation>) -> VerificationReport {
    let raw = match std::fs::read(path) {
        Ok(r) => r,
        Err(e) => {
            return VerificationReport { blocks_checked: 0, tip: None, first_fault: Some(fault(0, FaultKind::Unreadable, e.to_string())) }
        }
    };
    verify_ledger_bytes(&raw, federation)
}

pub fn verify_ledger_bytes(raw: &[u8], federation: Option<&Federation>) -> VerificationReport {
    let body = raw.strip_suffix(b"\n").unwrap_or(raw);
    let mut prev = Digest::ZERO;
    let mut checked = 0u64;
    let mut tip = None;
    for (i, line) in body.split(|b| *b == b'\n').enumerate() {
        let h = i as u64;
        let bad = |f: Fault| VerificationReport { blocks_checked: h, tip: None, first_fault: Some(f) };
        let block: Block = match serde_json::from_slice(line) {
            Ok(b) => b,
            Err(e) => return bad(fault(h, FaultKind::Unparseable, e.to_string())),
        };
        if to_canonical_bytes(&block) != line {
            return bad(fault(h, FaultKind::NonCanonical, "line differs from canonical serialization"));
        }
        if let Err(f) = check_block(&block, h, &prev, federation) {
            return bad(f);
        }
        prev = block.block_hash;
        tip = Some(prev);
        checked += 1;
    }
    VerificationReport { blocks_checked: checked, tip, first_fault: None }
}
