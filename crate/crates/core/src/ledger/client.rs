use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::chaincode::ChaincodeError;
use super::types::{
    ChaincodeOp, EndorsementPolicy, LedgerValue, Proposal, Receipt, SignedProposal, Status, Transaction, ValidationCode,
};
use super::{HistoryEntry, LedgerError, OrderingApi, PeerApi, ProposalResponse, WorldState};
use crate::digest::Digest;
use crate::identity::{Federation, Permission, UserCredentials};
use crate::pid::{ObjectKind, Pid};
use crate::time::Clock;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    /// The chaincode refused the proposal; display is the chaincode's status string.
    #[error("{0}")]
    Chaincode(ChaincodeError),
    #[error("endorsement policy not satisfied by orgs {orgs:?}")]
    EndorsementPolicyUnmet { orgs: Vec<String> },
    #[error("endorsing peers returned different simulation results")]
    SimulationDivergence,
    #[error("read-write conflict: state changed between simulation and commit")]
    ReadWriteConflict { tx_id: Digest, height: u64 },
    #[error("transaction committed as {code} at height {height}")]
    Invalid { tx_id: Digest, height: u64, code: ValidationCode },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl SubmitError {
    fn from_receipt(r: Receipt) -> Result<Receipt, SubmitError> {
        match r.validation {
            ValidationCode::Valid => Ok(r),
            ValidationCode::MvccReadConflict => Err(SubmitError::ReadWriteConflict { tx_id: r.tx_id, height: r.height }),
            code => Err(SubmitError::Invalid { tx_id: r.tx_id, height: r.height, code }),
        }
    }
}

/// The status string a ledger call reports: the chaincode response on
/// success, the error text otherwise.
pub fn status_string(result: &Result<Receipt, SubmitError>) -> String {
    match result {
        Ok(r) => r.response.clone(),
        Err(e) => e.to_string(),
    }
}

/// Client-side driver of propose → endorse → order → commit. Signs locally
/// and talks to nodes directly; reads fall through to the next node when one
/// is unreachable.
pub struct LedgerClient {
    creds: UserCredentials,
    federation: Arc<Federation>,
    policy: EndorsementPolicy,
    peers: Vec<Arc<dyn PeerApi>>,
    endorsing_orgs: Option<BTreeSet<String>>,
    orderer: Arc<dyn OrderingApi>,
    clock: Arc<dyn Clock>,
    nonce: AtomicU64,
}

impl LedgerClient {
    pub fn new(
        creds: UserCredentials,
        federation: Arc<Federation>,
        policy: EndorsementPolicy,
        peers: Vec<Arc<dyn PeerApi>>,
        orderer: Arc<dyn OrderingApi>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        LedgerClient { creds, federation, policy, peers, endorsing_orgs: None, orderer, clock, nonce: AtomicU64::new(0) }
    }

    /// Restricts endorsement requests to the peers of `orgs`. By default every
    /// producer-organization peer is asked.
    pub fn with_endorsers<I: IntoIterator<Item = S>, S: Into<String>>(mut self, orgs: I) -> Self {
        self.endorsing_orgs = Some(orgs.into_iter().map(Into::into).collect());
        self
    }

    /// Starting value of the proposal nonce counter.
    pub fn with_nonce_seed(self, seed: u64) -> Self {
        self.nonce.store(seed, Ordering::SeqCst);
        self
    }

    pub fn credentials(&self) -> &UserCredentials {
        &self.creds
    }

    pub fn principal(&self) -> String {
        self.creds.principal()
    }

    pub fn federation(&self) -> &Arc<Federation> {
        &self.federation
    }

    pub fn peers(&self) -> &[Arc<dyn PeerApi>] {
        &self.peers
    }

    fn endorsers(&self) -> impl Iterator<Item = &Arc<dyn PeerApi>> {
        self.peers.iter().filter(move |p| match &self.endorsing_orgs {
            Some(orgs) => orgs.contains(p.org()),
            None => self.federation.is_producer_org(p.org()),
        })
    }

    /// Signs `op` on `pid` and collects endorsements into a transaction ready
    /// for ordering.
    pub fn propose(&self, pid: &Pid, op: ChaincodeOp) -> Result<Transaction, SubmitError> {
        let proposal = Proposal {
            pid: pid.clone(),
            op,
            creator: self.creds.identity.clone(),
            timestamp: self.clock.now(),
            nonce: self.nonce.fetch_add(1, Ordering::SeqCst),
        };
        let signed = SignedProposal::sign(&self.creds, proposal);
        let mut result = None;
        let mut endorsements = Vec::new();
        let mut refusal = None;
        let mut last_transport = None;
        for peer in self.endorsers() {
            match peer.endorse(&signed) {
                Ok(ProposalResponse::Endorsed { result: r, endorsement }) => {
                    match &result {
                        None => result = Some(r),
                        Some(prev) if *prev == r => {}
                        Some(_) => return Err(SubmitError::SimulationDivergence),
                    }
                    endorsements.push(endorsement);
                }
                Ok(ProposalResponse::Refused { error }) => refusal = Some(error),
                Err(e) => {
                    log::warn!("endorser {} failed: {e}", peer.org());
                    last_transport = Some(e);
                }
            }
        }
        if let Some(error) = refusal {
            if result.is_some() {
                return Err(SubmitError::SimulationDivergence);
            }
            return Err(SubmitError::Chaincode(error));
        }
        let Some(result) = result else {
            return Err(match last_transport {
                Some(e) => SubmitError::Ledger(e),
                None => SubmitError::EndorsementPolicyUnmet { orgs: Vec::new() },
            });
        };
        let orgs: Vec<String> = endorsements.iter().map(|e| e.endorser.org.clone()).collect();
        if !self.policy.satisfied(orgs.iter().map(String::as_str), &self.federation) {
            return Err(SubmitError::EndorsementPolicyUnmet { orgs });
        }
        Ok(Transaction {
            tx_id: signed.tx_id,
            proposal: signed.proposal,
            client_signature: signed.signature,
            result,
            endorsements,
        })
    }

    pub fn submit(&self, pid: &Pid, op: ChaincodeOp) -> Result<Receipt, SubmitError> {
        let tx = self.propose(pid, op)?;
        let receipt = self.orderer.broadcast(vec![tx])?.pop().ok_or_else(|| LedgerError::Protocol {
            detail: "orderer returned no receipt".into(),
        })?;
        SubmitError::from_receipt(receipt)
    }

    /// Endorses every operation against the current state, then orders them
    /// together. Results come back in input order.
    pub fn submit_batch(&self, ops: Vec<(Pid, ChaincodeOp)>) -> Vec<Result<Receipt, SubmitError>> {
        let mut results: Vec<Option<Result<Receipt, SubmitError>>> = Vec::with_capacity(ops.len());
        let mut txs = Vec::new();
        let mut slots = Vec::new();
        for (i, (pid, op)) in ops.into_iter().enumerate() {
            match self.propose(&pid, op) {
                Ok(tx) => {
                    slots.push((tx.tx_id, i));
                    txs.push(tx);
                    results.push(None);
                }
                Err(e) => results.push(Some(Err(e))),
            }
        }
        if !txs.is_empty() {
            match self.orderer.broadcast(txs) {
                Ok(receipts) => {
                    for r in receipts {
                        if let Some(&(_, i)) = slots.iter().find(|(id, _)| *id == r.tx_id) {
                            results[i] = Some(SubmitError::from_receipt(r));
                        }
                    }
                }
                Err(e) => {
                    for &(_, i) in &slots {
                        results[i] = Some(Err(SubmitError::Ledger(e.clone())));
                    }
                }
            }
        }
        results
            .into_iter()
            .map(|r| r.unwrap_or_else(|| Err(LedgerError::Protocol { detail: "missing receipt".into() }.into())))
            .collect()
    }

    pub fn hlf_create(
        &self,
        kind: ObjectKind,
        pid: &Pid,
        uri: &str,
        checksum: Digest,
        owners: Vec<String>,
    ) -> Result<Receipt, SubmitError> {
        let (uri, checksum) = (uri.to_string(), checksum);
        let op = match kind {
            ObjectKind::Artifact => ChaincodeOp::CreateArtifact { uri, checksum, owners },
            ObjectKind::ProvenanceRecord => ChaincodeOp::CreateProv { uri, checksum, owners },
        };
        self.submit(pid, op)
    }

    pub fn hlf_update_prov(
        &self,
        pid: &Pid,
        new_uri: &str,
        new_checksum: Digest,
        permission: Option<Permission>,
    ) -> Result<Receipt, SubmitError> {
        self.submit(pid, ChaincodeOp::UpdateProv { new_uri: new_uri.to_string(), new_checksum, permission })
    }

    pub fn hlf_invalidate(&self, pid: &Pid, reason: &str, permission: Option<Permission>) -> Result<Receipt, SubmitError> {
        self.submit(pid, ChaincodeOp::InvalidateArtifact { reason: reason.to_string(), permission })
    }

    /// Submits status flags for `targets`, all caused by invalidation of `cause`.
    pub fn flag_status(&self, cause: &Pid, targets: &[Pid], status: Status) -> Vec<Result<Receipt, SubmitError>> {
        let ops = targets.iter().map(|t| (t.clone(), ChaincodeOp::FlagStatus { cause: cause.clone(), status })).collect();
        self.submit_batch(ops)
    }

    fn first_reachable<T>(&self, f: impl Fn(&dyn PeerApi) -> Result<T, LedgerError>) -> Result<T, LedgerError> {
        let mut last = LedgerError::Unreachable { detail: "no ledger nodes configured".into() };
        for peer in &self.peers {
            match f(peer.as_ref()) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("node {} failed: {e}", peer.org());
                    last = e;
                }
            }
        }
        Err(last)
    }

    pub fn hlf_read(&self, pid: &Pid) -> Result<Option<LedgerValue>, LedgerError> {
        self.first_reachable(|p| p.read(pid))
    }

    pub fn get_history(&self, pid: &Pid) -> Result<Vec<HistoryEntry>, LedgerError> {
        self.first_reachable(|p| p.history(pid))
    }

    pub fn world_state(&self) -> Result<WorldState, LedgerError> {
        self.first_reachable(|p| p.world_state())
    }
}
