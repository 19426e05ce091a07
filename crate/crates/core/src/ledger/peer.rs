use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;

use super::chaincode::simulate;
use super::replica::Replica;
use super::types::{Block, Endorsement, EndorsementPolicy, SignedProposal};
use super::{answer, LedgerError, PeerApi, ProposalResponse, Query, QueryResponse};
use crate::digest::Digest;
use crate::identity::{Federation, UserCredentials};

/// An organization's ledger node: endorses proposals against its world state
/// and commits blocks delivered by the orderer.
pub struct Peer {
    creds: UserCredentials,
    federation: Arc<Federation>,
    replica: RwLock<Replica>,
}

impl Peer {
    pub fn new(creds: UserCredentials, federation: Arc<Federation>, policy: EndorsementPolicy) -> Self {
        let replica = Replica::new(federation.clone(), policy);
        Peer { creds, federation, replica: RwLock::new(replica) }
    }

    /// A node whose chain is persisted at `ledger_path` and replayed on open.
    pub fn open(
        creds: UserCredentials,
        federation: Arc<Federation>,
        policy: EndorsementPolicy,
        ledger_path: &Path,
    ) -> Result<Self, LedgerError> {
        let replica = Replica::open(federation.clone(), policy, ledger_path)?;
        Ok(Peer { creds, federation, replica: RwLock::new(replica) })
    }

    pub fn height(&self) -> u64 {
        self.replica.read().height()
    }

    pub fn state_digest(&self) -> Digest {
        self.replica.read().state().digest()
    }

    pub fn with_replica<R>(&self, f: impl FnOnce(&Replica) -> R) -> R {
        f(&self.replica.read())
    }

    /// Pulls and applies any blocks past the local height from `source`.
    pub fn catch_up(&self, source: &dyn super::OrderingApi) -> Result<u64, LedgerError> {
        let from = self.height();
        let blocks = source.blocks_from(from)?;
        let mut replica = self.replica.write();
        for b in blocks {
            replica.append(b)?;
        }
        Ok(replica.height())
    }
}

impl PeerApi for Peer {
    fn org(&self) -> &str {
        &self.creds.identity.org
    }

    fn endorse(&self, proposal: &SignedProposal) -> Result<ProposalResponse, LedgerError> {
        if !proposal.verify() {
            return Err(LedgerError::BadProposal { detail: "signature or tx-id does not match the proposal".into() });
        }
        let replica = self.replica.read();
        Ok(match simulate(replica.state(), &proposal.proposal, &self.federation) {
            Ok(result) => {
                let endorsement = Endorsement::sign(&self.creds, &proposal.tx_id, &result);
                ProposalResponse::Endorsed { result, endorsement }
            }
            Err(error) => ProposalResponse::Refused { error },
        })
    }

    fn deliver(&self, block: &Block) -> Result<(), LedgerError> {
        let mut replica = self.replica.write();
        if block.height < replica.height() {
            // Already have it; accept silently if identical.
            let ours = &replica.blocks()[block.height as usize];
            return if ours.block_hash == block.block_hash {
                Ok(())
            } else {
                Err(LedgerError::BlockRejected { height: block.height, reason: "conflicts with committed block".into() })
            };
        }
        replica.append(block.clone())
    }

    fn query(&self, query: &Query) -> Result<QueryResponse, LedgerError> {
        Ok(answer(&self.replica.read(), &self.creds.identity.org, query))
    }
}
