use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::replica::Replica;
use super::types::{EndorsementPolicy, Receipt, Transaction};
use super::{answer, LedgerError, OrderingApi, PeerApi, Query, QueryResponse, MAX_CLOCK_SKEW_MS};
use crate::identity::Federation;
use crate::time::Clock;

/// Block cutting parameters: a block is cut once `max-txs` are pending or
/// the oldest pending transaction has waited `timeout-ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BatchConfig {
    pub max_txs: usize,
    pub timeout_ms: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { max_txs: 10, timeout_ms: 500 }
    }
}

type Waiter = Sender<Result<Receipt, LedgerError>>;

/// The single ordering service. Keeps its own replica so it can assign
/// validation codes, then delivers each block to every registered peer.
pub struct Orderer {
    config: BatchConfig,
    clock: Arc<dyn Clock>,
    replica: Mutex<Replica>,
    pending: Mutex<Vec<(Transaction, Waiter)>>,
    cutter: Mutex<()>,
    peers: RwLock<Vec<Arc<dyn PeerApi>>>,
}

impl Orderer {
    pub fn new(federation: Arc<Federation>, policy: EndorsementPolicy, config: BatchConfig, clock: Arc<dyn Clock>) -> Self {
        Self::with_replica(Replica::new(federation, policy), config, clock)
    }

    pub fn open(
        federation: Arc<Federation>,
        policy: EndorsementPolicy,
        config: BatchConfig,
        clock: Arc<dyn Clock>,
        ledger_path: &Path,
    ) -> Result<Self, LedgerError> {
        Ok(Self::with_replica(Replica::open(federation, policy, ledger_path)?, config, clock))
    }

    fn with_replica(replica: Replica, config: BatchConfig, clock: Arc<dyn Clock>) -> Self {
        Orderer {
            config: BatchConfig { max_txs: config.max_txs.max(1), ..config },
            clock,
            replica: Mutex::new(replica),
            pending: Mutex::new(Vec::new()),
            cutter: Mutex::new(()),
            peers: RwLock::new(Vec::new()),
        }
    }

    /// Registers a peer and brings it up to the current height.
    pub fn add_peer(&self, peer: Arc<dyn PeerApi>) {
        let _cut = self.cutter.lock();
        self.sync_peer(peer.as_ref());
        self.peers.write().push(peer);
    }

    pub fn height(&self) -> u64 {
        self.replica.lock().height()
    }

    pub fn with_replica_ref<R>(&self, f: impl FnOnce(&Replica) -> R) -> R {
        f(&self.replica.lock())
    }

    fn sync_peer(&self, peer: &dyn PeerApi) {
        let blocks = {
            let replica = self.replica.lock();
            match peer.status() {
                Ok(s) if s.height < replica.height() => replica.blocks_from(s.height),
                Ok(_) => return,
                Err(e) => {
                    log::warn!("peer {} unreachable during sync: {e}", peer.org());
                    return;
                }
            }
        };
        for b in &blocks {
            if let Err(e) = peer.deliver(b) {
                log::warn!("peer {} refused block {}: {e}", peer.org(), b.height);
                return;
            }
        }
    }

    fn deliver(&self, block: &super::types::Block) {
        for peer in self.peers.read().iter() {
            match peer.deliver(block) {
                Ok(()) => {}
                Err(LedgerError::HeightGap { .. }) => self.sync_peer(peer.as_ref()),
                Err(e) => log::warn!("delivery of block {} to {} failed: {e}", block.height, peer.org()),
            }
        }
    }

    /// Cuts blocks from the front of the queue: full batches only, or
    /// everything pending when `force` is set.
    fn cut(&self, force: bool) {
        let _cut = self.cutter.lock();
        loop {
            let batch: Vec<(Transaction, Waiter)> = {
                let mut pending = self.pending.lock();
                if pending.len() >= self.config.max_txs || (force && !pending.is_empty()) {
                    let n = pending.len().min(self.config.max_txs);
                    pending.drain(..n).collect()
                } else {
                    return;
                }
            };
            let (txs, waiters): (Vec<_>, Vec<_>) = batch.into_iter().unzip();
            let block = {
                let mut replica = self.replica.lock();
                let block = replica.prepare(txs);
                if let Err(e) = replica.append_prepared(block.clone()) {
                    for w in waiters {
                        let _ = w.send(Err(e.clone()));
                    }
                    continue;
                }
                block
            };
            self.deliver(&block);
            for (c, w) in block.transactions.iter().zip(waiters) {
                let _ = w.send(Ok(Receipt {
                    tx_id: c.tx.tx_id,
                    height: block.height,
                    validation: c.validation,
                    response: c.tx.result.response.clone(),
                }));
            }
        }
    }

    fn wait(&self, rx: Receiver<Result<Receipt, LedgerError>>) -> Result<Receipt, LedgerError> {
        match rx.recv_timeout(Duration::from_millis(self.config.timeout_ms)) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => {
                self.cut(true);
                rx.recv().map_err(|e| LedgerError::Protocol { detail: e.to_string() })?
            }
            Err(RecvTimeoutError::Disconnected) => Err(LedgerError::Protocol { detail: "orderer dropped the request".into() }),
        }
    }
}

impl OrderingApi for Orderer {
    fn broadcast(&self, mut txs: Vec<Transaction>) -> Result<Vec<Receipt>, LedgerError> {
        let now = self.clock.now();
        if let Some(tx) = txs.iter().find(|t| t.timestamp().abs_diff_millis(now) > MAX_CLOCK_SKEW_MS) {
            return Err(LedgerError::TimestampOutOfRange { timestamp: tx.timestamp().to_string(), now: now.to_string() });
        }
        // Transactions arriving together are ordered by tx-id.
        txs.sort_by_key(|t| t.tx_id);
        let receivers: Vec<_> = {
            let mut pending = self.pending.lock();
            txs.into_iter()
                .map(|tx| {
                    let (sender, rx) = mpsc::channel();
                    pending.push((tx, sender));
                    rx
                })
                .collect()
        };
        self.cut(false);
        receivers.into_iter().map(|rx| self.wait(rx)).collect()
    }

    fn query(&self, query: &Query) -> Result<QueryResponse, LedgerError> {
        Ok(answer(&self.replica.lock(), "orderer", query))
    }
}
