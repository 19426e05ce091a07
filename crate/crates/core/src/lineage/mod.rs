//! Cross-experiment lineage: the artifact derivation graph assembled from
//! every registered provenance document, tracing, invalidation cascades and
//! iteration histories.

mod graph;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use graph::{Attestation, DerivationGraph, EdgeKind, EdgeWitness};

use crate::identity::split_principal;
use crate::ledger::{ChaincodeOp, LedgerError, Status, SubmitError};
use crate::pid::{ObjectKind, Pid};
use crate::prov::{ProvError, ProvManager};
use crate::time::Timestamp;

#[derive(Debug, thiserror::Error)]
pub enum LineageError {
    #[error("unknown pid `{0}`")]
    UnknownPid(String),
    #[error("`{0}` is not an artifact")]
    NotAnArtifact(String),
    #[error("`{0}` is not invalidated")]
    NotInvalidated(String),
    #[error("derivation cycle through {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    CycleDetected(Vec<Pid>),
    #[error("artifact pid `{pid}` in {context} is not registered on the ledger")]
    UnresolvablePid { pid: String, context: String },
    #[error(transparent)]
    Document(#[from] ProvError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("status flag for {pid} rejected: {error}")]
    Flag { pid: Pid, error: SubmitError },
    #[error("outbox write failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CascadePolicy {
    /// Flag descendants on the ledger only.
    FlagAffected,
    /// Flag descendants and queue a notice for each owning organization.
    #[default]
    FlagAndNotify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct CascadeConfig {
    pub policy: CascadePolicy,
    /// Flag descendants `invalidated` rather than `affected`.
    pub auto_invalidate: bool,
}

/// One step of a lineage path, from a downstream artifact to one it was
/// produced from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Hop {
    pub from: Pid,
    pub to: Pid,
    pub activity: Option<String>,
    pub attestations: Vec<Attestation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LineagePath {
    /// The traced artifact first, a source artifact last.
    pub artifacts: Vec<Pid>,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TraceReport {
    pub pid: Pid,
    pub status: Status,
    pub paths: Vec<LineagePath>,
    pub statuses: BTreeMap<Pid, Status>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CascadeReport {
    pub cause: Pid,
    /// Every descendant of `cause` with its status after the cascade.
    pub statuses: BTreeMap<Pid, Status>,
    /// Descendants whose status this cascade changed.
    pub flagged: Vec<Pid>,
    /// Organizations that were sent a notice.
    pub notified: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Notice {
    pub pid: Pid,
    pub cause: Pid,
    pub status: Status,
    pub owners: Vec<String>,
    pub reason: Option<String>,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Iteration {
    pub iteration: usize,
    pub artifact: Pid,
    pub status: Status,
    /// The document that records how this artifact was produced.
    pub generated_in: Option<Attestation>,
    /// Every version of that document's record, oldest first.
    pub record_versions: Vec<Pid>,
}

/// The derivation graph over the ledger's current world state.
pub struct Lineage<'a> {
    manager: &'a ProvManager,
    graph: DerivationGraph,
}

impl<'a> Lineage<'a> {
    /// Reads every provenance record from the ledger, fetches its document
    /// with checksum verification and builds the graph. Any unverifiable
    /// document fails the whole load.
    pub fn load(manager: &'a ProvManager) -> Result<Self, LineageError> {
        let state = manager.ledger().world_state()?;
        let mut nodes = BTreeMap::new();
        let mut docs = Vec::new();
        for (pid, value) in state.iter() {
            match value.kind {
                ObjectKind::Artifact => {
                    nodes.insert(pid.clone(), value.status);
                }
                ObjectKind::ProvenanceRecord => {
                    let doc = manager.fetch_ledger_document(value)?;
                    let (_, newest) = manager.chain_ends(pid)?;
                    if newest.checksum != Some(value.checksum) {
                        return Err(ProvError::Integrity(format!(
                            "newest registered version of {pid} does not match the ledger"
                        ))
                        .into());
                    }
                    let att = Attestation {
                        doc_pid: newest.pid,
                        root_pid: pid.clone(),
                        version: value.version,
                        uri: value.uri.clone(),
                        checksum: value.checksum,
                    };
                    docs.push((att, doc));
                }
            }
        }
        let graph = DerivationGraph::build(nodes, &docs)?;
        Ok(Lineage { manager, graph })
    }

    pub fn graph(&self) -> &DerivationGraph {
        &self.graph
    }

    fn status_of(&self, pid: &Pid) -> Result<Status, LineageError> {
        self.graph.status(pid).ok_or_else(|| {
            if self.manager.pids().resolve(pid).is_ok() {
                LineageError::NotAnArtifact(pid.to_string())
            } else {
                LineageError::UnknownPid(pid.to_string())
            }
        })
    }

    /// Every path from `pid` back to a source artifact.
    pub fn trace(&self, pid: &Pid) -> Result<TraceReport, LineageError> {
        let status = self.status_of(pid)?;
        let mut paths = Vec::new();
        let mut stack = vec![pid.clone()];
        self.walk_up(&mut stack, &mut Vec::new(), &mut paths);
        let involved: BTreeSet<&Pid> = paths.iter().flat_map(|p| p.artifacts.iter()).collect();
        let statuses = involved.into_iter().map(|p| (p.clone(), self.graph.status(p).expect("node"))).collect();
        Ok(TraceReport { pid: pid.clone(), status, paths, statuses })
    }

    fn walk_up(&self, stack: &mut Vec<Pid>, hops: &mut Vec<Hop>, out: &mut Vec<LineagePath>) {
        let cur = stack.last().expect("non-empty").clone();
        let parents: Vec<Pid> = self.graph.parents(&cur).cloned().collect();
        if parents.is_empty() {
            out.push(LineagePath { artifacts: stack.clone(), hops: hops.clone() });
            return;
        }
        for p in parents {
            let witnesses = self.graph.witnesses(&p, &cur);
            hops.push(Hop {
                from: cur.clone(),
                to: p.clone(),
                activity: witnesses.iter().find_map(|w| w.activity.clone()),
                attestations: witnesses.into_iter().map(|w| w.attestation).collect::<BTreeSet<_>>().into_iter().collect(),
            });
            stack.push(p);
            self.walk_up(stack, hops, out);
            stack.pop();
            hops.pop();
        }
    }

    /// Flags every descendant of the invalidated artifact `pid` on the ledger.
    /// Running it again changes nothing. Notices go to
    /// `<outbox>/<org>.jsonl` under the notify policy.
    pub fn cascade(&self, pid: &Pid, config: CascadeConfig, outbox: Option<&Path>) -> Result<CascadeReport, LineageError> {
        let ledger = self.manager.ledger();
        let value = ledger.hlf_read(pid)?.ok_or_else(|| LineageError::UnknownPid(pid.to_string()))?;
        if value.kind != ObjectKind::Artifact {
            return Err(LineageError::NotAnArtifact(pid.to_string()));
        }
        if value.status != Status::Invalidated {
            return Err(LineageError::NotInvalidated(pid.to_string()));
        }
        let target = if config.auto_invalidate { Status::Invalidated } else { Status::Affected };
        let descendants = self.graph.descendants(pid);
        let to_flag: Vec<Pid> = descendants
            .iter()
            .filter(|d| match self.graph.status(d) {
                Some(Status::Valid) => true,
                Some(Status::Affected) => target == Status::Invalidated,
                _ => false,
            })
            .cloned()
            .collect();
        let results = ledger.flag_status(pid, &to_flag, target);
        let mut flagged = Vec::new();
        let mut first_error = None;
        for (d, r) in to_flag.iter().zip(results) {
            match r {
                Ok(_) => flagged.push(d.clone()),
                Err(e) => {
                    if first_error.is_none() {
                        first_error = Some(LineageError::Flag { pid: d.clone(), error: e });
                    }
                }
            }
        }
        let mut statuses = BTreeMap::new();
        let mut values = BTreeMap::new();
        for d in &descendants {
            let v = ledger.hlf_read(d)?.ok_or_else(|| LineageError::UnknownPid(d.to_string()))?;
            statuses.insert(d.clone(), v.status);
            values.insert(d.clone(), v);
        }

        let mut notified = BTreeSet::new();
        if config.policy == CascadePolicy::FlagAndNotify && !flagged.is_empty() {
            let reason = self.invalidation_reason(pid)?;
            if let Some(dir) = outbox {
                std::fs::create_dir_all(dir)?;
            }
            for d in &flagged {
                let v = &values[d];
                let notice = Notice {
                    pid: d.clone(),
                    cause: pid.clone(),
                    status: v.status,
                    owners: v.owners.clone(),
                    reason: reason.clone(),
                    at: v.timestamp,
                };
                let orgs: BTreeSet<&str> = v.owners.iter().filter_map(|o| split_principal(o).map(|(_, org)| org)).collect();
                for org in orgs {
                    if let Some(dir) = outbox {
                        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(format!("{org}.jsonl")))?;
                        let mut line = serde_json::to_vec(&notice).expect("notice serializes");
                        line.push(b'\n');
                        f.write_all(&line)?;
                    }
                    notified.insert(org.to_string());
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        Ok(CascadeReport { cause: pid.clone(), statuses, flagged, notified: notified.into_iter().collect() })
    }

    fn invalidation_reason(&self, pid: &Pid) -> Result<Option<String>, LineageError> {
        let history = self.manager.ledger().get_history(pid)?;
        Ok(history.iter().rev().find_map(|h| match &h.tx.proposal.op {
            ChaincodeOp::InvalidateArtifact { reason, .. } => Some(reason.clone()),
            _ => None,
        }))
    }

    /// The iterations of an artifact: its component under direct derivation,
    /// in dependency order.
    pub fn iteration_history(&self, pid: &Pid) -> Result<Vec<Iteration>, LineageError> {
        self.status_of(pid)?;
        let component = self.graph.derivation_component(pid);
        let mut out = Vec::new();
        for p in self.graph.topological_order().into_iter().filter(|p| component.contains(p)) {
            let generated_in = self.graph.generated_in(&p).cloned();
            let record_versions = match &generated_in {
                Some(att) => self
                    .manager
                    .pids()
                    .version_history(&att.root_pid)
                    .map_err(ProvError::from)?
                    .into_iter()
                    .map(|r| r.pid)
                    .collect(),
                None => Vec::new(),
            };
            out.push(Iteration {
                iteration: out.len() + 1,
                status: self.graph.status(&p).expect("node"),
                artifact: p,
                generated_in,
                record_versions,
            });
        }
        Ok(out)
    }
}
