use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::LineageError;
use crate::digest::Digest;
use crate::ledger::Status;
use crate::pid::Pid;
use crate::prov::{ProvDocument, RelationKind};

/// The provenance document version vouching for an edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Attestation {
    pub doc_pid: Pid,
    pub root_pid: Pid,
    pub version: u64,
    pub uri: String,
    pub checksum: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    /// Input and output of the same activity.
    Process,
    /// A direct was-derived-from relation.
    Derivation,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EdgeWitness {
    pub kind: EdgeKind,
    /// The activity that produced the downstream artifact, if any.
    pub activity: Option<String>,
    pub attestation: Attestation,
}

/// Cross-experiment derivation graph over ledger-registered artifacts.
/// An edge `a → b` means `b` was produced from `a`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationGraph {
    nodes: BTreeMap<Pid, Status>,
    edges: BTreeMap<Pid, BTreeMap<Pid, BTreeSet<EdgeWitness>>>,
    parents: BTreeMap<Pid, BTreeSet<Pid>>,
    generated_in: BTreeMap<Pid, Attestation>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Local<'a> {
    Entity(&'a str),
    Activity(&'a str),
}

impl DerivationGraph {
    /// Graph with the given nodes and bare edges; used for synthetic checks.
    pub fn from_edges(nodes: BTreeMap<Pid, Status>, edges: &[(Pid, Pid)]) -> Result<Self, LineageError> {
        let mut g = DerivationGraph { nodes, ..Default::default() };
        for (a, b) in edges {
            for p in [a, b] {
                if !g.nodes.contains_key(p) {
                    return Err(LineageError::UnresolvablePid { pid: p.to_string(), context: "edge list".into() });
                }
            }
            let witness = EdgeWitness {
                kind: EdgeKind::Process,
                activity: None,
                attestation: Attestation {
                    doc_pid: a.clone(),
                    root_pid: a.clone(),
                    version: 0,
                    uri: String::new(),
                    checksum: Digest::ZERO,
                },
            };
            g.add_edge(a, b, witness);
        }
        g.check_acyclic()?;
        Ok(g)
    }

    /// Builds the graph from checksum-verified documents. `nodes` are the
    /// artifacts registered on the ledger with their current status.
    pub fn build(nodes: BTreeMap<Pid, Status>, documents: &[(Attestation, ProvDocument)]) -> Result<Self, LineageError> {
        let mut g = DerivationGraph { nodes, ..Default::default() };
        for (att, doc) in documents {
            g.add_document(att, doc)?;
        }
        g.check_acyclic()?;
        Ok(g)
    }

    fn add_edge(&mut self, a: &Pid, b: &Pid, witness: EdgeWitness) {
        self.edges.entry(a.clone()).or_default().entry(b.clone()).or_default().insert(witness);
        self.parents.entry(b.clone()).or_default().insert(a.clone());
    }

    fn add_document(&mut self, att: &Attestation, doc: &ProvDocument) -> Result<(), LineageError> {
        let mut artifact_of: BTreeMap<&str, &Pid> = BTreeMap::new();
        for e in &doc.entities {
            if let Some(pid) = &e.artifact_pid {
                if !self.nodes.contains_key(pid) {
                    return Err(LineageError::UnresolvablePid {
                        pid: pid.to_string(),
                        context: format!("entity `{}` of {}", e.local_id, att.doc_pid),
                    });
                }
                artifact_of.insert(&e.local_id, pid);
            }
        }
        // Flow between local elements: input entity → activity → output entity.
        let mut flow: BTreeMap<Local, BTreeSet<Local>> = BTreeMap::new();
        let mut derived: BTreeSet<(&str, &str)> = BTreeSet::new();
        for r in &doc.relations {
            match r.kind {
                RelationKind::Used => {
                    flow.entry(Local::Entity(&r.target)).or_default().insert(Local::Activity(&r.source));
                }
                RelationKind::WasGeneratedBy => {
                    flow.entry(Local::Activity(&r.target)).or_default().insert(Local::Entity(&r.source));
                    if artifact_of.contains_key(r.source.as_str()) && !self.generated_in.contains_key(artifact_of[r.source.as_str()]) {
                        self.generated_in.insert(artifact_of[r.source.as_str()].clone(), att.clone());
                    }
                }
                RelationKind::WasDerivedFrom => {
                    flow.entry(Local::Entity(&r.target)).or_default().insert(Local::Entity(&r.source));
                    derived.insert((&r.target, &r.source));
                }
                _ => {}
            }
        }
        // Sub-activities share their ancestors' inputs and outputs.
        for a in &doc.activities {
            if let Some(p) = &a.parent_activity {
                flow.entry(Local::Activity(p)).or_default().insert(Local::Activity(&a.local_id));
                flow.entry(Local::Activity(&a.local_id)).or_default().insert(Local::Activity(p));
            }
        }
        for e in &doc.entities {
            let Some(&from) = artifact_of.get(e.local_id.as_str()) else { continue };
            let start = Local::Entity(&e.local_id);
            let mut seen = BTreeSet::from([start]);
            let mut queue: VecDeque<(Local, Option<&str>)> = VecDeque::from([(start, None)]);
            while let Some((cur, activity)) = queue.pop_front() {
                for &next in flow.get(&cur).into_iter().flatten() {
                    if !seen.insert(next) {
                        continue;
                    }
                    match next {
                        Local::Entity(id) => {
                            if let Some(&to) = artifact_of.get(id) {
                                let kind = if activity.is_none() && derived.contains(&(e.local_id.as_str(), id)) {
                                    EdgeKind::Derivation
                                } else {
                                    EdgeKind::Process
                                };
                                let label = activity.map(|a| {
                                    let l = doc.activity(a).map(|x| x.label.as_str()).unwrap_or("");
                                    if l.is_empty() { a.to_string() } else { format!("{a} ({l})") }
                                });
                                if from == to {
                                    return Err(LineageError::CycleDetected(vec![from.clone()]));
                                }
                                self.add_edge(from, to, EdgeWitness { kind, activity: label, attestation: att.clone() });
                            } else {
                                queue.push_back((next, activity));
                            }
                        }
                        Local::Activity(id) => queue.push_back((next, Some(id))),
                    }
                }
            }
        }
        Ok(())
    }

    /// Kahn's algorithm; on failure reports the nodes left on cycles.
    fn check_acyclic(&self) -> Result<(), LineageError> {
        let order = self.topological_order();
        if order.len() == self.nodes.len() {
            return Ok(());
        }
        let placed: BTreeSet<&Pid> = order.iter().collect();
        let stuck = self.nodes.keys().filter(|p| !placed.contains(p)).cloned().collect();
        Err(LineageError::CycleDetected(stuck))
    }

    /// Nodes in dependency order, ties broken by PID.
    pub fn topological_order(&self) -> Vec<Pid> {
        let mut indegree: BTreeMap<&Pid, usize> = self.nodes.keys().map(|p| (p, 0)).collect();
        for targets in self.edges.values() {
            for t in targets.keys() {
                *indegree.get_mut(t).expect("edge endpoints are nodes") += 1;
            }
        }
        let mut ready: BTreeSet<&Pid> = indegree.iter().filter(|(_, d)| **d == 0).map(|(p, _)| *p).collect();
        let mut out = Vec::new();
        while let Some(p) = ready.pop_first() {
            out.push(p.clone());
            for t in self.edges.get(p).into_iter().flat_map(|m| m.keys()) {
                let d = indegree.get_mut(t).expect("node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(t);
                }
            }
        }
        out
    }

    pub fn nodes(&self) -> &BTreeMap<Pid, Status> {
        &self.nodes
    }

    pub fn status(&self, pid: &Pid) -> Option<Status> {
        self.nodes.get(pid).copied()
    }

    pub fn contains(&self, pid: &Pid) -> bool {
        self.nodes.contains_key(pid)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeMap::len).sum()
    }

    /// All `(from, to)` pairs.
    pub fn edges(&self) -> Vec<(Pid, Pid)> {
        self.edges.iter().flat_map(|(a, m)| m.keys().map(move |b| (a.clone(), b.clone()))).collect()
    }

    pub fn witnesses(&self, from: &Pid, to: &Pid) -> Vec<EdgeWitness> {
        self.edges.get(from).and_then(|m| m.get(to)).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn children(&self, pid: &Pid) -> impl Iterator<Item = &Pid> {
        self.edges.get(pid).into_iter().flat_map(|m| m.keys())
    }

    pub fn parents(&self, pid: &Pid) -> impl Iterator<Item = &Pid> {
        self.parents.get(pid).into_iter().flatten()
    }

    pub fn generated_in(&self, pid: &Pid) -> Option<&Attestation> {
        self.generated_in.get(pid)
    }

    /// Every node reachable from `pid`, excluding `pid` itself.
    pub fn descendants(&self, pid: &Pid) -> BTreeSet<Pid> {
        let mut out = BTreeSet::new();
        let mut queue: VecDeque<&Pid> = VecDeque::from([pid]);
        while let Some(p) = queue.pop_front() {
            for c in self.children(p) {
                if out.insert(c.clone()) {
                    queue.push_back(c);
                }
            }
        }
        out.remove(pid);
        out
    }

    /// Undirected component of `pid` over derivation edges only.
    pub fn derivation_component(&self, pid: &Pid) -> BTreeSet<Pid> {
        let is_derivation =
            |a: &Pid, b: &Pid| self.witnesses(a, b).iter().any(|w| w.kind == EdgeKind::Derivation);
        let mut out = BTreeSet::from([pid.clone()]);
        let mut queue = VecDeque::from([pid.clone()]);
        while let Some(p) = queue.pop_front() {
            let next: Vec<Pid> = self
                .children(&p)
                .filter(|c| is_derivation(&p, c))
                .chain(self.parents(&p).filter(|q| is_derivation(q, &p)))
                .cloned()
                .collect();
            for n in next {
                if out.insert(n.clone()) {
                    queue.push_back(n);
                }
            }
        }
        out
    }

    /// Graphviz rendering.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph lineage {\n  rankdir=LR;\n");
        for (pid, status) in &self.nodes {
            let color = match status {
                Status::Valid => "black",
                Status::Invalidated => "red",
                Status::Affected => "orange",
            };
            let _ = writeln!(s, "  \"{pid}\" [label=\"{pid}\\n{status}\", color={color}];");
        }
        for (a, targets) in &self.edges {
            for (b, witnesses) in targets {
                let label = witnesses.iter().filter_map(|w| w.activity.clone()).next().unwrap_or_default();
                let _ = writeln!(s, "  \"{a}\" -> \"{b}\" [label=\"{}\"];", label.replace('"', "'"));
            }
        }
        s.push_str("}\n");
        s
    }
}
