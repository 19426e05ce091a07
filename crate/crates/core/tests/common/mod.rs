#![allow(dead_code)]

use fedprov::digest::Digest;
use fedprov::pid::Pid;
use fedprov::prov::{Activity, Entity, ProvDocument, Relation, RelationKind};
use fedprov::time::Timestamp;

pub const PREFIX: &str = "21.T11148";

pub fn pid(suffix: &str) -> Pid {
    Pid::new(PREFIX, suffix).unwrap()
}

pub fn digest(s: &str) -> Digest {
    Digest::of(s.as_bytes())
}

pub fn at(ms: i64) -> Timestamp {
    Timestamp::from_millis(1_735_689_600_000 + ms)
}

pub fn entity(id: &str) -> Entity {
    Entity { local_id: id.into(), label: String::new(), artifact_pid: None, checksum: None, attributes: Default::default() }
}

pub fn activity(id: &str) -> Activity {
    Activity {
        local_id: id.into(),
        label: String::new(),
        started: None,
        ended: None,
        attributes: Default::default(),
        parent_activity: None,
    }
}

/// `outputs` generated by one activity that used `inputs`.
pub fn step_doc(activity_id: &str, inputs: &[&str], outputs: &[&str]) -> ProvDocument {
    let mut doc = ProvDocument::new(at(0));
    doc.activities.push(activity(activity_id));
    for i in inputs {
        doc.entities.push(entity(i));
        doc.relations.push(Relation::new(RelationKind::Used, activity_id, *i));
    }
    for o in outputs {
        doc.entities.push(entity(o));
        doc.relations.push(Relation::new(RelationKind::WasGeneratedBy, *o, activity_id));
    }
    doc
}

/// Publishes one document per node of a DAG given as `(parent, child)` index
/// pairs with `parent < child`. Node `j` is produced by an activity that used
/// every parent. Returns the artifact PIDs in index order.
pub fn publish_dag(m: &fedprov::prov::ProvManager, n: usize, edges: &[(usize, usize)]) -> Vec<Pid> {
    let mut published: Vec<(Pid, Digest)> = Vec::new();
    for j in 0..n {
        let inputs: Vec<String> = edges.iter().filter(|(_, c)| *c == j).map(|(p, _)| format!("in{p}")).collect();
        let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        let mut doc = step_doc("make", &refs, &["out"]);
        for (p, _) in edges.iter().filter(|(_, c)| *c == j) {
            let e = doc.entity_mut(&format!("in{p}")).unwrap();
            e.artifact_pid = Some(published[*p].0.clone());
            e.checksum = Some(published[*p].1);
        }
        let out = m.publish(&[(format!("node {j}").into_bytes(), "out".into())], doc).unwrap();
        let a = &out.artifacts[0];
        published.push((a.pid.clone(), a.checksum));
    }
    published.into_iter().map(|(p, _)| p).collect()
}

/// Reachability by transitive closure over the edge list.
pub fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for &(a, b) in edges {
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

/// A random DAG on at most `max_nodes` nodes, edges only from lower to higher index.
pub fn random_dag(rng: &mut impl rand::Rng, max_nodes: usize) -> (usize, Vec<(usize, usize)>) {
    let n = rng.gen_range(1..=max_nodes);
    let mut edges = Vec::new();
    for b in 0..n {
        for a in 0..b {
            if rng.gen_bool(0.3) {
                edges.push((a, b));
            }
        }
    }
    (n, edges)
}

/// Default options with blocks cut as soon as a submitter waits.
pub fn fast_options() -> fedprov::federation::LocalOptions {
    let mut o = fedprov::federation::LocalOptions::default();
    o.batch.timeout_ms = 0;
    o
}
