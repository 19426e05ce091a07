mod common;

use std::collections::BTreeMap;

use common::{publish_dag, step_doc};
use fedprov::digest::Digest;
use fedprov::federation::{LocalOptions, TcpFederation, STANDARD_ORGS};
use fedprov::ledger::PeerApi;
use fedprov::prov::Verdict;
use fedprov::scenario::{Scenario, ScenarioRunner};

const UCS: [&str; 5] = ["uc1", "uc2", "uc3", "uc4", "uc5"];

fn runner(fed: &TcpFederation) -> ScenarioRunner<'_> {
    ScenarioRunner::new(fed.handle(), |org, id, role| match role {
        Some(r) => fed.register_with_role(org, id, r).map_err(|e| e.to_string()),
        None => fed.register(org, id).map_err(|e| e.to_string()),
    })
}

/// Replays the use cases over loopback TCP; returns each node's final digest.
fn replay(root: &std::path::Path) -> BTreeMap<String, Digest> {
    let fed = TcpFederation::start(&STANDARD_ORGS, root, LocalOptions::default()).unwrap();
    let mut r = runner(&fed);
    for name in UCS {
        let report = r.run(&Scenario::builtin(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let distinct: std::collections::BTreeSet<_> = report.state_digests.values().collect();
        assert_eq!(distinct.len(), 1, "{name}");
    }
    let remote: BTreeMap<String, Digest> = fed.handle().peer_state_digests().into_iter().collect();
    assert_eq!(remote.len(), 3);
    for node in fed.peer_nodes() {
        assert_eq!(remote[node.org()], node.state_digest());
    }
    remote
}

#[test]
fn use_cases_replay_identically_over_tcp() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(replay(a.path()), replay(b.path()));
}

#[test]
fn reads_and_writes_survive_a_stopped_peer() {
    let dir = tempfile::tempdir().unwrap();
    let fed = TcpFederation::start(&STANDARD_ORGS, dir.path(), LocalOptions::default()).unwrap();
    let alice = fed.manager(fed.register("OrgA", "alice").unwrap());
    let rita = fed.manager(fed.register("Readers", "rita").unwrap());
    let pids = publish_dag(&alice, 2, &[(0, 1)]);

    // OrgA's own node goes away; OrgB still endorses and Readers still serves reads.
    fed.stop_peer(0);
    let statuses = fed.handle().node_statuses();
    assert!(statuses[0].1.is_err());
    assert!(statuses[1].1.is_ok());
    assert_eq!(rita.verify(&pids[1]).unwrap().verdict, Verdict::Verified);
    let out = alice.publish(&[(b"late".to_vec(), "out".into())], step_doc("make", &[], &["out"])).unwrap();
    assert_eq!(rita.verify(&out.artifacts[0].pid).unwrap().verdict, Verdict::Verified);
    let digests = fed.handle().peer_state_digests();
    assert_eq!(digests.len(), 2);
    assert_eq!(digests[0].1, digests[1].1);
}
