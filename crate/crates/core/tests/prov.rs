mod common;

use common::{at, entity, step_doc};
use fedprov::digest::Digest;
use fedprov::federation::LocalFederation;
use fedprov::identity::{Capability, Permission, UserCredentials};
use fedprov::pid::{LinkRequest, ObjectKind, Pid};
use fedprov::prov::{FailurePoint, ProvDocument, ProvError, ProvManager, Relation, RelationKind, UpdateClass, Verdict};

struct Fixture {
    _dir: tempfile::TempDir,
    fed: LocalFederation,
    alice: UserCredentials,
    journal: std::path::PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fed = LocalFederation::standard(dir.path()).unwrap();
        let alice = fed.register("OrgA", "alice").unwrap();
        let journal = dir.path().join("journal");
        Fixture { _dir: dir, fed, alice, journal }
    }

    fn manager(&self) -> ProvManager {
        self.fed.manager(self.alice.clone()).with_journal(&self.journal)
    }
}

/// Publishes one artifact with its document; returns the record PID.
fn publish(m: &ProvManager) -> Pid {
    let out = m.publish(&[(b"t,v\n0,1\n".to_vec(), "data".into())], step_doc("collect", &[], &["data"])).unwrap();
    out.prov_pid
}

/// The newest document of `pid` with one more attribute on `data`.
fn enriched(m: &ProvManager, pid: &Pid, n: i64) -> ProvDocument {
    let (_, mut doc) = m.fetch(pid).unwrap();
    doc.entity_mut("data").unwrap().attributes.insert(format!("note{n}"), format!("value {n}"));
    doc.created_at = at(n * 1000);
    doc
}

#[test]
fn version_chain_is_complete_and_fetchable() {
    let f = Fixture::new();
    let m = f.manager();
    let root = publish(&m);
    let mut newest = root.clone();
    let mut submitted = vec![m.fetch(&root).unwrap().1];
    for n in 1..=5 {
        let doc = enriched(&m, &newest, n);
        let out = m.atomic_update(&newest, doc.clone(), None).unwrap();
        assert_eq!(out.classification, UpdateClass::Enrichment);
        assert_eq!(out.version, n as u64 + 1);
        assert_eq!(out.root_pid, root);
        submitted.push(doc);
        newest = out.new_pid;
    }

    for start in [&root, &newest] {
        let history = m.pids().version_history(start).unwrap();
        let versions: Vec<u64> = history.iter().map(|r| r.version_number).collect();
        assert_eq!(versions, [1, 2, 3, 4, 5, 6]);
        for (rec, doc) in history.iter().zip(&submitted) {
            let checksum = rec.checksum.unwrap();
            let bytes = m.store().blobs().get(&rec.target_uri, &checksum).unwrap();
            assert_eq!(Digest::of(&bytes), checksum);
            assert_eq!(bytes, doc.canonical_bytes());
        }
    }
    let ledger = m.ledger().hlf_read(&root).unwrap().unwrap();
    let last = m.pids().resolve(&newest).unwrap();
    assert_eq!(last.version_number, ledger.version);
    assert_eq!(last.checksum, Some(ledger.checksum));

    let report = m.verify(&newest).unwrap();
    assert_eq!(report.verdict, Verdict::Verified);
    assert_eq!(report.versions.len(), 6);
    assert_eq!(report.ledger_history.len(), 6);
}

#[test]
fn a_failure_at_any_step_leaves_no_trace() {
    let f = Fixture::new();
    let m = f.manager();
    let root = publish(&m);
    for point in FailurePoint::ALL {
        let before = m.system_digest().unwrap();
        m.inject_failure(point);
        let err = m.atomic_update(&root, enriched(&m, &root, 1), None).unwrap_err();
        assert!(matches!(err, ProvError::Injected(p) if p == point), "{err}");
        assert_eq!(m.system_digest().unwrap(), before, "{point:?}");
        assert!(m.pids().resolve(&root).unwrap().successor.is_none());
        assert!(!f.journal.exists() || std::fs::read_dir(&f.journal).unwrap().next().is_none());
    }
    // The same update goes through once nothing is armed.
    let out = m.atomic_update(&root, enriched(&m, &root, 1), None).unwrap();
    assert_eq!(out.version, 2);
}

#[test]
fn illegal_and_unauthorized_updates_change_nothing() {
    let f = Fixture::new();
    let m = f.manager();
    let root = publish(&m);
    let bob = f.fed.register("OrgB", "bob").unwrap();
    let bm = f.fed.manager(bob.clone());
    let before = m.system_digest().unwrap();

    let (_, mut relabeled) = m.fetch(&root).unwrap();
    relabeled.entity_mut("data").unwrap().label = "renamed".into();
    assert!(matches!(m.atomic_update(&root, relabeled, None), Err(ProvError::IllegalUpdate(_))));

    let (_, mut dropped) = m.fetch(&root).unwrap();
    dropped.relations.clear();
    assert!(matches!(m.atomic_update(&root, dropped, None), Err(ProvError::IllegalUpdate(_))));

    assert!(matches!(bm.atomic_update(&root, enriched(&m, &root, 1), None), Err(ProvError::Unauthorized(_))));
    assert_eq!(m.system_digest().unwrap(), before);

    let grant = Permission::grant(&f.alice, root.clone(), bob.principal(), Capability::UpdateProvenance);
    let out = bm.atomic_update(&root, enriched(&m, &root, 1), Some(grant)).unwrap();
    assert_eq!(out.version, 2);
    // Only the newest version can be updated.
    let stale = m.atomic_update(&root, enriched(&m, &root, 2), None).unwrap_err();
    assert!(matches!(stale, ProvError::SuccessorExists(_)), "{stale}");
}

#[test]
fn decomposition_keeps_the_original_activity() {
    let f = Fixture::new();
    let m = f.manager();
    let root = publish(&m);
    let (_, mut doc) = m.fetch(&root).unwrap();
    for (step, out) in [("fetch", "raw"), ("clean", "tidy")] {
        let mut a = common::activity(step);
        a.parent_activity = Some("collect".into());
        doc.activities.push(a);
        doc.entities.push(entity(out));
        doc.relations.push(Relation::new(RelationKind::WasGeneratedBy, out, step));
    }
    doc.relations.push(Relation::new(RelationKind::Used, "clean", "raw"));
    let out = m.atomic_update(&root, doc, None).unwrap();
    assert_eq!(out.classification, UpdateClass::Decomposition);
}

/// Replays the first steps of an update by hand and leaves a journal behind,
/// as a process that died right after linking the new version would.
fn crash_after_link(f: &Fixture, m: &ProvManager, old: &Pid, doc: &ProvDocument) -> Pid {
    let stored = m.store().store_document(doc).unwrap();
    let rec = m.pids().mint(ObjectKind::ProvenanceRecord, &stored.uri, Some(stored.checksum), &f.alice.principal()).unwrap();
    let link = LinkRequest::sign(&f.alice, old.clone(), rec.pid.clone(), None);
    m.pids().link_new_version(&link).unwrap();
    let journal = serde_json::json!({
        "old_pid": old,
        "root_pid": old,
        "caller": f.alice.identity,
        "blob": stored,
        "new_pid": rec.pid,
        "link": link,
    });
    std::fs::create_dir_all(&f.journal).unwrap();
    let name = old.to_string().replace('/', "_");
    std::fs::write(f.journal.join(format!("{name}.json")), serde_json::to_vec(&journal).unwrap()).unwrap();
    rec.pid
}

#[test]
fn recovery_undoes_an_interrupted_update() {
    let f = Fixture::new();
    let m = f.manager();
    let root = publish(&m);
    let before = m.system_digest().unwrap();
    let orphan = crash_after_link(&f, &m, &root, &enriched(&m, &root, 1));
    assert_ne!(m.system_digest().unwrap(), before);
    assert_eq!(m.pids().resolve(&root).unwrap().successor, Some(orphan));

    let fresh = f.manager();
    assert_eq!(fresh.recover().unwrap(), 1);
    assert_eq!(fresh.system_digest().unwrap(), before);
    assert_eq!(fresh.recover().unwrap(), 0);
    assert_eq!(fresh.atomic_update(&root, enriched(&m, &root, 1), None).unwrap().version, 2);
}

#[test]
fn recovery_keeps_an_update_the_ledger_committed() {
    let f = Fixture::new();
    let m = f.manager();
    let root = publish(&m);
    let doc = enriched(&m, &root, 1);
    let new = crash_after_link(&f, &m, &root, &doc);
    let checksum = doc.checksum();
    let uri = m.pids().resolve(&new).unwrap().target_uri;
    m.ledger().hlf_update_prov(&root, &uri, checksum, None).unwrap();
    let committed = m.system_digest().unwrap();

    assert_eq!(f.manager().recover().unwrap(), 1);
    assert_eq!(m.system_digest().unwrap(), committed);
    assert_eq!(m.verify(&new).unwrap().verdict, Verdict::Verified);
}
