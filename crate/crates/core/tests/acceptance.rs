//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{closure, digest, fast_options, pid, publish_dag, random_dag};
use fedprov::digest::Digest;
use fedprov::federation::{LocalFederation, LocalOptions, TcpFederation, FOUR_ORGS, STANDARD_ORGS};
use fedprov::identity::{Capability, Permission, Role, UserCredentials};
use fedprov::ledger::{
    read_blocks, status_string, verify_ledger_bytes, ChaincodeOp, LedgerClient, LedgerValue, Status, TxKind, WorldState,
};
use fedprov::lineage::Lineage;
use fedprov::pid::{ObjectKind, Pid};
use fedprov::prov::{classify_update, ProvDocument, ProvError, ProvManager, Relation, RelationKind, UpdateClass};
use fedprov::scenario::{Scenario, ScenarioReport, ScenarioRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, elapsed: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("update-prov conformance", update_prov_conformance),
        ("CRUD matrix", crud_matrix),
        ("tamper evidence", tamper_evidence),
        ("replicated determinism", replicated_determinism),
        ("cascade correctness", cascade_correctness),
        ("version chain", version_chain),
        ("update classification", update_classification),
        ("end-to-end lineage", end_to_end_lineage),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {elapsed:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}; {elapsed:.2?})", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn local(root: &Path) -> LocalFederation {
    LocalFederation::new(&STANDARD_ORGS, root, fast_options()).unwrap()
}

// 1 -------------------------------------------------------------------------

fn update_prov_conformance() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let f = local(dir.path());
    let owner_creds = f.register("OrgA", "owner").unwrap();
    let owner = f.client(owner_creds.clone());
    let granted = f.client(f.register("OrgB", "granted").unwrap());
    let stranger = f.client(f.register("OrgB", "stranger").unwrap());
    let consumer = f.client(f.register_with_role("Readers", "consumer", Role::Consumer).unwrap());
    let existing = pid("existing");
    let missing = pid("missing");
    owner.hlf_create(ObjectKind::ProvenanceRecord, &existing, "prov://v1", digest("v1"), vec![owner.principal()]).unwrap();

    const UNAUTHORIZED: &str = "Error: Unauthorized user";
    const NOT_FOUND: &str = "Error: Resource not found";
    const UPDATED: &str = "Success: Resource updated successfully";
    // Authorization first; a missing record has no owners, so only the role
    // decides, and a writer then sees not-found.
    let table: [(&str, &LedgerClient, bool, &str); 8] = [
        ("owner", &owner, true, UPDATED),
        ("owner", &owner, false, NOT_FOUND),
        ("granted", &granted, true, UPDATED),
        ("granted", &granted, false, NOT_FOUND),
        ("stranger", &stranger, true, UNAUTHORIZED),
        ("stranger", &stranger, false, NOT_FOUND),
        ("consumer", &consumer, true, UNAUTHORIZED),
        ("consumer", &consumer, false, UNAUTHORIZED),
    ];
    let mut passed = 0;
    for (i, (who, client, exists, want)) in table.into_iter().enumerate() {
        let target = if exists { &existing } else { &missing };
        let grant = (who == "granted")
            .then(|| Permission::grant(&owner_creds, target.clone(), client.principal(), Capability::UpdateProvenance));
        let before = owner.hlf_read(target).unwrap();
        let uri = format!("prov://case{i}");
        let got = status_string(&client.hlf_update_prov(target, &uri, digest(&uri), grant));
        let after = owner.hlf_read(target).unwrap();
        ensure(got == want, || format!("{who}/{}: got {got:?}", if exists { "existing" } else { "missing" }))?;
        if want == UPDATED {
            let (b, a) = (before.unwrap(), after.unwrap());
            ensure(a.version == b.version + 1 && a.uri == uri && a.checksum == digest(&uri), || format!("{who}: bad update {a:?}"))?;
            ensure(a.owners == b.owners, || format!("{who}: owners changed"))?;
        } else {
            ensure(before == after, || format!("{who}: state changed on refusal"))?;
        }
        passed += 1;
    }
    let elapsed = start.elapsed();
    within(Duration::from_secs(1), elapsed)?;
    Ok(format!("{passed}/8 cases"))
}

// 2 -------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    CreateArtifact,
    CreateProv,
    UpdateProv,
    UpdateArtifact,
    InvalidateArtifact,
    InvalidateProv,
    Read,
}

/// Table of permitted (object kind, operation) cells, written out by hand.
fn permitted(kind: ObjectKind, op: Op) -> bool {
    matches!(
        (kind, op),
        (ObjectKind::Artifact, Op::CreateArtifact | Op::Read | Op::InvalidateArtifact)
            | (ObjectKind::ProvenanceRecord, Op::CreateProv | Op::Read | Op::UpdateProv)
    )
}

fn crud_matrix() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2024);
    let ops = [Op::CreateArtifact, Op::CreateProv, Op::UpdateProv, Op::UpdateArtifact, Op::InvalidateArtifact, Op::InvalidateProv, Op::Read];
    let (mut accepted, mut refused, mut forbidden_attempts) = (0, 0, 0);
    let sequences = 1000;
    let per_federation = 100;
    for batch in 0..sequences / per_federation {
        let dir = tempfile::tempdir().unwrap();
        let f = local(dir.path());
        let users: Vec<LedgerClient> = vec![
            f.client(f.register("OrgA", "a1").unwrap()),
            f.client(f.register("OrgA", "a2").unwrap()),
            f.client(f.register("OrgB", "b1").unwrap()),
            f.client(f.register_with_role("Readers", "r1", Role::Consumer).unwrap()),
        ];
        for seq in 0..per_federation {
            let keys: Vec<Pid> = (0..3).map(|k| pid(&format!("s{batch}-{seq}-{k}"))).collect();
            for step in 0..rng.gen_range(3..=8) {
                let caller = &users[rng.gen_range(0..users.len())];
                let op = ops[rng.gen_range(0..ops.len())];
                let key = &keys[rng.gen_range(0..keys.len())];
                let before = caller.world_state().unwrap();
                let tag = format!("{batch}-{seq}-{step}");
                let result = match op {
                    Op::CreateArtifact => Some(caller.hlf_create(ObjectKind::Artifact, key, &tag, digest(&tag), vec![caller.principal()])),
                    Op::CreateProv => Some(caller.hlf_create(ObjectKind::ProvenanceRecord, key, &tag, digest(&tag), vec![caller.principal()])),
                    Op::UpdateProv | Op::UpdateArtifact => {
                        Some(caller.submit(key, ChaincodeOp::UpdateProv { new_uri: tag.clone(), new_checksum: digest(&tag), permission: None }))
                    }
                    Op::InvalidateArtifact | Op::InvalidateProv => Some(caller.hlf_invalidate(key, "r", None)),
                    Op::Read => {
                        caller.hlf_read(key).unwrap();
                        None
                    }
                };
                let after = caller.world_state().unwrap();
                let kind_before = before.get(key).map(|v| v.kind);
                // Classify what was actually attempted by the object's kind.
                let attempted = match (op, kind_before) {
                    (Op::UpdateProv | Op::UpdateArtifact, Some(ObjectKind::Artifact)) => Op::UpdateArtifact,
                    (Op::UpdateProv | Op::UpdateArtifact, _) => Op::UpdateProv,
                    (Op::InvalidateArtifact | Op::InvalidateProv, Some(ObjectKind::ProvenanceRecord)) => Op::InvalidateProv,
                    (Op::InvalidateArtifact | Op::InvalidateProv, _) => Op::InvalidateArtifact,
                    (other, _) => other,
                };
                if matches!(attempted, Op::UpdateArtifact | Op::InvalidateProv) {
                    forbidden_attempts += 1;
                    ensure(before.digest() == after.digest(), || format!("{attempted:?} on {key} changed state"))?;
                }
                let changed = changed_keys(&before, &after);
                match result {
                    Some(Ok(_)) if !changed.is_empty() => {
                        accepted += 1;
                        ensure(changed == [key.clone()], || format!("{attempted:?} changed {changed:?}"))?;
                        let new = after.get(key).unwrap();
                        check_mutation(attempted, before.get(key), new, &caller.principal())?;
                    }
                    Some(Ok(_)) => {}
                    Some(Err(_)) | None => {
                        refused += usize::from(result.is_some());
                        ensure(changed.is_empty(), || format!("refused {attempted:?} changed state"))?;
                    }
                }
            }
        }
    }
    within(Duration::from_secs(60), start.elapsed())?;
    Ok(format!("{sequences} sequences, {accepted} accepted mutations, {refused} refusals, {forbidden_attempts} forbidden attempts left state unchanged"))
}

fn changed_keys(before: &WorldState, after: &WorldState) -> Vec<Pid> {
    let keys: BTreeSet<&Pid> = before.iter().chain(after.iter()).map(|(k, _)| k).collect();
    keys.into_iter().filter(|k| before.get(k) != after.get(k)).cloned().collect()
}

fn check_mutation(op: Op, old: Option<&LedgerValue>, new: &LedgerValue, caller: &str) -> Result<(), String> {
    ensure(permitted(new.kind, op), || format!("{op:?} on {:?} is not a permitted cell", new.kind))?;
    match (op, old) {
        (Op::CreateArtifact | Op::CreateProv, None) => {
            ensure(new.version == 1 && new.owners == [caller] && new.status == Status::Valid, || format!("bad create {new:?}"))
        }
        (Op::UpdateProv, Some(old)) => ensure(
            new.version == old.version + 1 && new.owners == old.owners && old.owners.iter().any(|o| o == caller),
            || format!("bad update {old:?} -> {new:?}"),
        ),
        (Op::InvalidateArtifact, Some(old)) => ensure(
            new.status == Status::Invalidated && new.uri == old.uri && new.checksum == old.checksum && old.owners.iter().any(|o| o == caller),
            || format!("bad invalidation {old:?} -> {new:?}"),
        ),
        _ => Err(format!("{op:?} produced an unexpected change")),
    }
}

// 3 -------------------------------------------------------------------------

fn tamper_evidence() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let f = LocalFederation::new(&STANDARD_ORGS, dir.path(), LocalOptions { persist: true, ..fast_options() }).unwrap();
    let alice = f.client(f.register("OrgA", "alice").unwrap());
    let mut height = 1;
    while height < 50 {
        let p = pid(&format!("b{height}"));
        let r = alice.hlf_create(ObjectKind::Artifact, &p, "data://x", digest(&height.to_string()), vec![alice.principal()]).unwrap();
        height = r.height + 1;
    }
    let path = dir.path().join("nodes/OrgA/ledger.jsonl");
    let blocks = read_blocks(&path).unwrap();
    ensure(blocks.len() == 50, || format!("ledger has {} blocks", blocks.len()))?;
    let raw = std::fs::read(&path).unwrap();
    let fed = f.federation().clone();
    ensure(verify_ledger_bytes(&raw, Some(&fed)).is_clean(), || "pristine ledger reported a fault".into())?;

    // Height of the block whose line holds byte `i` (a newline belongs to the line it ends).
    let mut line_of = Vec::with_capacity(raw.len());
    let mut line = 0u64;
    for b in &raw {
        line_of.push(line);
        if *b == b'\n' {
            line += 1;
        }
    }
    let mut rng = StdRng::seed_from_u64(3);
    let mut flagged = 0;
    for run in 0..200 {
        let at = rng.gen_range(0..raw.len());
        let mut bad = raw.clone();
        bad[at] ^= rng.gen_range(1..=255u8);
        let report = verify_ledger_bytes(&bad, Some(&fed));
        let fault = report.first_fault.ok_or_else(|| format!("run {run}: mutation at byte {at} went unnoticed"))?;
        ensure(fault.height <= line_of[at], || format!("run {run}: fault at {} after mutated block {}", fault.height, line_of[at]))?;
        flagged += 1;
    }
    within(Duration::from_secs(30), start.elapsed())?;
    Ok(format!("{flagged}/200 mutations flagged at or before the mutated block"))
}

// 4 -------------------------------------------------------------------------

fn run_scenarios<'a>(runner: &mut ScenarioRunner<'a>, names: &[&str]) -> Result<Vec<ScenarioReport>, String> {
    names
        .iter()
        .map(|n| runner.run(&Scenario::builtin(n).unwrap()).map_err(|e| format!("{n}: {e}")))
        .collect()
}

fn replicated_determinism() -> Outcome {
    let mut runs: Vec<BTreeMap<String, Digest>> = Vec::new();
    for run in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let fed = TcpFederation::start(&STANDARD_ORGS, dir.path(), LocalOptions::default()).unwrap();
        let mut runner = ScenarioRunner::new(fed.handle(), |org, id, role| match role {
            Some(r) => fed.register_with_role(org, id, r).map_err(|e| e.to_string()),
            None => fed.register(org, id).map_err(|e| e.to_string()),
        });
        run_scenarios(&mut runner, &["uc1", "uc2", "uc3", "uc4", "uc5"])?;
        let digests: BTreeMap<String, Digest> = fed.handle().peer_state_digests().into_iter().collect();
        ensure(digests.len() == 3, || format!("run {run}: only {} nodes answered", digests.len()))?;
        let distinct: BTreeSet<&Digest> = digests.values().collect();
        ensure(distinct.len() == 1, || format!("run {run}: nodes disagree {digests:?}"))?;
        runs.push(digests);
    }
    ensure(runs.windows(2).all(|w| w[0] == w[1]), || "digests differ between runs".into())?;
    let d = runs[0].values().next().unwrap();
    Ok(format!("3 nodes x 5 runs agree on {}", &d.to_hex()[..16]))
}

// 5 -------------------------------------------------------------------------

fn cascade_correctness() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let f = LocalFederation::new(&FOUR_ORGS, dir.path(), fast_options()).unwrap();
    let mut runner = ScenarioRunner::new(f.handle(), |org, id, role| match role {
        Some(r) => f.register_with_role(org, id, r).map_err(|e| e.to_string()),
        None => f.register(org, id).map_err(|e| e.to_string()),
    });
    let report = run_scenarios(&mut runner, &["experiments"])?.remove(0);
    let b = |name: &str| -> Pid { report.bindings[name].parse().unwrap() };
    let reader = f.client(f.register("Readers", "auditor").unwrap());
    let state = reader.world_state().unwrap();
    let affected: BTreeSet<Pid> = state.iter().filter(|(_, v)| v.status == Status::Affected).map(|(k, _)| k.clone()).collect();
    ensure(affected == BTreeSet::from([b("D"), b("E")]), || format!("affected {affected:?}"))?;
    ensure(state.get(&b("B")).unwrap().status == Status::Invalidated, || "B not invalidated".into())?;

    let mut rng = StdRng::seed_from_u64(55);
    for round in 0..100 {
        let dir = tempfile::tempdir().unwrap();
        let f = local(dir.path());
        let m = f.manager(f.register("OrgA", "alice").unwrap());
        let (n, edges) = random_dag(&mut rng, 10);
        let pids = publish_dag(&m, n, &edges);
        let victim = rng.gen_range(0..n);
        m.invalidate(&pids[victim], "retracted", None).map_err(|e| e.to_string())?;
        let cascade = Lineage::load(&m).and_then(|l| l.cascade(&pids[victim], Default::default(), None)).map_err(|e| e.to_string())?;
        let reach = closure(n, &edges);
        let oracle: BTreeSet<Pid> = (0..n).filter(|&j| reach[victim][j]).map(|j| pids[j].clone()).collect();
        let flagged: BTreeSet<Pid> = cascade.flagged.into_iter().collect();
        ensure(flagged == oracle, || format!("round {round}: cascade {flagged:?} vs oracle {oracle:?}"))?;
        let on_ledger: BTreeSet<Pid> = m
            .ledger()
            .world_state()
            .unwrap()
            .iter()
            .filter(|(_, v)| v.status == Status::Affected)
            .map(|(k, _)| k.clone())
            .collect();
        ensure(on_ledger == oracle, || format!("round {round}: ledger flags {on_ledger:?}"))?;
    }
    within(Duration::from_secs(30), start.elapsed())?;
    Ok("experiments fixture affects exactly {D, E}; 100/100 random DAGs match the closure oracle".into())
}

// 6 -------------------------------------------------------------------------

fn version_chain() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let f = local(dir.path());
    let m = f.manager(f.register("OrgA", "alice").unwrap());
    let out = m.publish(&[(b"series".to_vec(), "out".into())], common::step_doc("make", &[], &["out"])).map_err(|e| e.to_string())?;
    let root = out.prov_pid;
    let mut newest = root.clone();
    let mut expected_bytes = vec![m.fetch(&root).unwrap().1.canonical_bytes()];
    for n in 1..=5 {
        let (_, mut doc) = m.fetch(&newest).unwrap();
        doc.entity_mut("out").unwrap().attributes.insert(format!("k{n}"), n.to_string());
        doc.created_at = common::at(n * 60_000);
        expected_bytes.push(doc.canonical_bytes());
        newest = m.atomic_update(&newest, doc, None).map_err(|e| e.to_string())?.new_pid;
    }
    let history = m.pids().version_history(&newest).map_err(|e| e.to_string())?;
    let versions: Vec<u64> = history.iter().map(|r| r.version_number).collect();
    ensure(versions == [1, 2, 3, 4, 5, 6], || format!("versions {versions:?}"))?;
    for (rec, want) in history.iter().zip(&expected_bytes) {
        let checksum = rec.checksum.ok_or("version without checksum")?;
        let bytes = m.store().blobs().get(&rec.target_uri, &checksum).map_err(|e| e.to_string())?;
        ensure(&bytes == want && Digest::of(&bytes) == checksum, || format!("version {} differs", rec.version_number))?;
    }
    let ledger = m.ledger().hlf_read(&root).unwrap().ok_or("no ledger value")?;
    let last = history.last().unwrap();
    ensure(last.version_number == ledger.version, || format!("pid v{} vs ledger v{}", last.version_number, ledger.version))?;
    Ok(format!("6 versions fetch byte-exactly; newest pid version {} = ledger version", ledger.version))
}

// 7 -------------------------------------------------------------------------

fn classes_of(report: &ScenarioReport) -> Vec<String> {
    report
        .steps
        .iter()
        .filter(|s| s.op == "update")
        .filter_map(|s| s.result.get("classification").and_then(|c| c.as_str()).map(str::to_string))
        .collect()
}

fn update_classification() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let f = local(dir.path());
    let mut runner = ScenarioRunner::new(f.handle(), |org, id, role| match role {
        Some(r) => f.register_with_role(org, id, r).map_err(|e| e.to_string()),
        None => f.register(org, id).map_err(|e| e.to_string()),
    });
    let reports = run_scenarios(&mut runner, &["uc4", "uc5"])?;
    ensure(classes_of(&reports[0]) == ["enrichment"], || format!("uc4 classes {:?}", classes_of(&reports[0])))?;
    ensure(classes_of(&reports[1]) == ["decomposition"], || format!("uc5 classes {:?}", classes_of(&reports[1])))?;

    let creds = f.register("OrgB", "mutator").unwrap();
    let m = f.manager(creds);
    let (base_record, base) = rich_document(&m);
    let other = m.register_artifact(b"another artifact").map_err(|e| e.to_string())?.pid;
    let mut rng = StdRng::seed_from_u64(77);
    for i in 0..50 {
        let (what, edited) = mutate(&base, &other, &mut rng);
        edited.validate().map_err(|e| format!("edit {i} ({what}) is not a valid document: {e}"))?;
        ensure(classify_update(&base, &edited) == UpdateClass::Illegal, || format!("edit {i} ({what}) not illegal"))?;
        let before = m.system_digest().unwrap();
        let err = m.atomic_update(&base_record, edited, None);
        ensure(matches!(err, Err(ProvError::IllegalUpdate(_))), || format!("edit {i} ({what}): {err:?}"))?;
        ensure(m.system_digest().unwrap() == before, || format!("edit {i} ({what}) left changes behind"))?;
    }
    Ok("uc4 enrichment, uc5 decomposition, 50/50 mutations illegal with state unchanged".into())
}

/// A published document with every kind of element and relation.
fn rich_document(m: &ProvManager) -> (Pid, ProvDocument) {
    let input = m.register_artifact(b"input bytes").unwrap();
    let mut doc = ProvDocument::new(common::at(0));
    let mut raw = common::entity("raw");
    raw.artifact_pid = Some(input.pid.clone());
    raw.checksum = Some(input.checksum);
    raw.label = "raw input".into();
    raw.attributes.insert("unit".into(), "mm".into());
    let mut out = common::entity("out");
    out.label = "result".into();
    out.attributes.insert("grid".into(), "0.25".into());
    doc.entities = vec![raw, out];
    let mut run = common::activity("run");
    run.label = "processing".into();
    run.started = Some(common::at(10));
    run.attributes.insert("version".into(), "1.2".into());
    doc.activities = vec![run];
    doc.agents = vec![fedprov::prov::Agent { local_id: "lab".into(), identity_ref: Some("mutator@OrgB".into()), label: "Lab".into() }];
    doc.relations = vec![
        Relation::new(RelationKind::Used, "run", "raw"),
        Relation::new(RelationKind::WasGeneratedBy, "out", "run"),
        Relation::new(RelationKind::WasDerivedFrom, "out", "raw"),
        Relation::new(RelationKind::WasAssociatedWith, "run", "lab"),
        Relation::new(RelationKind::WasAttributedTo, "out", "lab"),
    ];
    let published = m.publish(&[(b"output bytes".to_vec(), "out".into())], doc).unwrap();
    let (_, stored) = m.fetch(&published.prov_pid).unwrap();
    (published.prov_pid, stored)
}

/// One edit that removes or alters original content, keeping the document valid.
fn mutate(base: &ProvDocument, other: &Pid, rng: &mut StdRng) -> (&'static str, ProvDocument) {
    let mut d = base.clone();
    d.created_at = common::at(1000);
    let what = match rng.gen_range(0..10) {
        0 => {
            let i = rng.gen_range(0..d.relations.len());
            d.relations.remove(i);
            "drop relation"
        }
        1 => {
            let e = &mut d.entities[rng.gen_range(0..2)];
            let k = e.attributes.keys().next().unwrap().clone();
            e.attributes.remove(&k);
            "drop attribute"
        }
        2 => {
            let e = &mut d.entities[rng.gen_range(0..2)];
            let k = e.attributes.keys().next().unwrap().clone();
            e.attributes.insert(k, format!("changed {}", rng.gen::<u16>()));
            "alter attribute"
        }
        3 => {
            d.entities[rng.gen_range(0..2)].label = format!("relabeled {}", rng.gen::<u16>());
            "alter entity label"
        }
        4 => {
            d.activities[0].label = "other process".into();
            "alter activity label"
        }
        5 => {
            d.activities[0].started = Some(common::at(rng.gen_range(11..500)));
            "alter start time"
        }
        6 => {
            d.entities[0].artifact_pid = Some(other.clone());
            "repoint artifact pid"
        }
        7 => {
            d.entities[0].checksum = Some(digest(&rng.gen::<u64>().to_string()));
            "alter checksum"
        }
        8 => {
            d.agents[0].identity_ref = Some("someone@OrgA".into());
            "alter agent identity"
        }
        _ => {
            d.activities[0].attributes.clear();
            "drop activity attributes"
        }
    };
    (what, d)
}

// 8 -------------------------------------------------------------------------

fn end_to_end_lineage() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let f = local(dir.path());
    let mut runner = ScenarioRunner::new(f.handle(), |org, id, role| match role {
        Some(r) => f.register_with_role(org, id, r).map_err(|e| e.to_string()),
        None => f.register(org, id).map_err(|e| e.to_string()),
    });
    let report = run_scenarios(&mut runner, &["uc1"])?.remove(0);
    let b = |name: &str| -> Pid { report.bindings[name].parse().unwrap() };
    let reader: UserCredentials = f.register("Readers", "tracer").unwrap();
    let m = f.manager(reader);
    let trace = Lineage::load(&m).and_then(|l| l.trace(&b("image"))).map_err(|e| e.to_string())?;
    ensure(trace.paths.len() == 1, || format!("{} paths", trace.paths.len()))?;
    let path = &trace.paths[0];
    ensure(path.artifacts == [b("image"), b("model"), b("dataset")], || format!("path {:?}", path.artifacts))?;
    let mut attesting = BTreeSet::new();
    for hop in &path.hops {
        ensure(!hop.attestations.is_empty(), || format!("hop {} -> {} unattested", hop.from, hop.to))?;
        for a in &hop.attestations {
            let doc = m.store().fetch_document(&a.uri, &a.checksum).map_err(|e| format!("hop {} -> {}: {e}", hop.from, hop.to))?;
            ensure(doc.checksum() == a.checksum, || "attesting document checksum differs".into())?;
            attesting.insert(a.checksum);
        }
    }
    for checksum in &attesting {
        let file = m.store().blobs().path_for(checksum);
        let pristine = std::fs::read(&file).unwrap();
        let mut bad = pristine.clone();
        bad[pristine.len() / 2] ^= 0x01;
        std::fs::write(&file, &bad).unwrap();
        let broken = Lineage::load(&m).and_then(|l| l.trace(&b("image")));
        std::fs::write(&file, &pristine).unwrap();
        ensure(broken.is_err(), || format!("trace survived corruption of {}", &checksum.to_hex()[..12]))?;
        Lineage::load(&m).and_then(|l| l.trace(&b("image"))).map_err(|e| format!("trace after restore: {e}"))?;
    }
    let history = m.ledger().get_history(&b("image")).unwrap();
    ensure(history.iter().all(|h| h.tx.kind() == TxKind::CreateArtifact), || "unexpected image history".into())?;
    Ok(format!("image -> model -> dataset, {} attesting documents verified, each corruption fails the trace", attesting.len()))
}
