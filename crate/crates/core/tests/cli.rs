use std::path::PathBuf;

use fedprov::cli::{exit, run};
use serde_json::Value;

struct Env {
    dir: tempfile::TempDir,
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Out {
    fn json(&self) -> Value {
        serde_json::from_str(self.stdout.trim()).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

impl Env {
    fn new() -> Self {
        let env = Env { dir: tempfile::tempdir().unwrap() };
        assert_eq!(env.run(&["federation", "init", "--base-port", "1"]).code, 0);
        for u in ["alice@OrgA", "bob@OrgB", "rita@Readers"] {
            assert_eq!(env.run(&["enroll", u]).code, 0);
        }
        env
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> String {
        self.path("federation.json").display().to_string()
    }

    fn run(&self, args: &[&str]) -> Out {
        let config = self.config();
        let mut full = vec!["fedprov", "--config", config.as_str(), "--embedded"];
        full.extend_from_slice(args);
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(full, &mut out, &mut err);
        Out { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
    }

    fn as_user(&self, who: &str, args: &[&str]) -> Out {
        let mut full = vec!["--json", "--identity", who];
        full.extend_from_slice(args);
        self.run(&full)
    }

    fn write(&self, name: &str, content: &str) -> String {
        let p = self.path(name);
        std::fs::write(&p, content).unwrap();
        p.display().to_string()
    }

    fn publish_dataset(&self) -> (String, String) {
        let (d, p, _) = self.publish_dataset_with_checksum();
        (d, p)
    }

    fn publish_dataset_with_checksum(&self) -> (String, String, String) {
        let file = self.write("dataset.csv", "a,b\n1,2\n");
        let doc = self.write("doc.json", DOC);
        let o = self.as_user("alice@OrgA", &["publish", &file, &doc]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        let v = o.json();
        let a = &v["artifacts"][0];
        (a["pid"].as_str().unwrap().into(), v["prov-pid"].as_str().unwrap().into(), a["checksum"].as_str().unwrap().into())
    }
}

const DOC: &str = r#"{"created_at":"2025-01-01T08:00:00.000Z",
  "entities":[{"local_id":"raw","attributes":{"site":"S1"}},{"local_id":"dataset"}],
  "activities":[{"local_id":"qc"}],
  "relations":[{"kind":"used","source":"qc","target":"raw"},{"kind":"was-generated-by","source":"dataset","target":"qc"}]}"#;

fn enriched(dataset: &str, checksum: &str) -> String {
    format!(
        r#"{{"created_at":"2025-01-02T08:00:00.000Z",
  "entities":[{{"local_id":"raw","attributes":{{"site":"S1","probe":"TDR"}}}},{{"local_id":"dataset","artifact_pid":"{dataset}","checksum":"{checksum}"}}],
  "activities":[{{"local_id":"qc"}}],
  "relations":[{{"kind":"used","source":"qc","target":"raw"}},{{"kind":"was-generated-by","source":"dataset","target":"qc"}}]}}"#
    )
}

#[test]
fn publish_verify_trace_round_trip() {
    let env = Env::new();
    let (dataset, prov) = env.publish_dataset();
    let v = env.as_user("rita@Readers", &["verify", &dataset]);
    assert_eq!(v.code, 0);
    assert_eq!(v.json()["verdict"], "VERIFIED");
    let v = env.as_user("rita@Readers", &["verify", &prov]);
    assert_eq!(v.json()["ledger-version"], 1);
    let t = env.as_user("rita@Readers", &["trace", &dataset]);
    assert_eq!(t.code, 0);
    assert_eq!(t.json()["paths"].as_array().unwrap().len(), 1);
    let dot = env.run(&["--identity", "rita@Readers", "trace", "--dot", &dataset]);
    assert!(dot.stdout.starts_with("digraph"));
}

#[test]
fn update_prov_reports_classification_and_chain() {
    let env = Env::new();
    let (dataset, prov, sum) = env.publish_dataset_with_checksum();
    let doc = env.write("v2.json", &enriched(&dataset, &sum));
    let o = env.as_user("alice@OrgA", &["update-prov", &prov, &doc]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let body = o.json();
    assert_eq!(body["classification"], "enrichment");
    assert_eq!(body["old-pid"], prov.as_str());
    let new = body["new-pid"].as_str().unwrap().to_string();
    let v = env.as_user("rita@Readers", &["verify", &new]).json();
    assert_eq!(v["versions"].as_array().unwrap().len(), 2);

    // The old head is no longer a chain end.
    let again = env.as_user("alice@OrgA", &["update-prov", &prov, &doc]);
    assert_eq!(again.code, exit::SUCCESSOR_EXISTS);
}

#[test]
fn granted_user_may_update() {
    let env = Env::new();
    let (dataset, prov, sum) = env.publish_dataset_with_checksum();
    let doc = env.write("v2.json", &enriched(&dataset, &sum));
    assert_eq!(env.as_user("bob@OrgB", &["update-prov", &prov, &doc]).code, exit::UNAUTHORIZED);
    let grant = env.path("grant.json").display().to_string();
    let g = env.as_user("alice@OrgA", &["grant", &prov, "--to", "bob@OrgB", "--capability", "update-provenance", "--out", &grant]);
    assert_eq!(g.code, 0, "{}", g.stderr);
    let o = env.as_user("bob@OrgB", &["update-prov", &prov, &doc, "--grant", &grant]);
    assert_eq!(o.code, 0, "{}", o.stderr);
}

#[test]
fn invalidate_with_cascade_flags_downstream() {
    let env = Env::new();
    let (dataset, _) = env.publish_dataset();
    let model = env.write("model.bin", "weights");
    let doc = env.write(
        "model.json",
        &format!(
            r#"{{"created_at":"2025-01-03T08:00:00.000Z","entities":[{{"local_id":"in","artifact_pid":"{dataset}"}},{{"local_id":"model"}}],
            "activities":[{{"local_id":"train"}}],
            "relations":[{{"kind":"used","source":"train","target":"in"}},{{"kind":"was-generated-by","source":"model","target":"train"}}]}}"#
        ),
    );
    let m = env.as_user("bob@OrgB", &["publish", &model, &doc]);
    assert_eq!(m.code, 0, "{}", m.stderr);
    let model_pid = m.json()["artifacts"][0]["pid"].as_str().unwrap().to_string();

    assert_eq!(env.as_user("bob@OrgB", &["invalidate", &dataset, "--reason", "x"]).code, exit::UNAUTHORIZED);
    let o = env.as_user("alice@OrgA", &["invalidate", &dataset, "--reason", "erratum", "--cascade"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let statuses = &o.json()["cascade"]["statuses"];
    assert_eq!(statuses[&model_pid], "affected");
    let v = env.as_user("rita@Readers", &["verify", &model_pid]).json();
    assert_eq!(v["status"], "affected");
    let outbox = std::fs::read_to_string(env.path("state/outbox/OrgB.jsonl")).unwrap();
    assert!(outbox.contains(&model_pid));
}

#[test]
fn history_lists_iterations() {
    let env = Env::new();
    let (dataset, _) = env.publish_dataset();
    let h = env.as_user("rita@Readers", &["history", &dataset]);
    assert_eq!(h.code, 0, "{}", h.stderr);
    assert_eq!(h.json().as_array().unwrap().len(), 1);
}

#[test]
fn scenarios_run_through_the_cli() {
    let env = Env::new();
    let o = env.run(&["--json", "scenario", "run", "uc1", "uc2", "uc3", "uc4", "uc5"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.json().as_array().unwrap().len(), 5);
    let v = env.run(&["federation", "verify-chain"]);
    assert_eq!(v.code, 0, "{}", v.stdout);
}

#[test]
fn every_reachable_error_has_its_exit_code() {
    let env = Env::new();
    let (dataset, prov) = env.publish_dataset();
    let doc = env.path("doc.json").display().to_string();
    let missing = env.path("missing.csv").display().to_string();
    let bad_doc = env.write("bad.json", r#"{"created_at":"2025-01-01T00:00:00.000Z","relations":[{"kind":"used","source":"a","target":"b"}]}"#);
    let garbage = env.write("garbage.json", "not json");
    let removal = env.write("removal.json", r#"{"created_at":"2025-01-05T00:00:00.000Z","entities":[{"local_id":"dataset"}]}"#);

    let cases: Vec<(i32, Out)> = vec![
        (exit::USAGE, env.run(&["no-such-verb"])),
        (exit::USAGE, env.run(&["--config", "/nonexistent/f.json", "verify", &dataset])),
        (exit::UNAUTHORIZED, env.as_user("rita@Readers", &["publish", &missing.replace("missing", "dataset"), &doc])),
        (exit::UNKNOWN_PID, env.as_user("rita@Readers", &["verify", "21.T11148/zzz"])),
        (exit::UNKNOWN_PID, env.as_user("rita@Readers", &["trace", "21.T11148/zzz"])),
        (exit::INVALID_DOCUMENT, env.as_user("alice@OrgA", &["publish", &missing.replace("missing", "dataset"), &bad_doc])),
        (exit::INVALID_DOCUMENT, env.as_user("alice@OrgA", &["update-prov", &prov, &garbage])),
        (exit::ILLEGAL_UPDATE, env.as_user("alice@OrgA", &["update-prov", &prov, &removal])),
        (exit::IO, env.as_user("alice@OrgA", &["publish", &missing, &doc])),
        (exit::NOT_PERMITTED, env.as_user("alice@OrgA", &["invalidate", &prov, "--reason", "x"])),
        (exit::NOT_PERMITTED, env.as_user("alice@OrgA", &["update-prov", &dataset, &doc])),
        (exit::IDENTITY, env.as_user("nobody@OrgA", &["verify", &dataset])),
        (exit::ALREADY_EXISTS, env.run(&["enroll", "alice@OrgA"])),
        (exit::ALREADY_EXISTS, env.run(&["federation", "init"])),
        (exit::USAGE, env.as_user("alice@OrgA", &["grant", &prov, "--to", "bob@OrgB", "--capability", "delete"])),
    ];
    for (i, (want, out)) in cases.iter().enumerate() {
        assert_eq!(out.code, *want, "case {i}: stdout {} stderr {}", out.stdout, out.stderr);
    }
    // Errors with --json carry a structured body on stdout as well.
    let o = env.as_user("rita@Readers", &["verify", "21.T11148/zzz"]);
    assert_eq!(o.json()["kind"], "unknown-pid");
    assert!(o.stderr.contains("unknown pid"));
}

#[test]
fn tampered_artifact_verifies_as_mismatch() {
    let env = Env::new();
    let (dataset, _) = env.publish_dataset();
    let v = env.as_user("rita@Readers", &["verify", &dataset]).json();
    let uri = v["versions"][0]["uri"].as_str().unwrap();
    let rel = uri.split_once("://").unwrap().1;
    let file = env.path("data").join(rel);
    std::fs::write(&file, "tampered").unwrap();
    let o = env.as_user("rita@Readers", &["verify", &dataset]);
    assert_eq!(o.code, exit::MISMATCH, "{}", o.stdout);
    assert_eq!(o.json()["verdict"], "MISMATCH");
}

#[test]
fn verify_chain_flags_only_the_tampered_node() {
    let env = Env::new();
    env.publish_dataset();
    let ledger = env.path("state/nodes/OrgB/ledger.jsonl");
    let mut bytes = std::fs::read(&ledger).unwrap();
    let i = bytes.iter().rposition(|b| b.is_ascii_hexdigit()).unwrap();
    bytes[i] = if bytes[i] == b'0' { b'1' } else { b'0' };
    std::fs::write(&ledger, bytes).unwrap();
    let o = env.run(&["--json", "federation", "verify-chain"]);
    assert_eq!(o.code, exit::INTEGRITY);
    for node in o.json()["nodes"].as_array().unwrap() {
        assert_eq!(node["clean"].as_bool().unwrap(), node["node"] != "OrgB", "{node}");
    }
}

#[test]
fn unreachable_nodes_exit_with_their_code() {
    let env = Env::new();
    let config = env.config();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    // Ports 1..=5 on loopback have nothing listening.
    let code = run(["fedprov", "--config", config.as_str(), "--identity", "rita@Readers", "verify", "21.T11148/000001"], &mut out, &mut err);
    assert_eq!(code, exit::NODE_UNREACHABLE, "{}", String::from_utf8_lossy(&err));
    let code = run(["fedprov", "--config", config.as_str(), "federation", "status"], &mut out, &mut err);
    assert_eq!(code, exit::NODE_UNREACHABLE);
}

#[test]
fn identity_directory_from_environment() {
    let env = Env::new();
    let (dataset, _) = env.publish_dataset();
    let bin = env!("CARGO_BIN_EXE_fedprov");
    let run_bin = |dir: Option<PathBuf>| {
        let mut cmd = std::process::Command::new(bin);
        cmd.args(["--config", &env.config(), "--embedded", "verify", &dataset]);
        cmd.env_remove(fedprov::cli::IDENTITY_ENV).env_remove(fedprov::cli::IDENTITY_DIR_ENV);
        if let Some(d) = dir {
            cmd.env(fedprov::cli::IDENTITY_DIR_ENV, d);
        }
        cmd.output().unwrap()
    };
    let none = run_bin(None);
    assert_eq!(none.status.code(), Some(exit::USAGE));
    let ok = run_bin(Some(env.path("state/identities/rita@Readers")));
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("VERIFIED"));
}
