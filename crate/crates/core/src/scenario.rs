//! Executable scenario scripts: JSON step lists run against a federation.
//!
//! Any string `${name}` in a step is replaced with the value bound under
//! `name` by an earlier step before the step is parsed. Publishing binds each
//! artifact PID under its `bind` name and `<bind>.checksum` to its checksum.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::digest::Digest;
use crate::federation::FederationHandle;
use crate::identity::{Capability, OrgKind, Permission, Role, UserCredentials};
use crate::ledger::Status;
use crate::lineage::{CascadeConfig, Lineage, LineageError};
use crate::pid::Pid;
use crate::prov::{ProvDocument, ProvError, ProvManager, Verdict};

const BUILTIN: [(&str, &str); 6] = [
    ("uc1", include_str!("../fixtures/scenarios/uc1.json")),
    ("uc2", include_str!("../fixtures/scenarios/uc2.json")),
    ("uc3", include_str!("../fixtures/scenarios/uc3.json")),
    ("uc4", include_str!("../fixtures/scenarios/uc4.json")),
    ("uc5", include_str!("../fixtures/scenarios/uc5.json")),
    ("experiments", include_str!("../fixtures/scenarios/experiments.json")),
];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("unknown scenario `{0}`")]
    Unknown(String),
    #[error("step {step}: {detail}")]
    Step { step: usize, detail: String },
    #[error("step {step}: expected {expected}, got {actual}")]
    Expectation { step: usize, expected: String, actual: String },
    #[error("step {step}: {source}")]
    Prov { step: usize, source: ProvError },
    #[error("step {step}: {source}")]
    Lineage { step: usize, source: LineageError },
    #[error("cannot enroll {principal}: {detail}")]
    Enrollment { principal: String, detail: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct OrgSpec {
    pub name: String,
    pub kind: OrgKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct UserSpec {
    pub org: String,
    pub id: String,
    #[serde(default)]
    pub role: Option<Role>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Organizations the scenario needs; the runner's federation must have them.
    #[serde(default)]
    pub organizations: Vec<OrgSpec>,
    pub users: Vec<UserSpec>,
    pub steps: Vec<Value>,
}

impl Scenario {
    pub fn parse(json: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(json).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let (_, raw) = BUILTIN.iter().find(|(n, _)| *n == name).ok_or_else(|| ScenarioError::Unknown(name.into()))?;
        Self::parse(raw)
    }

    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct ArtifactSpec {
    entity: String,
    content: String,
    bind: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op")]
enum Action {
    Publish {
        #[serde(rename = "as")]
        actor: String,
        artifacts: Vec<ArtifactSpec>,
        document: ProvDocument,
        bind: Option<String>,
    },
    Register {
        #[serde(rename = "as")]
        actor: String,
        content: String,
        bind: String,
    },
    Grant {
        #[serde(rename = "as")]
        actor: String,
        pid: Pid,
        to: String,
        capability: Capability,
        bind: String,
    },
    Update {
        #[serde(rename = "as")]
        actor: String,
        record: Pid,
        document: ProvDocument,
        grant: Option<String>,
        bind: Option<String>,
        class: Option<String>,
    },
    Invalidate {
        #[serde(rename = "as")]
        actor: String,
        pid: Pid,
        reason: String,
        #[serde(default)]
        cascade: bool,
        grant: Option<String>,
        affected: Option<Vec<Pid>>,
    },
    Trace {
        #[serde(rename = "as")]
        actor: String,
        pid: Pid,
        paths: Option<Vec<Vec<Pid>>>,
    },
    Iterations {
        #[serde(rename = "as")]
        actor: String,
        pid: Pid,
        artifacts: Option<Vec<Pid>>,
    },
    Verify {
        #[serde(rename = "as")]
        actor: String,
        pid: Pid,
        verdict: Option<Verdict>,
        status: Option<Status>,
        versions: Option<usize>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct Step {
    #[serde(flatten)]
    action: Action,
    /// The step must fail with an error whose message starts with this.
    #[serde(default)]
    expect_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StepReport {
    pub step: usize,
    pub op: String,
    pub result: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ScenarioReport {
    pub name: String,
    pub bindings: BTreeMap<String, String>,
    pub steps: Vec<StepReport>,
    /// World-state digest of every reachable peer after the last step.
    pub state_digests: BTreeMap<String, Digest>,
}

type Enroll<'a> = Box<dyn FnMut(&str, &str, Option<Role>) -> Result<UserCredentials, String> + 'a>;

/// Runs scenarios against one federation, remembering enrolled users so
/// several scenarios can share it.
pub struct ScenarioRunner<'a> {
    handle: &'a FederationHandle,
    enroll: Enroll<'a>,
    users: BTreeMap<String, UserCredentials>,
    cascade: CascadeConfig,
    outbox: Option<PathBuf>,
}

fn substitute(value: &Value, bindings: &BTreeMap<String, String>) -> Value {
    match value {
        Value::String(s) if s.contains("${") => {
            let mut out = s.clone();
            for (k, v) in bindings {
                out = out.replace(&format!("${{{k}}}"), v);
            }
            Value::String(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(|v| substitute(v, bindings)).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), substitute(v, bindings))).collect()),
        other => other.clone(),
    }
}

fn unresolved(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => s.find("${").map(|i| s[i..].split('}').next().unwrap_or("").to_string() + "}"),
        Value::Array(a) => a.iter().find_map(unresolved),
        Value::Object(m) => m.values().find_map(unresolved),
        _ => None,
    }
}

impl<'a> ScenarioRunner<'a> {
    pub fn new(
        handle: &'a FederationHandle,
        enroll: impl FnMut(&str, &str, Option<Role>) -> Result<UserCredentials, String> + 'a,
    ) -> Self {
        ScenarioRunner { handle, enroll: Box::new(enroll), users: BTreeMap::new(), cascade: CascadeConfig::default(), outbox: None }
    }

    pub fn with_cascade(mut self, cascade: CascadeConfig, outbox: Option<PathBuf>) -> Self {
        self.cascade = cascade;
        self.outbox = outbox;
        self
    }

    fn manager(&self, principal: &str, step: usize) -> Result<ProvManager, ScenarioError> {
        let creds = self
            .users
            .get(principal)
            .ok_or_else(|| ScenarioError::Step { step, detail: format!("`{principal}` is not a scenario user") })?;
        Ok(self.handle.manager(creds.clone()))
    }

    pub fn run(&mut self, scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
        for u in &scenario.users {
            let principal = crate::identity::principal(&u.id, &u.org);
            if !self.users.contains_key(&principal) {
                let creds = (self.enroll)(&u.org, &u.id, u.role)
                    .map_err(|detail| ScenarioError::Enrollment { principal: principal.clone(), detail })?;
                self.users.insert(principal, creds);
            }
        }
        let mut bindings = BTreeMap::new();
        let mut grants: BTreeMap<String, Permission> = BTreeMap::new();
        let mut reports = Vec::new();
        for (i, raw) in scenario.steps.iter().enumerate() {
            let step_no = i + 1;
            let value = substitute(raw, &bindings);
            if let Some(name) = unresolved(&value) {
                return Err(ScenarioError::Step { step: step_no, detail: format!("unbound placeholder {name}") });
            }
            let step: Step =
                serde_json::from_value(value).map_err(|e| ScenarioError::Step { step: step_no, detail: e.to_string() })?;
            let op = raw.get("op").and_then(Value::as_str).unwrap_or("").to_string();
            let outcome = self.execute(step_no, step.action, &mut bindings, &mut grants);
            let result = match (outcome, step.expect_error) {
                (Ok(v), None) => v,
                (Ok(v), Some(want)) => {
                    return Err(ScenarioError::Expectation { step: step_no, expected: format!("error `{want}`"), actual: v.to_string() })
                }
                (Err(e), Some(want)) => {
                    let msg = match &e {
                        ScenarioError::Prov { source, .. } => source.to_string(),
                        ScenarioError::Lineage { source, .. } => source.to_string(),
                        other => other.to_string(),
                    };
                    if !msg.starts_with(&want) {
                        return Err(ScenarioError::Expectation { step: step_no, expected: format!("error `{want}`"), actual: msg });
                    }
                    json!({ "error": msg })
                }
                (Err(e), None) => return Err(e),
            };
            reports.push(StepReport { step: step_no, op, result });
        }
        let state_digests = self.handle.peer_state_digests().into_iter().collect();
        Ok(ScenarioReport { name: scenario.name.clone(), bindings, steps: reports, state_digests })
    }

    fn execute(
        &mut self,
        step: usize,
        action: Action,
        bindings: &mut BTreeMap<String, String>,
        grants: &mut BTreeMap<String, Permission>,
    ) -> Result<Value, ScenarioError> {
        let prov = |source: ProvError| ScenarioError::Prov { step, source };
        let lineage = |source: LineageError| ScenarioError::Lineage { step, source };
        let expect = |expected: String, actual: String| -> Result<(), ScenarioError> {
            if expected == actual {
                Ok(())
            } else {
                Err(ScenarioError::Expectation { step, expected, actual })
            }
        };
        let grant_named = |name: &Option<String>| -> Result<Option<Permission>, ScenarioError> {
            match name {
                None => Ok(None),
                Some(n) => grants
                    .get(n)
                    .cloned()
                    .map(Some)
                    .ok_or_else(|| ScenarioError::Step { step, detail: format!("no grant named `{n}`") }),
            }
        };
        match action {
            Action::Publish { actor, artifacts, document, bind } => {
                let m = self.manager(&actor, step)?;
                let files: Vec<(Vec<u8>, String)> =
                    artifacts.iter().map(|a| (a.content.as_bytes().to_vec(), a.entity.clone())).collect();
                let out = m.publish(&files, document).map_err(prov)?;
                for (spec, published) in artifacts.iter().zip(&out.artifacts) {
                    bindings.insert(spec.bind.clone(), published.pid.to_string());
                    bindings.insert(format!("{}.checksum", spec.bind), published.checksum.to_hex());
                }
                if let Some(b) = bind {
                    bindings.insert(b, out.prov_pid.to_string());
                }
                Ok(serde_json::to_value(&out).expect("serializes"))
            }
            Action::Register { actor, content, bind } => {
                let m = self.manager(&actor, step)?;
                let out = m.register_artifact(content.as_bytes()).map_err(prov)?;
                bindings.insert(bind.clone(), out.pid.to_string());
                bindings.insert(format!("{bind}.checksum"), out.checksum.to_hex());
                Ok(serde_json::to_value(&out).expect("serializes"))
            }
            Action::Grant { actor, pid, to, capability, bind } => {
                let creds = self
                    .users
                    .get(&actor)
                    .ok_or_else(|| ScenarioError::Step { step, detail: format!("`{actor}` is not a scenario user") })?;
                let grant = Permission::grant(creds, pid, to, capability);
                let v = serde_json::to_value(&grant).expect("serializes");
                grants.insert(bind, grant);
                Ok(v)
            }
            Action::Update { actor, record, document, grant, bind, class } => {
                let m = self.manager(&actor, step)?;
                let out = m.atomic_update(&record, document, grant_named(&grant)?).map_err(prov)?;
                if let Some(want) = class {
                    expect(want, out.classification.to_string())?;
                }
                if let Some(b) = bind {
                    bindings.insert(b, out.new_pid.to_string());
                }
                Ok(serde_json::to_value(&out).expect("serializes"))
            }
            Action::Invalidate { actor, pid, reason, cascade, grant, affected } => {
                let m = self.manager(&actor, step)?;
                let receipt = m.invalidate(&pid, &reason, grant_named(&grant)?).map_err(prov)?;
                let mut result = json!({ "receipt": receipt });
                if cascade {
                    let l = Lineage::load(&m).map_err(lineage)?;
                    let report = l.cascade(&pid, self.cascade, self.outbox.as_deref()).map_err(lineage)?;
                    if let Some(want) = affected {
                        let mut want: Vec<String> = want.iter().map(ToString::to_string).collect();
                        want.sort();
                        let got: Vec<String> = report.statuses.keys().map(ToString::to_string).collect();
                        expect(want.join(","), got.join(","))?;
                    }
                    result["cascade"] = serde_json::to_value(&report).expect("serializes");
                }
                Ok(result)
            }
            Action::Trace { actor, pid, paths } => {
                let m = self.manager(&actor, step)?;
                let report = Lineage::load(&m).and_then(|l| l.trace(&pid)).map_err(lineage)?;
                if let Some(want) = paths {
                    let render = |ps: Vec<Vec<String>>| {
                        let mut ps: Vec<String> = ps.into_iter().map(|p| p.join(">")).collect();
                        ps.sort();
                        ps.join(" | ")
                    };
                    let want = render(want.iter().map(|p| p.iter().map(ToString::to_string).collect()).collect());
                    let got =
                        render(report.paths.iter().map(|p| p.artifacts.iter().map(ToString::to_string).collect()).collect());
                    expect(want, got)?;
                }
                Ok(serde_json::to_value(&report).expect("serializes"))
            }
            Action::Iterations { actor, pid, artifacts } => {
                let m = self.manager(&actor, step)?;
                let list = Lineage::load(&m).and_then(|l| l.iteration_history(&pid)).map_err(lineage)?;
                if let Some(want) = artifacts {
                    let want: Vec<String> = want.iter().map(ToString::to_string).collect();
                    let got: Vec<String> = list.iter().map(|i| i.artifact.to_string()).collect();
                    expect(want.join(","), got.join(","))?;
                }
                Ok(serde_json::to_value(&list).expect("serializes"))
            }
            Action::Verify { actor, pid, verdict, status, versions } => {
                let m = self.manager(&actor, step)?;
                let report = m.verify(&pid).map_err(prov)?;
                if let Some(want) = verdict {
                    expect(format!("{want:?}"), format!("{:?}", report.verdict))?;
                }
                if let Some(want) = status {
                    expect(want.to_string(), report.status.to_string())?;
                }
                if let Some(want) = versions {
                    expect(want.to_string(), report.versions.len().to_string())?;
                }
                Ok(serde_json::to_value(&report).expect("serializes"))
            }
        }
    }
}
