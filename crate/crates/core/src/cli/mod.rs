//! The `fedprov` command-line client.
//!
//! Machine output goes to stdout (JSON with `--json`, short text otherwise);
//! diagnostics go to stderr. See [`exit`] for the exit codes.

mod error;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

pub use error::{exit, CliError};

use crate::federation::{self, FederationConfig, FederationHandle};
use crate::identity::{principal, split_principal, Capability, OrgKind, Permission, Role, UserCredentials};
use crate::ledger::{read_blocks, verify_chain, Replica};
use crate::lineage::Lineage;
use crate::pid::Pid;
use crate::prov::{ProvDocument, ProvManager, Verdict};
use crate::scenario::{Scenario, ScenarioRunner};

/// Names an identity directory directly, overriding `--identity`.
pub const IDENTITY_DIR_ENV: &str = "FEDPROV_IDENTITY_DIR";
/// Default for `--identity` (`user@org`).
pub const IDENTITY_ENV: &str = "FEDPROV_IDENTITY";

#[derive(Debug, Parser)]
#[command(name = "fedprov", version, about = "Federated provenance client and node harness")]
pub struct Cli {
    /// Federation config file [env: FEDPROV_CONFIG, default: federation.json]
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Acting identity as user@org [env: FEDPROV_IDENTITY]
    #[arg(long, global = true)]
    pub identity: Option<String>,
    /// Print JSON on stdout
    #[arg(long, global = true)]
    pub json: bool,
    /// Open the node files in this process instead of connecting to running nodes
    #[arg(long, global = true)]
    pub embedded: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Store an artifact and its provenance document and mint PIDs for both
    Publish {
        file: PathBuf,
        document: PathBuf,
        /// Document entity the file is bound to [default: file stem]
        #[arg(long)]
        entity: Option<String>,
        /// Further artifacts as FILE=ENTITY
        #[arg(long = "also", value_name = "FILE=ENTITY")]
        also: Vec<String>,
    },
    /// Store an artifact and mint its PID without a provenance document
    Register { file: PathBuf },
    /// Issue a new version of a provenance record
    UpdateProv {
        pid: Pid,
        document: PathBuf,
        /// Permission file from `grant`
        #[arg(long)]
        grant: Option<PathBuf>,
    },
    /// Recompute checksums and compare them with the registry and the ledger
    Verify { pid: Pid },
    /// Mark an artifact invalid
    Invalidate {
        pid: Pid,
        #[arg(long)]
        reason: String,
        /// Flag every downstream artifact
        #[arg(long)]
        cascade: bool,
        #[arg(long)]
        grant: Option<PathBuf>,
    },
    /// List every lineage path from an artifact back to its sources
    Trace {
        pid: Pid,
        /// Print the whole derivation graph as Graphviz instead
        #[arg(long)]
        dot: bool,
    },
    /// List the iterations of an artifact along its derivation chain
    History { pid: Pid },
    /// Sign a permission for another user on a PID you own
    Grant {
        pid: Pid,
        #[arg(long)]
        to: String,
        /// update-provenance or invalidate-artifact
        #[arg(long)]
        capability: String,
        /// Write the permission here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Issue an identity for user@org and store it in the state directory
    Enroll {
        user: String,
        /// producer, curator or consumer [default: by organization kind]
        #[arg(long)]
        role: Option<String>,
    },
    /// Manage the federation's nodes
    Federation {
        #[command(subcommand)]
        action: FederationAction,
    },
    /// Run scenario scripts
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum FederationAction {
    /// Create keys, node identities and genesis blocks; writes a loopback config if none exists
    Init {
        /// NAME:KIND pairs for a new config, KIND one of producer, consumer-read-only
        #[arg(long, value_delimiter = ',')]
        orgs: Vec<String>,
        /// First loopback port for a new config
        #[arg(long, default_value_t = 7050)]
        base_port: u16,
    },
    /// Run one node (an organization, `orderer` or `registry`) until killed
    StartNode {
        #[arg(long)]
        node: String,
    },
    /// Verify every node's ledger file and compare state digests
    VerifyChain,
    /// Heights and digests reported by each peer
    Status,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioAction {
    /// Run built-in scenarios by name or script files by path
    Run {
        #[arg(required = true)]
        scenarios: Vec<String>,
    },
    /// List the built-in scenarios
    List,
}

struct Reply {
    body: Value,
    text: String,
    code: i32,
}

impl Reply {
    fn ok(body: Value, text: impl Into<String>) -> Self {
        Reply { body, text: text.into(), code: exit::OK }
    }
}

struct Ctx {
    config_path: PathBuf,
    identity: Option<String>,
    embedded: bool,
}

impl Ctx {
    fn config(&self) -> Result<FederationConfig, CliError> {
        Ok(FederationConfig::load(&self.config_path)?)
    }

    fn handle(&self, config: &FederationConfig) -> Result<FederationHandle, CliError> {
        if self.embedded {
            Ok(federation::open_embedded(config)?)
        } else {
            Ok(federation::connect(config)?)
        }
    }

    fn credentials(&self, config: &FederationConfig) -> Result<UserCredentials, CliError> {
        let dir = match (std::env::var_os(IDENTITY_DIR_ENV), &self.identity) {
            (_, Some(p)) => config.identity_dir(p),
            (Some(dir), None) => PathBuf::from(dir),
            (None, None) => {
                return Err(CliError::usage(format!("no identity: pass --identity user@org or set {IDENTITY_DIR_ENV}")))
            }
        };
        UserCredentials::load(&dir).map_err(|e| CliError::new(exit::IDENTITY, format!("{}: {e}", dir.display())))
    }

    fn manager(&self) -> Result<(FederationConfig, ProvManager), CliError> {
        let config = self.config()?;
        let creds = self.credentials(&config)?;
        let journal = config.journal_dir(&creds.principal());
        let handle = self.handle(&config)?;
        Ok((config, handle.manager(creds).with_journal(journal)))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path.display(), e))
}

fn read_document(path: &Path) -> Result<ProvDocument, CliError> {
    let raw = read_file(path)?;
    serde_json::from_slice(&raw)
        .map_err(|e| CliError::new(exit::INVALID_DOCUMENT, format!("invalid document: {}: {e}", path.display())))
}

fn read_grant(path: &Option<PathBuf>) -> Result<Option<Permission>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let raw = read_file(path)?;
    serde_json::from_slice(&raw)
        .map(Some)
        .map_err(|e| CliError::usage(format!("{} is not a permission: {e}", path.display())))
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| CliError::usage(format!("unknown {what} `{s}`")))
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reply serializes")
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let rendered = e.render().to_string();
            let _ = if code == exit::OK { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let ctx = Ctx {
        config_path: cli.config.clone().unwrap_or_else(federation::default_config_path),
        identity: cli.identity.clone().or_else(|| std::env::var(IDENTITY_ENV).ok()),
        embedded: cli.embedded,
    };
    let result = dispatch(&ctx, cli.command, out, err);
    match result {
        Ok(reply) => {
            let _ = if cli.json {
                writeln!(out, "{}", reply.body)
            } else {
                writeln!(out, "{}", reply.text.trim_end())
            };
            reply.code
        }
        Err(e) => {
            let _ = writeln!(err, "fedprov: {e}");
            if cli.json {
                let _ = writeln!(out, "{}", json!({ "error": e.message, "code": e.code, "kind": exit::name(e.code) }));
            }
            e.code
        }
    }
}

fn dispatch(ctx: &Ctx, command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<Reply, CliError> {
    match command {
        Command::Publish { file, document, entity, also } => publish(ctx, file, document, entity, also),
        Command::Register { file } => {
            let (_, m) = ctx.manager()?;
            let a = m.register_artifact(&read_file(&file)?)?;
            Ok(Reply::ok(to_json(&a), format!("{}  {}", a.pid, a.checksum)))
        }
        Command::UpdateProv { pid, document, grant } => {
            let (_, m) = ctx.manager()?;
            let doc = read_document(&document)?;
            let grant = read_grant(&grant)?;
            m.recover()?;
            let o = m.atomic_update(&pid, doc, grant)?;
            let text = format!(
                "old {}\nnew {}\nversion {}\nclass {}\ntx {} at height {}",
                o.old_pid, o.new_pid, o.version, o.classification, o.tx_id, o.height
            );
            Ok(Reply::ok(to_json(&o), text))
        }
        Command::Verify { pid } => {
            let (_, m) = ctx.manager()?;
            let r = m.verify(&pid)?;
            let verdict = match r.verdict {
                Verdict::Verified => "VERIFIED",
                Verdict::Mismatch => "MISMATCH",
            };
            let mut text = format!("{verdict} {} status={} ledger-version={}", r.pid, r.status, r.ledger_version);
            for v in &r.versions {
                text.push_str(&format!("\n  v{} {} {}", v.version, v.pid, v.uri));
            }
            for p in &r.problems {
                text.push_str(&format!("\n  problem: {p}"));
            }
            let code = if r.verdict == Verdict::Verified { exit::OK } else { exit::MISMATCH };
            Ok(Reply { body: to_json(&r), text, code })
        }
        Command::Invalidate { pid, reason, cascade, grant } => {
            let (config, m) = ctx.manager()?;
            let receipt = m.invalidate(&pid, &reason, read_grant(&grant)?)?;
            let mut body = json!({ "pid": pid, "receipt": receipt });
            let mut text = format!("invalidated {pid}");
            if cascade {
                let lineage = Lineage::load(&m)?;
                let outbox = config.outbox_dir();
                let report = lineage.cascade(&pid, config.cascade, Some(&outbox))?;
                for (p, s) in &report.statuses {
                    text.push_str(&format!("\n  {s} {p}"));
                }
                body["cascade"] = to_json(&report);
            }
            Ok(Reply::ok(body, text))
        }
        Command::Trace { pid, dot } => {
            let (_, m) = ctx.manager()?;
            let lineage = Lineage::load(&m)?;
            if dot {
                if !lineage.graph().contains(&pid) {
                    return Err(CliError::new(exit::UNKNOWN_PID, format!("unknown pid `{pid}`")));
                }
                let dot = lineage.graph().to_dot();
                return Ok(Reply::ok(json!({ "pid": pid, "dot": dot }), dot));
            }
            let r = lineage.trace(&pid)?;
            let text = r
                .paths
                .iter()
                .map(|p| p.artifacts.iter().map(ToString::to_string).collect::<Vec<_>>().join(" -> "))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Reply::ok(to_json(&r), text))
        }
        Command::History { pid } => {
            let (_, m) = ctx.manager()?;
            let list = Lineage::load(&m)?.iteration_history(&pid)?;
            let text = list
                .iter()
                .map(|i| format!("{} {} {}", i.iteration, i.artifact, i.status))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Reply::ok(to_json(&list), text))
        }
        Command::Grant { pid, to, capability, out: path } => {
            let config = ctx.config()?;
            let creds = ctx.credentials(&config)?;
            if split_principal(&to).is_none() {
                return Err(CliError::usage(format!("grantee `{to}` is not user@org")));
            }
            let capability: Capability = parse_enum("capability", &capability)?;
            let grant = Permission::grant(&creds, pid, to, capability);
            let body = to_json(&grant);
            if let Some(p) = path {
                let bytes = serde_json::to_vec_pretty(&grant).expect("permission serializes");
                std::fs::write(&p, bytes).map_err(|e| CliError::io(p.display(), e))?;
                return Ok(Reply::ok(body, format!("wrote {}", p.display())));
            }
            let text = serde_json::to_string_pretty(&grant).expect("permission serializes");
            Ok(Reply::ok(body, text))
        }
        Command::Enroll { user, role } => enroll(ctx, &user, role.as_deref()),
        Command::Federation { action } => federation_cmd(ctx, action, err),
        Command::Scenario { action } => scenario_cmd(ctx, action, out),
    }
}

fn publish(
    ctx: &Ctx,
    file: PathBuf,
    document: PathBuf,
    entity: Option<String>,
    also: Vec<String>,
) -> Result<Reply, CliError> {
    let doc = read_document(&document)?;
    let first_entity = match entity {
        Some(e) => e,
        None => file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::usage("cannot derive an entity name; pass --entity"))?,
    };
    let mut files = vec![(read_file(&file)?, first_entity)];
    for spec in also {
        let (f, e) = spec.split_once('=').ok_or_else(|| CliError::usage(format!("--also `{spec}` is not FILE=ENTITY")))?;
        files.push((read_file(Path::new(f))?, e.to_string()));
    }
    let (_, m) = ctx.manager()?;
    let o = m.publish(&files, doc)?;
    let mut text = String::new();
    for a in &o.artifacts {
        text.push_str(&format!("artifact {} {}\n", a.pid, a.entity));
    }
    text.push_str(&format!("provenance {}", o.prov_pid));
    Ok(Reply::ok(to_json(&o), text))
}

fn enroll(ctx: &Ctx, user: &str, role: Option<&str>) -> Result<Reply, CliError> {
    let config = ctx.config()?;
    let (id, org) = split_principal(user).ok_or_else(|| CliError::usage(format!("`{user}` is not user@org")))?;
    let mut registration = federation::load_registration(&config)?;
    let creds = match role {
        Some(r) => registration.register_user_with_role(org, id, parse_enum::<Role>("role", r)?)?,
        None => registration.register_user(org, id)?,
    };
    let dir = config.identity_dir(&creds.principal());
    creds.save(&dir)?;
    registration.save(&config.state_dir().join("pki"))?;
    let body = json!({ "principal": creds.principal(), "role": creds.identity.role, "directory": dir });
    Ok(Reply::ok(body, format!("enrolled {} in {}", creds.principal(), dir.display())))
}

fn new_config(ctx: &Ctx, orgs: &[String], base_port: u16) -> Result<FederationConfig, CliError> {
    let specs = if orgs.is_empty() {
        vec!["OrgA:producer".to_string(), "OrgB:producer".into(), "Readers:consumer-read-only".into()]
    } else {
        orgs.to_vec()
    };
    let mut parsed = Vec::new();
    for s in &specs {
        let (name, kind) = s.split_once(':').unwrap_or((s, "producer"));
        parsed.push((name.to_string(), parse_enum::<OrgKind>("organization kind", kind)?));
    }
    let borrowed: Vec<(&str, OrgKind)> = parsed.iter().map(|(n, k)| (n.as_str(), *k)).collect();
    let mut config = FederationConfig::loopback(&borrowed, base_port, Path::new(""));
    config.prov_store_root = PathBuf::from("prov");
    config.data_store_root = None;
    config.state_dir = None;
    config.validate()?;
    config.save(&ctx.config_path)?;
    Ok(FederationConfig::load(&ctx.config_path)?)
}

fn federation_cmd(ctx: &Ctx, action: FederationAction, err: &mut dyn Write) -> Result<Reply, CliError> {
    match action {
        FederationAction::Init { orgs, base_port } => {
            let mut config = if ctx.config_path.exists() {
                if !orgs.is_empty() {
                    return Err(CliError::usage("--orgs only applies when the config file does not exist yet"));
                }
                ctx.config()?
            } else {
                new_config(ctx, &orgs, base_port)?
            };
            if config.state_dir().join("pki").exists() {
                return Err(CliError::new(exit::ALREADY_EXISTS, format!("{} is already initialized", config.state_dir().display())));
            }
            federation::init_state(&mut config)?;
            // Persist the CA keys without baking the resolved absolute paths into the file.
            let mut on_disk: FederationConfig = serde_json::from_slice(&read_file(&ctx.config_path)?)
                .map_err(|e| CliError::usage(format!("{}: {e}", ctx.config_path.display())))?;
            on_disk.organizations = config.organizations.clone();
            on_disk.save(&ctx.config_path)?;
            let nodes: Vec<String> = config.org_names().into_iter().map(str::to_string).chain(["orderer".into()]).collect();
            let body = json!({ "config": ctx.config_path, "state-dir": config.state_dir(), "nodes": nodes });
            Ok(Reply::ok(body, format!("initialized {} nodes under {}", nodes.len(), config.state_dir().display())))
        }
        FederationAction::StartNode { node } => {
            let config = ctx.config()?;
            let server = federation::start_node(&config, &node)?;
            let _ = writeln!(err, "fedprov: {node} listening on {}", server.local_addr());
            let _ = err.flush();
            server.wait();
            Ok(Reply::ok(json!({ "node": node, "stopped": true }), format!("{node} stopped")))
        }
        FederationAction::VerifyChain => verify_chains(ctx),
        FederationAction::Status => {
            let config = ctx.config()?;
            let handle = ctx.handle(&config)?;
            let mut rows = Vec::new();
            let mut text = String::new();
            let mut digests = std::collections::BTreeSet::new();
            let mut unreachable = 0;
            for (node, status) in handle.node_statuses() {
                match status {
                    Ok(s) => {
                        text.push_str(&format!("{node}: height {} state {}\n", s.height, s.state_digest));
                        digests.insert(s.state_digest);
                        rows.push(json!({ "node": node, "status": s }));
                    }
                    Err(e) => {
                        unreachable += 1;
                        text.push_str(&format!("{node}: {e}\n"));
                        rows.push(json!({ "node": node, "error": e.to_string() }));
                    }
                }
            }
            let agree = digests.len() <= 1;
            text.push_str(if agree { "digests agree" } else { "digests DIFFER" });
            let code = if unreachable > 0 {
                exit::NODE_UNREACHABLE
            } else if !agree {
                exit::MISMATCH
            } else {
                exit::OK
            };
            Ok(Reply { body: json!({ "nodes": rows, "agree": agree }), text, code })
        }
    }
}

fn verify_chains(ctx: &Ctx) -> Result<Reply, CliError> {
    let config = ctx.config()?;
    let fed = Arc::new(config.federation()?);
    let mut rows = Vec::new();
    let mut text = String::new();
    let mut peer_digests = BTreeMap::new();
    let mut faulty = 0;
    let nodes = config.org_names().into_iter().map(str::to_string).chain(["orderer".to_string()]);
    for node in nodes {
        let path = config.node_ledger_path(&node);
        let blocks = match read_blocks(&path) {
            Ok(b) => b,
            Err(e) => {
                faulty += 1;
                text.push_str(&format!("{node}: unreadable: {e}\n"));
                rows.push(json!({ "node": node, "clean": false, "error": e.to_string() }));
                continue;
            }
        };
        let report = verify_chain(&blocks, Some(&fed));
        let mut row = json!({ "node": node, "clean": report.is_clean(), "report": report });
        if let Some(f) = &report.first_fault {
            faulty += 1;
            text.push_str(&format!("{node}: FAULT at height {}: {:?} {}\n", f.height, f.kind, f.detail));
        } else {
            let mut replica = Replica::new(fed.clone(), config.endorsement_policy);
            for b in blocks.into_iter().skip(1) {
                replica.append(b)?;
            }
            let digest = replica.state().digest();
            text.push_str(&format!("{node}: clean, {} blocks, state {digest}\n", replica.height()));
            row["state-digest"] = to_json(&digest);
            peer_digests.insert(node.clone(), digest);
        }
        rows.push(row);
    }
    let distinct: std::collections::BTreeSet<_> = peer_digests.values().collect();
    let agree = distinct.len() <= 1;
    text.push_str(if agree { "state digests agree" } else { "state digests DIFFER" });
    let code = if faulty > 0 {
        exit::INTEGRITY
    } else if !agree {
        exit::MISMATCH
    } else {
        exit::OK
    };
    Ok(Reply { body: json!({ "nodes": rows, "agree": agree }), text, code })
}

fn load_scenario(name: &str) -> Result<Scenario, CliError> {
    if Scenario::builtin_names().contains(&name) {
        return Scenario::builtin(name).map_err(|e| CliError::new(exit::INTERNAL, e.to_string()));
    }
    let raw = std::fs::read_to_string(name).map_err(|e| CliError::io(name, e))?;
    Scenario::parse(&raw).map_err(|e| CliError::usage(format!("{name}: {e}")))
}

fn scenario_cmd(ctx: &Ctx, action: ScenarioAction, _out: &mut dyn Write) -> Result<Reply, CliError> {
    let names = match action {
        ScenarioAction::List => {
            let names = Scenario::builtin_names();
            let mut text = String::new();
            for n in &names {
                let s = Scenario::builtin(n).map_err(|e| CliError::new(exit::INTERNAL, e.to_string()))?;
                text.push_str(&format!("{n}: {}\n", s.description));
            }
            return Ok(Reply::ok(json!(names), text));
        }
        ScenarioAction::Run { scenarios } => scenarios,
    };
    let scripts = names.iter().map(|n| load_scenario(n)).collect::<Result<Vec<_>, _>>()?;
    let config = ctx.config()?;
    let handle = ctx.handle(&config)?;
    let mut registration = federation::load_registration(&config)?;
    let mut reports = Vec::new();
    {
        let cfg = &config;
        let reg = &mut registration;
        let enroll = move |org: &str, id: &str, role: Option<Role>| -> Result<UserCredentials, String> {
            let p = principal(id, org);
            let dir = cfg.identity_dir(&p);
            if reg.is_registered(&p) {
                return UserCredentials::load(&dir).map_err(|e| e.to_string());
            }
            let creds = match role {
                Some(r) => reg.register_user_with_role(org, id, r),
                None => reg.register_user(org, id),
            }
            .map_err(|e| e.to_string())?;
            creds.save(&dir).map_err(|e| e.to_string())?;
            Ok(creds)
        };
        let mut runner = ScenarioRunner::new(&handle, enroll).with_cascade(config.cascade, Some(config.outbox_dir()));
        for s in &scripts {
            let result = runner.run(s);
            match result {
                Ok(r) => reports.push(r),
                Err(e) => {
                    drop(runner);
                    let _ = registration.save(&config.state_dir().join("pki"));
                    return Err(CliError::new(exit::MISMATCH, format!("scenario {}: {e}", s.name)));
                }
            }
        }
    }
    registration.save(&config.state_dir().join("pki"))?;
    let mut text = String::new();
    for r in &reports {
        let digests: std::collections::BTreeSet<_> = r.state_digests.values().collect();
        let d = digests.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        text.push_str(&format!("{}: {} steps passed, state {d}\n", r.name, r.steps.len()));
    }
    Ok(Reply::ok(to_json(&reports), text))
}
