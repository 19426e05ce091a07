use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crypto::PublicKey;
use crate::identity::{Federation, OrgKind, Organization};
use crate::ledger::{BatchConfig, EndorsementPolicy};
use crate::lineage::CascadeConfig;
use crate::time::ClockConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {detail}")]
    Read { path: String, detail: String },
    #[error("invalid federation config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct OrgConfig {
    pub name: String,
    pub kind: OrgKind,
    pub listen_address: String,
    /// Filled in by `federation init`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ca_public_key: Option<PublicKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FederationConfig {
    pub organizations: Vec<OrgConfig>,
    #[serde(default)]
    pub endorsement_policy: EndorsementPolicy,
    pub pid_prefix: String,
    pub registry_address: String,
    pub orderer_address: String,
    pub prov_store_root: PathBuf,
    /// Defaults to `data` next to the provenance store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_store_root: Option<PathBuf>,
    /// Node ledgers, the registry, identities and journals. Defaults to
    /// `state` next to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dir: Option<PathBuf>,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub batch: BatchConfig,
}

impl FederationConfig {
    /// A loopback federation with the given organizations, ports counted up
    /// from `base_port` and all storage under `root`.
    pub fn loopback(orgs: &[(&str, OrgKind)], base_port: u16, root: &Path) -> Self {
        let addr = |i: usize| format!("127.0.0.1:{}", base_port as usize + i);
        FederationConfig {
            organizations: orgs
                .iter()
                .enumerate()
                .map(|(i, (name, kind))| OrgConfig {
                    name: name.to_string(),
                    kind: *kind,
                    listen_address: addr(i),
                    ca_public_key: None,
                })
                .collect(),
            endorsement_policy: EndorsementPolicy::default(),
            pid_prefix: "21.T11148".into(),
            registry_address: addr(orgs.len()),
            orderer_address: addr(orgs.len() + 1),
            prov_store_root: root.join("prov"),
            data_store_root: Some(root.join("data")),
            state_dir: Some(root.join("state")),
            clock: ClockConfig::default(),
            cascade: CascadeConfig::default(),
            batch: BatchConfig::default(),
        }
    }

    /// Reads and validates a config; relative paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = fs::read(path).map_err(|e| ConfigError::Read { path: path.display().to_string(), detail: e.to_string() })?;
        let mut config: FederationConfig =
            serde_json::from_slice(&raw).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        config.prov_store_root = base.join(&config.prov_store_root);
        config.data_store_root = Some(base.join(config.data_store_root.clone().unwrap_or_else(|| {
            config.prov_store_root.parent().map(|p| p.join("data")).unwrap_or_else(|| PathBuf::from("data"))
        })));
        config.state_dir = Some(base.join(config.state_dir.clone().unwrap_or_else(|| PathBuf::from("state"))));
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        fs::write(path, bytes).map_err(|e| ConfigError::Read { path: path.display().to_string(), detail: e.to_string() })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut names = BTreeSet::new();
        for org in &self.organizations {
            if org.name.is_empty() || org.name.contains(['/', '\\', '@']) {
                return Err(ConfigError::Invalid(format!("bad organization name `{}`", org.name)));
            }
            if !names.insert(org.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate organization `{}`", org.name)));
            }
        }
        let read_only = self.organizations.iter().filter(|o| o.kind == OrgKind::ConsumerReadOnly).count();
        if read_only != 1 {
            return Err(ConfigError::Invalid(format!("exactly one read-only organization required, found {read_only}")));
        }
        let mut addresses = BTreeSet::new();
        let all = self
            .organizations
            .iter()
            .map(|o| o.listen_address.as_str())
            .chain([self.registry_address.as_str(), self.orderer_address.as_str()]);
        for a in all {
            if !addresses.insert(a) {
                return Err(ConfigError::Invalid(format!("address {a} is used twice")));
            }
        }
        if self.pid_prefix.is_empty() || self.pid_prefix.contains('/') {
            return Err(ConfigError::Invalid(format!("bad pid prefix `{}`", self.pid_prefix)));
        }
        Ok(())
    }

    /// The trusted organizations; requires every CA key to be set.
    pub fn federation(&self) -> Result<Federation, ConfigError> {
        let orgs = self
            .organizations
            .iter()
            .map(|o| {
                let key = o.ca_public_key.ok_or_else(|| {
                    ConfigError::Invalid(format!("organization `{}` has no CA key; run `federation init`", o.name))
                })?;
                Ok(Organization { name: o.name.clone(), kind: o.kind, ca_public_key: key })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        Federation::new(orgs).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn org_names(&self) -> Vec<&str> {
        self.organizations.iter().map(|o| o.name.as_str()).collect()
    }

    pub fn state_dir(&self) -> PathBuf {
        self.state_dir.clone().unwrap_or_else(|| PathBuf::from("state"))
    }

    pub fn data_store_root(&self) -> PathBuf {
        self.data_store_root.clone().unwrap_or_else(|| self.prov_store_root.with_file_name("data"))
    }

    pub fn node_ledger_path(&self, node: &str) -> PathBuf {
        self.state_dir().join("nodes").join(node).join("ledger.jsonl")
    }

    pub fn registry_dir(&self) -> PathBuf {
        self.state_dir().join("registry")
    }

    pub fn identity_dir(&self, principal: &str) -> PathBuf {
        self.state_dir().join("identities").join(principal)
    }

    pub fn outbox_dir(&self) -> PathBuf {
        self.state_dir().join("outbox")
    }

    pub fn journal_dir(&self, principal: &str) -> PathBuf {
        self.state_dir().join("journal").join(principal)
    }
}
