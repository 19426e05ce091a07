//! Handle-style persistent identifiers and the registry that mints and resolves them.
//!
//! Every provenance-record version gets its own PID. Versions of one record are
//! chained through `predecessor`/`successor` links on the [`PidRecord`]s, so the
//! full history can be recovered from any member of the chain.

mod registry;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::Signature;
use crate::digest::Digest;
use crate::identity::{Identity, Permission, UserCredentials};
use crate::canonical::to_canonical_bytes;

pub use registry::PidRegistry;

/// `prefix/suffix`, e.g. `21.P/000001`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pid {
    prefix: String,
    suffix: String,
}

impl Pid {
    pub fn new(prefix: impl Into<String>, suffix: impl Into<String>) -> Result<Self, PidError> {
        let (prefix, suffix) = (prefix.into(), suffix.into());
        if prefix.is_empty() || suffix.is_empty() || prefix.contains('/') {
            return Err(PidError::UnknownPid(format!("{prefix}/{suffix}")));
        }
        Ok(Pid { prefix, suffix })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }
}

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.prefix, self.suffix)
    }
}

impl fmt::Debug for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pid({self})")
    }
}

impl FromStr for Pid {
    type Err = PidError;

    /// Text without a `/` separator cannot name anything, so it maps to
    /// [`PidError::UnknownPid`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((prefix, suffix)) => Pid::new(prefix, suffix),
            None => Err(PidError::UnknownPid(s.to_string())),
        }
    }
}

impl Serialize for Pid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    Artifact,
    ProvenanceRecord,
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectKind::Artifact => "artifact",
            ObjectKind::ProvenanceRecord => "provenance-record",
        })
    }
}

/// Metadata key holding the owning principal (`user@org`).
pub const META_OWNER: &str = "owner";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PidRecord {
    pub pid: Pid,
    pub target_uri: String,
    pub checksum: Option<Digest>,
    pub object_kind: ObjectKind,
    pub version_number: u64,
    pub predecessor: Option<Pid>,
    pub successor: Option<Pid>,
    pub metadata: BTreeMap<String, String>,
}

impl PidRecord {
    pub fn owner(&self) -> Option<&str> {
        self.metadata.get(META_OWNER).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "error", content = "detail")]
pub enum PidError {
    #[error("unknown pid `{0}`")]
    UnknownPid(String),
    #[error("pid `{0}` already has a successor")]
    SuccessorExists(String),
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
    #[error("caller is not authorized for `{0}`")]
    Unauthorized(String),
    #[error("broken version chain: `{0}` does not resolve")]
    BrokenChain(String),
    #[error("target of `{0}` is already set")]
    TargetAlreadySet(String),
    #[error("registry unavailable: {0}")]
    RegistryUnavailable(String),
}

/// A signed request to append `new` to the version chain ending at `old`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRequest {
    pub old: Pid,
    pub new: Pid,
    pub caller: Identity,
    pub permission: Option<Permission>,
    pub signature: Signature,
}

#[derive(Serialize)]
struct LinkBody<'a> {
    op: &'a str,
    old: &'a Pid,
    new: &'a Pid,
    caller: &'a Identity,
}

impl LinkRequest {
    pub fn sign(creds: &UserCredentials, old: Pid, new: Pid, permission: Option<Permission>) -> Self {
        let signature = creds.sign(&Self::body("link", &old, &new, &creds.identity));
        LinkRequest { old, new, caller: creds.identity.clone(), permission, signature }
    }

    fn body(op: &str, old: &Pid, new: &Pid, caller: &Identity) -> Vec<u8> {
        to_canonical_bytes(&LinkBody { op, old, new, caller })
    }

    pub fn signature_valid(&self) -> bool {
        self.caller
            .public_key
            .verify(&Self::body("link", &self.old, &self.new, &self.caller), &self.signature)
    }
}

/// The PID service contract, served locally by [`PidRegistry`] or remotely
/// over the node transport.
pub trait PidService: Send + Sync {
    fn mint(
        &self,
        kind: ObjectKind,
        target_uri: &str,
        checksum: Option<Digest>,
        owner: &str,
    ) -> Result<PidRecord, PidError>;

    fn resolve(&self, pid: &Pid) -> Result<PidRecord, PidError>;

    fn link_new_version(&self, request: &LinkRequest) -> Result<(), PidError>;

    fn version_history(&self, pid: &Pid) -> Result<Vec<PidRecord>, PidError>;

    /// Undo a link made by `request`. Only valid while `request.new` is still
    /// the newest version.
    fn revert_link(&self, request: &LinkRequest) -> Result<(), PidError>;

    /// Drop a freshly minted, unlinked PID. The newest mint is removed outright
    /// and its suffix reused; older ones are flagged `orphaned` instead.
    fn discard(&self, pid: &Pid, caller: &Identity) -> Result<(), PidError>;

    /// Fill the target of a PID minted with an empty URI.
    fn fill_target(&self, pid: &Pid, uri: &str, checksum: Digest, caller: &Identity) -> Result<PidRecord, PidError>;

    fn state_digest(&self) -> Result<Digest, PidError>;
}
