//! PKI identities: organizations, CA-issued user certificates, and the
//! authorization predicate used by ledger operations.
//!
//! Certificates are signed records, not X.509: a CA signature over the
//! canonical encoding of `(user-id, org, role, public-key)`. Exactly one
//! organization per federation is read-only; its members always get the
//! `consumer` role and can never pass a write check.

mod ca;
mod permission;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_bytes;
use crate::crypto::{PublicKey, SecretKey, Signature};

pub use ca::{CertificateAuthority, RegistrationService};
pub use permission::{check_auth, Capability, Permission};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrgKind {
    Producer,
    ConsumerReadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Producer,
    Curator,
    Consumer,
}

impl Role {
    /// Producers and curators are write-equivalent.
    pub fn can_write(self) -> bool {
        !matches!(self, Role::Consumer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Organization {
    pub name: String,
    pub kind: OrgKind,
    pub ca_public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Identity {
    pub user_id: String,
    pub org: String,
    pub role: Role,
    pub public_key: PublicKey,
    pub certificate: Signature,
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct CertificateBody<'a> {
    user_id: &'a str,
    org: &'a str,
    role: Role,
    public_key: &'a PublicKey,
}

impl Identity {
    pub(crate) fn certificate_body(user_id: &str, org: &str, role: Role, public_key: &PublicKey) -> Vec<u8> {
        to_canonical_bytes(&CertificateBody { user_id, org, role, public_key })
    }

    /// `user@org`, the form used in owner lists.
    pub fn principal(&self) -> String {
        principal(&self.user_id, &self.org)
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.user_id, self.org)
    }
}

pub fn principal(user_id: &str, org: &str) -> String {
    format!("{user_id}@{org}")
}

/// Splits `user@org` at the last `@`.
pub fn split_principal(principal: &str) -> Option<(&str, &str)> {
    principal.rsplit_once('@').filter(|(u, o)| !u.is_empty() && !o.is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("unknown organization `{0}`")]
    UnknownOrg(String),
    #[error("user `{0}` is already registered")]
    DuplicateUser(String),
    #[error("duplicate organization name `{0}`")]
    DuplicateOrg(String),
    #[error("a federation needs exactly one read-only organization, found {0}")]
    ReadOnlyOrgCount(usize),
    #[error("role {role:?} is not allowed in organization `{org}`")]
    RoleMismatch { org: String, role: Role },
    #[error("identity storage: {0}")]
    Storage(String),
}

/// A user's identity together with the private key it was issued for.
#[derive(Debug, Clone)]
pub struct UserCredentials {
    pub identity: Identity,
    secret: SecretKey,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct SecretFile {
    secret_key: String,
}

impl UserCredentials {
    pub fn new(identity: Identity, secret: SecretKey) -> Self {
        UserCredentials { identity, secret }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.secret.sign(message)
    }

    pub fn principal(&self) -> String {
        self.identity.principal()
    }

    /// Writes `identity.json` and `secret.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), IdentityError> {
        let io = |e: std::io::Error| IdentityError::Storage(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let identity = serde_json::to_vec_pretty(&self.identity).expect("identity serializes");
        fs::write(dir.join("identity.json"), identity).map_err(io)?;
        let secret = serde_json::to_vec_pretty(&SecretFile { secret_key: self.secret.to_hex() })
            .expect("secret serializes");
        fs::write(dir.join("secret.json"), secret).map_err(io)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IdentityError> {
        let storage = |what: &str, e: &dyn fmt::Display| {
            IdentityError::Storage(format!("{}/{what}: {e}", dir.display()))
        };
        let raw = fs::read(dir.join("identity.json")).map_err(|e| storage("identity.json", &e))?;
        let identity: Identity = serde_json::from_slice(&raw).map_err(|e| storage("identity.json", &e))?;
        let raw = fs::read(dir.join("secret.json")).map_err(|e| storage("secret.json", &e))?;
        let secret: SecretFile = serde_json::from_slice(&raw).map_err(|e| storage("secret.json", &e))?;
        let secret = SecretKey::from_hex(&secret.secret_key).map_err(|e| storage("secret.json", &e))?;
        if secret.public_key() != identity.public_key {
            return Err(storage("secret.json", &"key does not match identity"));
        }
        Ok(UserCredentials { identity, secret })
    }
}

/// The set of organizations trusted by every ledger node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Organization>", into = "Vec<Organization>")]
pub struct Federation {
    orgs: Vec<Organization>,
}

impl TryFrom<Vec<Organization>> for Federation {
    type Error = IdentityError;
    fn try_from(orgs: Vec<Organization>) -> Result<Self, Self::Error> {
        Federation::new(orgs)
    }
}

impl From<Federation> for Vec<Organization> {
    fn from(f: Federation) -> Self {
        f.orgs
    }
}

impl Federation {
    pub fn new(orgs: Vec<Organization>) -> Result<Self, IdentityError> {
        let mut seen = BTreeSet::new();
        for org in &orgs {
            if !seen.insert(org.name.as_str()) {
                return Err(IdentityError::DuplicateOrg(org.name.clone()));
            }
        }
        let read_only = orgs.iter().filter(|o| o.kind == OrgKind::ConsumerReadOnly).count();
        if read_only != 1 {
            return Err(IdentityError::ReadOnlyOrgCount(read_only));
        }
        Ok(Federation { orgs })
    }

    pub fn organizations(&self) -> &[Organization] {
        &self.orgs
    }

    pub fn org(&self, name: &str) -> Option<&Organization> {
        self.orgs.iter().find(|o| o.name == name)
    }

    pub fn producer_orgs(&self) -> impl Iterator<Item = &Organization> {
        self.orgs.iter().filter(|o| o.kind == OrgKind::Producer)
    }

    pub fn is_producer_org(&self, name: &str) -> bool {
        self.org(name).is_some_and(|o| o.kind == OrgKind::Producer)
    }

    pub fn verify_identity(&self, identity: &Identity) -> bool {
        let Some(org) = self.org(&identity.org) else {
            return false;
        };
        let role_ok = (identity.role == Role::Consumer) == (org.kind == OrgKind::ConsumerReadOnly);
        let body = Identity::certificate_body(&identity.user_id, &identity.org, identity.role, &identity.public_key);
        role_ok && org.ca_public_key.verify(&body, &identity.certificate)
    }
}

/// True iff the identity's certificate verifies under its claimed
/// organization's CA and that organization belongs to `federation`.
pub fn verify_identity(identity: &Identity, federation: &Federation) -> bool {
    federation.verify_identity(identity)
}
