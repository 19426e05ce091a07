use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{principal, Federation, Identity, IdentityError, OrgKind, Organization, Role, UserCredentials};
use crate::crypto::{PublicKey, SecretKey};

/// Signs user certificates for one organization.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    org: String,
    kind: OrgKind,
    key: SecretKey,
}

impl CertificateAuthority {
    pub fn generate(org: impl Into<String>, kind: OrgKind) -> Self {
        CertificateAuthority { org: org.into(), kind, key: SecretKey::generate() }
    }

    pub fn organization(&self) -> Organization {
        Organization { name: self.org.clone(), kind: self.kind, ca_public_key: self.key.public_key() }
    }

    pub fn issue(&self, user_id: &str, role: Role, public_key: PublicKey) -> Result<Identity, IdentityError> {
        if (role == Role::Consumer) != (self.kind == OrgKind::ConsumerReadOnly) {
            return Err(IdentityError::RoleMismatch { org: self.org.clone(), role });
        }
        let body = Identity::certificate_body(user_id, &self.org, role, &public_key);
        Ok(Identity {
            user_id: user_id.to_string(),
            org: self.org.clone(),
            role,
            public_key,
            certificate: self.key.sign(&body),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct CaFile {
    org: String,
    kind: OrgKind,
    secret_key: String,
}

/// The federation's identity provider and certificate authorities in one
/// place: generates key pairs, issues certificates, remembers who is registered.
#[derive(Debug, Clone)]
pub struct RegistrationService {
    cas: Vec<CertificateAuthority>,
    users: BTreeMap<String, Identity>,
}

impl RegistrationService {
    pub fn new(orgs: &[(&str, OrgKind)]) -> Result<Self, IdentityError> {
        let cas: Vec<_> = orgs.iter().map(|(n, k)| CertificateAuthority::generate(*n, *k)).collect();
        let svc = RegistrationService { cas, users: BTreeMap::new() };
        Federation::new(svc.cas.iter().map(|c| c.organization()).collect())?;
        Ok(svc)
    }

    pub fn federation(&self) -> Federation {
        Federation::new(self.cas.iter().map(|c| c.organization()).collect())
            .expect("validated at construction")
    }

    fn ca(&self, org: &str) -> Result<&CertificateAuthority, IdentityError> {
        self.cas.iter().find(|c| c.org == org).ok_or_else(|| IdentityError::UnknownOrg(org.to_string()))
    }

    pub fn register_user(&mut self, org: &str, user_id: &str) -> Result<UserCredentials, IdentityError> {
        let role = match self.ca(org)?.kind {
            OrgKind::Producer => Role::Producer,
            OrgKind::ConsumerReadOnly => Role::Consumer,
        };
        self.register_user_with_role(org, user_id, role)
    }

    pub fn register_user_with_role(
        &mut self,
        org: &str,
        user_id: &str,
        role: Role,
    ) -> Result<UserCredentials, IdentityError> {
        let ca = self.ca(org)?;
        let key = principal(user_id, org);
        if self.users.contains_key(&key) {
            return Err(IdentityError::DuplicateUser(key));
        }
        let secret = SecretKey::generate();
        let identity = ca.issue(user_id, role, secret.public_key())?;
        self.users.insert(key, identity.clone());
        Ok(UserCredentials::new(identity, secret))
    }

    pub fn is_registered(&self, principal: &str) -> bool {
        self.users.contains_key(principal)
    }

    pub fn registered(&self) -> impl Iterator<Item = &Identity> {
        self.users.values()
    }

    /// Persists CA keys under `dir/ca/` and issued identities under `dir/users/`.
    pub fn save(&self, dir: &Path) -> Result<(), IdentityError> {
        let io = |e: std::io::Error| IdentityError::Storage(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir.join("ca")).map_err(io)?;
        fs::create_dir_all(dir.join("users")).map_err(io)?;
        for ca in &self.cas {
            let file = CaFile { org: ca.org.clone(), kind: ca.kind, secret_key: ca.key.to_hex() };
            let bytes = serde_json::to_vec_pretty(&file).expect("ca file serializes");
            fs::write(dir.join("ca").join(format!("{}.json", ca.org)), bytes).map_err(io)?;
        }
        for (key, identity) in &self.users {
            let bytes = serde_json::to_vec_pretty(identity).expect("identity serializes");
            fs::write(dir.join("users").join(format!("{key}.json")), bytes).map_err(io)?;
        }
        Ok(())
    }

    /// Loads a service saved by [`save`](Self::save), keeping CA order as in `org_order`.
    pub fn load(dir: &Path, org_order: &[&str]) -> Result<Self, IdentityError> {
        let storage = |p: &Path, e: &dyn std::fmt::Display| IdentityError::Storage(format!("{}: {e}", p.display()));
        let mut cas = Vec::new();
        for org in org_order {
            let path = dir.join("ca").join(format!("{org}.json"));
            let raw = fs::read(&path).map_err(|e| storage(&path, &e))?;
            let file: CaFile = serde_json::from_slice(&raw).map_err(|e| storage(&path, &e))?;
            let key = SecretKey::from_hex(&file.secret_key).map_err(|e| storage(&path, &e))?;
            cas.push(CertificateAuthority { org: file.org, kind: file.kind, key });
        }
        let mut users = BTreeMap::new();
        let users_dir = dir.join("users");
        if users_dir.is_dir() {
            for entry in fs::read_dir(&users_dir).map_err(|e| storage(&users_dir, &e))? {
                let path = entry.map_err(|e| storage(&users_dir, &e))?.path();
                let raw = fs::read(&path).map_err(|e| storage(&path, &e))?;
                let identity: Identity = serde_json::from_slice(&raw).map_err(|e| storage(&path, &e))?;
                users.insert(identity.principal(), identity);
            }
        }
        let svc = RegistrationService { cas, users };
        Federation::new(svc.cas.iter().map(|c| c.organization()).collect())?;
        Ok(svc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curator_role_in_producer_org_only() {
        let mut svc =
            RegistrationService::new(&[("OrgA", OrgKind::Producer), ("Readers", OrgKind::ConsumerReadOnly)])
                .unwrap();
        let cur = svc.register_user_with_role("OrgA", "carl", Role::Curator).unwrap();
        assert!(svc.federation().verify_identity(&cur.identity));
        assert!(matches!(
            svc.register_user_with_role("Readers", "eve", Role::Producer),
            Err(IdentityError::RoleMismatch { .. })
        ));
    }

    #[test]
    fn save_and_load_keep_trust() {
        let dir = tempfile::tempdir().unwrap();
        let mut svc =
            RegistrationService::new(&[("OrgA", OrgKind::Producer), ("Readers", OrgKind::ConsumerReadOnly)])
                .unwrap();
        svc.register_user("OrgA", "alice").unwrap();
        svc.save(dir.path()).unwrap();
        let mut back = RegistrationService::load(dir.path(), &["OrgA", "Readers"]).unwrap();
        assert_eq!(back.federation(), svc.federation());
        assert!(back.is_registered("alice@OrgA"));
        assert!(matches!(back.register_user("OrgA", "alice"), Err(IdentityError::DuplicateUser(_))));
        let bob = back.register_user("OrgA", "bob").unwrap();
        assert!(svc.federation().verify_identity(&bob.identity));
    }
}
