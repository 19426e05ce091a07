use serde::{Deserialize, Serialize};

use super::{Federation, Identity, UserCredentials};
use crate::canonical::to_canonical_bytes;
use crate::crypto::Signature;
use crate::pid::Pid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capability {
    UpdateProvenance,
    InvalidateArtifact,
}

/// An owner's signed grant letting `grantee` exercise `capability` on `subject`.
/// Grants do not expire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Permission {
    pub subject: Pid,
    pub grantee: String,
    pub capability: Capability,
    pub grantor: Identity,
    pub signature: Signature,
}

#[derive(Serialize)]
struct GrantBody<'a> {
    subject: &'a Pid,
    grantee: &'a str,
    capability: Capability,
    grantor: &'a Identity,
}

impl Permission {
    pub fn grant(grantor: &UserCredentials, subject: Pid, grantee: impl Into<String>, capability: Capability) -> Self {
        let grantee = grantee.into();
        let body = to_canonical_bytes(&GrantBody {
            subject: &subject,
            grantee: &grantee,
            capability,
            grantor: &grantor.identity,
        });
        Permission { signature: grantor.sign(&body), subject, grantee, capability, grantor: grantor.identity.clone() }
    }

    pub fn signature_valid(&self) -> bool {
        let body = to_canonical_bytes(&GrantBody {
            subject: &self.subject,
            grantee: &self.grantee,
            capability: self.capability,
            grantor: &self.grantor,
        });
        self.grantor.public_key.verify(&body, &self.signature)
    }
}

/// Authorization check for write operations on `pid`.
///
/// `owners` is the current owner list, or `None` when the subject does not
/// exist yet. In that case only the caller's role is checked, so the
/// not-found outcome stays observable to writers. Consumer-role callers are
/// always refused, grants or not.
pub fn check_auth(
    pid: &Pid,
    permission: Option<&Permission>,
    caller: &Identity,
    owners: Option<&[String]>,
    capability: Capability,
    federation: &Federation,
) -> bool {
    if !federation.verify_identity(caller) || !caller.role.can_write() {
        return false;
    }
    let Some(owners) = owners else {
        return true;
    };
    let me = caller.principal();
    if owners.contains(&me) {
        return true;
    }
    permission.is_some_and(|grant| {
        grant.subject == *pid
            && grant.grantee == me
            && grant.capability == capability
            && grant.grantor.role.can_write()
            && owners.iter().any(|o| *o == grant.grantor.principal())
            && federation.verify_identity(&grant.grantor)
            && grant.signature_valid()
    })
}
