//! The provenance chaincode. Pure functions of the world state and a proposal;
//! every endorsing peer runs the same simulation and signs the result.

use serde::{Deserialize, Serialize};

use super::state::WorldState;
use super::types::{ChaincodeOp, LedgerValue, Proposal, ReadEntry, SimulationResult, Status, WriteEntry};
use crate::identity::{check_auth, Capability, Federation};
use crate::pid::ObjectKind;

pub const MSG_CREATED: &str = "Success: Resource created successfully";
pub const MSG_UPDATED: &str = "Success: Resource updated successfully";
pub const MSG_INVALIDATED: &str = "Success: Resource invalidated successfully";
pub const MSG_FLAGGED: &str = "Success: Resource status flagged";
pub const MSG_UNCHANGED: &str = "Success: Resource status unchanged";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "error", content = "detail")]
pub enum ChaincodeError {
    #[error("Error: Unauthorized user")]
    Unauthorized,
    #[error("Error: Resource not found")]
    NotFound,
    #[error("Error: Resource already exists")]
    AlreadyExists,
    /// Artifacts have no update operation.
    #[error("Error: Artifacts cannot be updated")]
    ArtifactUpdateRejected,
    /// Provenance records have no delete operation.
    #[error("Error: Provenance records cannot be deleted")]
    ProvDeleteRejected,
    #[error("Error: Cascade cause is not invalidated")]
    CauseNotInvalidated,
    #[error("Error: Invalid argument: {0}")]
    InvalidArgument(String),
}

fn read(state: &WorldState, pid: &crate::pid::Pid) -> ReadEntry {
    ReadEntry { pid: pid.clone(), version: state.version(pid) }
}

/// Simulates `proposal` against `state`. The caller identity is verified
/// against `federation` as part of authorization.
pub fn simulate(state: &WorldState, proposal: &Proposal, federation: &Federation) -> Result<SimulationResult, ChaincodeError> {
    let pid = &proposal.pid;
    let caller = &proposal.creator;
    let current = state.get(pid);
    match &proposal.op {
        ChaincodeOp::CreateArtifact { uri, checksum, owners } | ChaincodeOp::CreateProv { uri, checksum, owners } => {
            if !check_auth(pid, None, caller, None, Capability::UpdateProvenance, federation) {
                return Err(ChaincodeError::Unauthorized);
            }
            if current.is_some() {
                return Err(ChaincodeError::AlreadyExists);
            }
            if owners.is_empty() {
                return Err(ChaincodeError::InvalidArgument("owners list is empty".into()));
            }
            let kind = match proposal.op {
                ChaincodeOp::CreateArtifact { .. } => ObjectKind::Artifact,
                _ => ObjectKind::ProvenanceRecord,
            };
            let value = LedgerValue {
                uri: uri.clone(),
                checksum: *checksum,
                version: 1,
                owners: owners.clone(),
                timestamp: proposal.timestamp,
                kind,
                status: Status::Valid,
            };
            Ok(SimulationResult {
                reads: vec![read(state, pid)],
                writes: vec![WriteEntry { pid: pid.clone(), value }],
                response: MSG_CREATED.into(),
            })
        }
        ChaincodeOp::UpdateProv { new_uri, new_checksum, permission } => {
            // Authorization comes first, then existence.
            let owners = current.map(|v| v.owners.as_slice());
            if !check_auth(pid, permission.as_ref(), caller, owners, Capability::UpdateProvenance, federation) {
                return Err(ChaincodeError::Unauthorized);
            }
            let Some(value) = current else {
                return Err(ChaincodeError::NotFound);
            };
            if value.kind == ObjectKind::Artifact {
                return Err(ChaincodeError::ArtifactUpdateRejected);
            }
            let updated = LedgerValue {
                uri: new_uri.clone(),
                checksum: *new_checksum,
                version: value.version + 1,
                owners: value.owners.clone(),
                timestamp: proposal.timestamp,
                kind: value.kind,
                status: value.status,
            };
            Ok(SimulationResult {
                reads: vec![read(state, pid)],
                writes: vec![WriteEntry { pid: pid.clone(), value: updated }],
                response: MSG_UPDATED.into(),
            })
        }
        ChaincodeOp::InvalidateArtifact { permission, .. } => {
            let owners = current.map(|v| v.owners.as_slice());
            if !check_auth(pid, permission.as_ref(), caller, owners, Capability::InvalidateArtifact, federation) {
                return Err(ChaincodeError::Unauthorized);
            }
            let Some(value) = current else {
                return Err(ChaincodeError::NotFound);
            };
            if value.kind == ObjectKind::ProvenanceRecord {
                return Err(ChaincodeError::ProvDeleteRejected);
            }
            let mut writes = Vec::new();
            if value.status != Status::Invalidated {
                let mut updated = value.clone();
                updated.status = Status::Invalidated;
                updated.version += 1;
                updated.timestamp = proposal.timestamp;
                writes.push(WriteEntry { pid: pid.clone(), value: updated });
            }
            let response = if writes.is_empty() { MSG_UNCHANGED } else { MSG_INVALIDATED };
            Ok(SimulationResult { reads: vec![read(state, pid)], writes, response: response.into() })
        }
        ChaincodeOp::FlagStatus { cause, status } => {
            if !check_auth(pid, None, caller, None, Capability::InvalidateArtifact, federation) {
                return Err(ChaincodeError::Unauthorized);
            }
            if *status == Status::Valid {
                return Err(ChaincodeError::InvalidArgument("a cascade cannot restore validity".into()));
            }
            let Some(value) = current else {
                return Err(ChaincodeError::NotFound);
            };
            if value.kind != ObjectKind::Artifact {
                return Err(ChaincodeError::InvalidArgument("status flags apply to artifacts only".into()));
            }
            match state.get(cause) {
                Some(c) if c.kind == ObjectKind::Artifact && c.status == Status::Invalidated => {}
                _ => return Err(ChaincodeError::CauseNotInvalidated),
            }
            let upgrade = matches!(
                (value.status, status),
                (Status::Valid, _) | (Status::Affected, Status::Invalidated)
            );
            let mut writes = Vec::new();
            if upgrade {
                let mut updated = value.clone();
                updated.status = *status;
                updated.version += 1;
                updated.timestamp = proposal.timestamp;
                writes.push(WriteEntry { pid: pid.clone(), value: updated });
            }
            Ok(SimulationResult {
                reads: vec![read(state, pid), read(state, cause)],
                writes,
                response: if upgrade { MSG_FLAGGED } else { MSG_UNCHANGED }.into(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::Digest;
    use crate::identity::{OrgKind, RegistrationService, UserCredentials};
    use crate::pid::Pid;
    use crate::time::Timestamp;

    struct Fx {
        fed: Federation,
        alice: UserCredentials,
        bob: UserCredentials,
        reader: UserCredentials,
    }

    fn fx() -> Fx {
        let mut svc = RegistrationService::new(&[
            ("OrgA", OrgKind::Producer),
            ("OrgB", OrgKind::Producer),
            ("Readers", OrgKind::ConsumerReadOnly),
        ])
        .unwrap();
        Fx {
            fed: svc.federation(),
            alice: svc.register_user("OrgA", "alice").unwrap(),
            bob: svc.register_user("OrgB", "bob").unwrap(),
            reader: svc.register_user("Readers", "rita").unwrap(),
        }
    }

    fn prop(who: &UserCredentials, pid: &Pid, op: ChaincodeOp) -> Proposal {
        Proposal { pid: pid.clone(), op, creator: who.identity.clone(), timestamp: Timestamp::from_millis(1000), nonce: 0 }
    }

    fn run(state: &mut WorldState, f: &Fx, who: &UserCredentials, pid: &Pid, op: ChaincodeOp) -> Result<String, ChaincodeError> {
        let r = simulate(state, &prop(who, pid, op), &f.fed)?;
        state.apply(&r.writes);
        Ok(r.response)
    }

    fn create(kind: ObjectKind, owner: &UserCredentials) -> ChaincodeOp {
        let (uri, checksum, owners) = ("u".to_string(), Digest::of(b"c"), vec![owner.principal()]);
        match kind {
            ObjectKind::Artifact => ChaincodeOp::CreateArtifact { uri, checksum, owners },
            ObjectKind::ProvenanceRecord => ChaincodeOp::CreateProv { uri, checksum, owners },
        }
    }

    fn update() -> ChaincodeOp {
        ChaincodeOp::UpdateProv { new_uri: "u2".into(), new_checksum: Digest::of(b"c2"), permission: None }
    }

    #[test]
    fn create_sets_version_one_and_rejects_duplicates() {
        let f = fx();
        let mut s = WorldState::default();
        let pid: Pid = "21.P/000001".parse().unwrap();
        assert_eq!(run(&mut s, &f, &f.alice, &pid, create(ObjectKind::Artifact, &f.alice)).unwrap(), MSG_CREATED);
        assert_eq!(s.get(&pid).unwrap().version, 1);
        assert_eq!(run(&mut s, &f, &f.alice, &pid, create(ObjectKind::Artifact, &f.alice)), Err(ChaincodeError::AlreadyExists));
        let other: Pid = "21.P/000002".parse().unwrap();
        assert_eq!(
            run(&mut s, &f, &f.reader, &other, create(ObjectKind::Artifact, &f.reader)).unwrap_err().to_string(),
            "Error: Unauthorized user"
        );
    }

    #[test]
    fn update_prov_checks_auth_then_existence() {
        let f = fx();
        let mut s = WorldState::default();
        let pid: Pid = "21.P/000001".parse().unwrap();
        run(&mut s, &f, &f.alice, &pid, create(ObjectKind::ProvenanceRecord, &f.alice)).unwrap();
        assert_eq!(run(&mut s, &f, &f.alice, &pid, update()).unwrap(), "Success: Resource updated successfully");
        let v = s.get(&pid).unwrap();
        assert_eq!((v.version, v.uri.as_str()), (2, "u2"));
        assert_eq!(v.owners, vec![f.alice.principal()]);
        let missing: Pid = "21.P/000099".parse().unwrap();
        assert_eq!(run(&mut s, &f, &f.alice, &missing, update()).unwrap_err().to_string(), "Error: Resource not found");
        assert_eq!(run(&mut s, &f, &f.bob, &pid, update()).unwrap_err().to_string(), "Error: Unauthorized user");
    }

    #[test]
    fn artifact_update_and_prov_delete_rejected() {
        let f = fx();
        let mut s = WorldState::default();
        let art: Pid = "21.P/000001".parse().unwrap();
        let prov: Pid = "21.P/000002".parse().unwrap();
        run(&mut s, &f, &f.alice, &art, create(ObjectKind::Artifact, &f.alice)).unwrap();
        run(&mut s, &f, &f.alice, &prov, create(ObjectKind::ProvenanceRecord, &f.alice)).unwrap();
        let before = s.clone();
        assert_eq!(run(&mut s, &f, &f.alice, &art, update()), Err(ChaincodeError::ArtifactUpdateRejected));
        let inv = ChaincodeOp::InvalidateArtifact { reason: "x".into(), permission: None };
        assert_eq!(run(&mut s, &f, &f.alice, &prov, inv), Err(ChaincodeError::ProvDeleteRejected));
        assert_eq!(s, before);
    }

    #[test]
    fn invalidate_keeps_value_and_is_idempotent() {
        let f = fx();
        let mut s = WorldState::default();
        let art: Pid = "21.P/000001".parse().unwrap();
        run(&mut s, &f, &f.alice, &art, create(ObjectKind::Artifact, &f.alice)).unwrap();
        let inv = || ChaincodeOp::InvalidateArtifact { reason: "retracted".into(), permission: None };
        run(&mut s, &f, &f.alice, &art, inv()).unwrap();
        let v = s.get(&art).unwrap().clone();
        assert!(v.is_invalidated());
        assert_eq!((v.uri.as_str(), v.checksum, v.version), ("u", Digest::of(b"c"), 2));
        assert_eq!(run(&mut s, &f, &f.alice, &art, inv()).unwrap(), MSG_UNCHANGED);
        assert_eq!(s.get(&art).unwrap(), &v);
    }

    #[test]
    fn flag_requires_invalidated_cause_and_never_downgrades() {
        let f = fx();
        let mut s = WorldState::default();
        let root: Pid = "21.P/000001".parse().unwrap();
        let child: Pid = "21.P/000002".parse().unwrap();
        run(&mut s, &f, &f.alice, &root, create(ObjectKind::Artifact, &f.alice)).unwrap();
        run(&mut s, &f, &f.bob, &child, create(ObjectKind::Artifact, &f.bob)).unwrap();
        let flag = |status| ChaincodeOp::FlagStatus { cause: root.clone(), status };
        assert_eq!(run(&mut s, &f, &f.alice, &child, flag(Status::Affected)), Err(ChaincodeError::CauseNotInvalidated));
        run(&mut s, &f, &f.alice, &root, ChaincodeOp::InvalidateArtifact { reason: "r".into(), permission: None }).unwrap();
        assert_eq!(run(&mut s, &f, &f.alice, &child, flag(Status::Affected)).unwrap(), MSG_FLAGGED);
        assert_eq!(s.get(&child).unwrap().status, Status::Affected);
        assert_eq!(run(&mut s, &f, &f.alice, &child, flag(Status::Affected)).unwrap(), MSG_UNCHANGED);
        assert_eq!(s.get(&child).unwrap().version, 2);
        assert!(run(&mut s, &f, &f.reader, &child, flag(Status::Affected)).is_err());
    }
}
