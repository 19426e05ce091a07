use crate::federation::{ConfigError, FederationError};
use crate::identity::IdentityError;
use crate::ledger::{ChaincodeError, LedgerError, SubmitError};
use crate::lineage::LineageError;
use crate::pid::PidError;
use crate::prov::{ProvError, StoreError};

/// Process exit codes. Every failure maps to exactly one of these.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const UNAUTHORIZED: i32 = 3;
    pub const UNKNOWN_PID: i32 = 4;
    pub const LEDGER_REJECTED: i32 = 5;
    pub const INVALID_DOCUMENT: i32 = 6;
    pub const ILLEGAL_UPDATE: i32 = 7;
    pub const IO: i32 = 8;
    pub const NODE_UNREACHABLE: i32 = 9;
    pub const MISMATCH: i32 = 10;
    pub const NOT_INVALIDATED: i32 = 11;
    pub const SUCCESSOR_EXISTS: i32 = 12;
    pub const INTEGRITY: i32 = 13;
    pub const ALREADY_EXISTS: i32 = 14;
    pub const IDENTITY: i32 = 15;
    pub const NOT_PERMITTED: i32 = 16;

    /// Name and code of every exit status, for `--help` and the README.
    pub const TABLE: [(&str, i32); 17] = [
        ("ok", OK),
        ("internal", INTERNAL),
        ("usage", USAGE),
        ("unauthorized", UNAUTHORIZED),
        ("unknown-pid", UNKNOWN_PID),
        ("ledger-rejected", LEDGER_REJECTED),
        ("invalid-document", INVALID_DOCUMENT),
        ("illegal-update", ILLEGAL_UPDATE),
        ("io", IO),
        ("node-unreachable", NODE_UNREACHABLE),
        ("mismatch", MISMATCH),
        ("not-invalidated", NOT_INVALIDATED),
        ("successor-exists", SUCCESSOR_EXISTS),
        ("integrity", INTEGRITY),
        ("already-exists", ALREADY_EXISTS),
        ("identity", IDENTITY),
        ("operation-not-permitted", NOT_PERMITTED),
    ];

    pub fn name(code: i32) -> &'static str {
        TABLE.iter().find(|(_, c)| *c == code).map(|(n, _)| *n).unwrap_or("internal")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(exit::USAGE, message)
    }

    pub fn io(what: impl std::fmt::Display, e: std::io::Error) -> Self {
        Self::new(exit::IO, format!("{what}: {e}"))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn ledger_code(e: &LedgerError) -> i32 {
    match e {
        LedgerError::Unreachable { .. } => exit::NODE_UNREACHABLE,
        LedgerError::Corrupt { .. } => exit::INTEGRITY,
        LedgerError::Storage { .. } => exit::IO,
        _ => exit::LEDGER_REJECTED,
    }
}

fn chaincode_code(e: &ChaincodeError) -> i32 {
    match e {
        ChaincodeError::Unauthorized => exit::UNAUTHORIZED,
        ChaincodeError::NotFound => exit::UNKNOWN_PID,
        ChaincodeError::AlreadyExists => exit::ALREADY_EXISTS,
        ChaincodeError::ArtifactUpdateRejected | ChaincodeError::ProvDeleteRejected => exit::NOT_PERMITTED,
        ChaincodeError::CauseNotInvalidated => exit::NOT_INVALIDATED,
        ChaincodeError::InvalidArgument(_) => exit::LEDGER_REJECTED,
    }
}

fn submit_code(e: &SubmitError) -> i32 {
    match e {
        SubmitError::Chaincode(c) => chaincode_code(c),
        SubmitError::Ledger(l) => ledger_code(l),
        _ => exit::LEDGER_REJECTED,
    }
}

fn pid_code(e: &PidError) -> i32 {
    match e {
        PidError::UnknownPid(_) => exit::UNKNOWN_PID,
        PidError::SuccessorExists(_) => exit::SUCCESSOR_EXISTS,
        PidError::KindMismatch(_) => exit::NOT_PERMITTED,
        PidError::Unauthorized(_) => exit::UNAUTHORIZED,
        PidError::BrokenChain(_) => exit::INTEGRITY,
        PidError::TargetAlreadySet(_) => exit::ALREADY_EXISTS,
        PidError::RegistryUnavailable(_) => exit::NODE_UNREACHABLE,
    }
}

fn prov_code(e: &ProvError) -> i32 {
    match e {
        ProvError::Unauthorized(_) => exit::UNAUTHORIZED,
        ProvError::UnknownPid(_) => exit::UNKNOWN_PID,
        ProvError::NotProvenance(_) => exit::NOT_PERMITTED,
        ProvError::SuccessorExists(_) => exit::SUCCESSOR_EXISTS,
        ProvError::IllegalUpdate(_) => exit::ILLEGAL_UPDATE,
        ProvError::InvalidDocument(_) => exit::INVALID_DOCUMENT,
        ProvError::Integrity(_) => exit::INTEGRITY,
        ProvError::LedgerRejected(s) => submit_code(s),
        ProvError::Ledger(l) => ledger_code(l),
        ProvError::Registry(p) => pid_code(p),
        ProvError::Store(StoreError::Io(_)) => exit::IO,
        ProvError::Store(_) => exit::INTEGRITY,
        ProvError::Injected(_) => exit::INTERNAL,
        ProvError::Usage(_) => exit::USAGE,
    }
}

impl From<ProvError> for CliError {
    fn from(e: ProvError) -> Self {
        CliError::new(prov_code(&e), e.to_string())
    }
}

impl From<LineageError> for CliError {
    fn from(e: LineageError) -> Self {
        let code = match &e {
            LineageError::UnknownPid(_) => exit::UNKNOWN_PID,
            LineageError::NotAnArtifact(_) => exit::NOT_PERMITTED,
            LineageError::NotInvalidated(_) => exit::NOT_INVALIDATED,
            LineageError::CycleDetected(_) | LineageError::UnresolvablePid { .. } => exit::INTEGRITY,
            LineageError::Document(p) => prov_code(p),
            LineageError::Ledger(l) => ledger_code(l),
            LineageError::Flag { error, .. } => submit_code(error),
            LineageError::Io(_) => exit::IO,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<FederationError> for CliError {
    fn from(e: FederationError) -> Self {
        let code = match &e {
            FederationError::Config(_) | FederationError::UnknownNode(_) => exit::USAGE,
            FederationError::Identity(_) => exit::IDENTITY,
            FederationError::Ledger(l) => ledger_code(l),
            FederationError::Registry(p) => pid_code(p),
            FederationError::Unreachable(_) => exit::NODE_UNREACHABLE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(exit::USAGE, e.to_string())
    }
}

impl From<IdentityError> for CliError {
    fn from(e: IdentityError) -> Self {
        let code = match &e {
            IdentityError::DuplicateUser(_) => exit::ALREADY_EXISTS,
            _ => exit::IDENTITY,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        CliError::new(ledger_code(&e), e.to_string())
    }
}
