//! Immutable provenance documents, content-addressed storage, update
//! classification and the atomic update of a provenance record.

mod classify;
mod document;
mod manager;
mod store;

pub use classify::{classify_update, explain_update, Classification, UpdateClass};
pub use document::{Activity, Agent, Attributes, ElementKind, Entity, InvalidDocument, ProvDocument, Relation, RelationKind};
pub use manager::{
    FailurePoint, LedgerEntrySummary, ProvError, ProvManager, PublishOutcome, PublishedArtifact, UpdateOutcome, Verdict,
    VerifyReport, VersionSummary,
};
pub use store::{ContentStore, ProvStore, StoreError, Stored, DATA_SCHEME, PROV_SCHEME};
