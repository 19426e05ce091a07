use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_bytes;
use crate::digest::Digest;
use crate::pid::Pid;
use crate::time::Timestamp;

pub type Attributes = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub local_id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub artifact_pid: Option<Pid>,
    #[serde(default)]
    pub checksum: Option<Digest>,
    #[serde(default)]
    pub attributes: Attributes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub local_id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub started: Option<Timestamp>,
    #[serde(default)]
    pub ended: Option<Timestamp>,
    #[serde(default)]
    pub attributes: Attributes,
    #[serde(default)]
    pub parent_activity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub local_id: String,
    #[serde(default)]
    pub identity_ref: Option<String>,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    Used,
    WasGeneratedBy,
    WasDerivedFrom,
    WasAttributedTo,
    WasAssociatedWith,
    WasInvalidatedBy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Entity,
    Activity,
    Agent,
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementKind::Entity => "entity",
            ElementKind::Activity => "activity",
            ElementKind::Agent => "agent",
        })
    }
}

impl RelationKind {
    /// Required (source, target) element kinds.
    pub fn endpoints(self) -> (ElementKind, ElementKind) {
        use ElementKind::*;
        match self {
            RelationKind::Used => (Activity, Entity),
            RelationKind::WasGeneratedBy => (Entity, Activity),
            RelationKind::WasDerivedFrom => (Entity, Entity),
            RelationKind::WasAttributedTo => (Entity, Agent),
            RelationKind::WasAssociatedWith => (Activity, Agent),
            RelationKind::WasInvalidatedBy => (Entity, Activity),
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationKind,
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub attributes: Attributes,
}

impl Relation {
    pub fn new(kind: RelationKind, source: impl Into<String>, target: impl Into<String>) -> Self {
        Relation { kind, source: source.into(), target: target.into(), attributes: Attributes::new() }
    }

    pub fn key(&self) -> (RelationKind, &str, &str) {
        (self.kind, &self.source, &self.target)
    }
}

/// A provenance document in a small PROV subset.
///
/// Entities, agents and relations are sets: their order is irrelevant and is
/// normalized before hashing. Activities are kept in recorded order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvDocument {
    /// Assigned once the document is registered; not part of the content.
    #[serde(skip)]
    pub doc_id: Option<Pid>,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub activities: Vec<Activity>,
    #[serde(default)]
    pub agents: Vec<Agent>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid document: {}", .0.join("; "))]
pub struct InvalidDocument(pub Vec<String>);

impl ProvDocument {
    pub fn new(created_at: Timestamp) -> Self {
        ProvDocument {
            doc_id: None,
            entities: Vec::new(),
            activities: Vec::new(),
            agents: Vec::new(),
            relations: Vec::new(),
            created_at,
        }
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.local_id == id)
    }

    pub fn entity_mut(&mut self, id: &str) -> Option<&mut Entity> {
        self.entities.iter_mut().find(|e| e.local_id == id)
    }

    pub fn activity(&self, id: &str) -> Option<&Activity> {
        self.activities.iter().find(|a| a.local_id == id)
    }

    pub fn agent(&self, id: &str) -> Option<&Agent> {
        self.agents.iter().find(|a| a.local_id == id)
    }

    pub fn element_kind(&self, id: &str) -> Option<ElementKind> {
        if self.entity(id).is_some() {
            Some(ElementKind::Entity)
        } else if self.activity(id).is_some() {
            Some(ElementKind::Activity)
        } else if self.agent(id).is_some() {
            Some(ElementKind::Agent)
        } else {
            None
        }
    }

    /// Chain of ancestors of activity `id`, nearest first. Stops on a cycle.
    pub fn activity_ancestors(&self, id: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let mut cur = self.activity(id).and_then(|a| a.parent_activity.as_deref());
        while let Some(p) = cur {
            if out.contains(&p) || p == id {
                break;
            }
            out.push(p);
            cur = self.activity(p).and_then(|a| a.parent_activity.as_deref());
        }
        out
    }

    /// Checks the structural invariants, listing every violation found.
    pub fn validate(&self) -> Result<(), InvalidDocument> {
        let mut errors = Vec::new();
        let mut seen = BTreeSet::new();
        let ids = self
            .entities
            .iter()
            .map(|e| &e.local_id)
            .chain(self.activities.iter().map(|a| &a.local_id))
            .chain(self.agents.iter().map(|a| &a.local_id));
        for id in ids {
            if id.is_empty() {
                errors.push("empty local-id".to_string());
            } else if !seen.insert(id.as_str()) {
                errors.push(format!("duplicate local-id `{id}`"));
            }
        }
        let kinds: HashMap<&str, ElementKind> = self
            .entities
            .iter()
            .map(|e| (e.local_id.as_str(), ElementKind::Entity))
            .chain(self.activities.iter().map(|a| (a.local_id.as_str(), ElementKind::Activity)))
            .chain(self.agents.iter().map(|a| (a.local_id.as_str(), ElementKind::Agent)))
            .collect();
        for r in &self.relations {
            let (want_src, want_dst) = r.kind.endpoints();
            for (end, want) in [(&r.source, want_src), (&r.target, want_dst)] {
                match kinds.get(end.as_str()) {
                    None => errors.push(format!("{} relation endpoint `{end}` is not declared", r.kind)),
                    Some(k) if *k != want => errors.push(format!("{} relation endpoint `{end}` is a {k}, expected {want}", r.kind)),
                    Some(_) => {}
                }
            }
        }
        for a in &self.activities {
            if let Some(p) = &a.parent_activity {
                if kinds.get(p.as_str()) != Some(&ElementKind::Activity) {
                    errors.push(format!("parent `{p}` of activity `{}` is not an activity", a.local_id));
                }
            }
            if let (Some(s), Some(e)) = (a.started, a.ended) {
                if e < s {
                    errors.push(format!("activity `{}` ends before it starts", a.local_id));
                }
            }
        }
        for a in &self.activities {
            let mut cur = a.parent_activity.as_deref();
            let mut steps = 0;
            while let Some(p) = cur {
                if p == a.local_id || steps > self.activities.len() {
                    errors.push(format!("activity `{}` is its own ancestor", a.local_id));
                    break;
                }
                steps += 1;
                cur = self.activity(p).and_then(|x| x.parent_activity.as_deref());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(InvalidDocument(errors))
        }
    }

    /// Copy with set-like collections sorted.
    pub fn normalized(&self) -> ProvDocument {
        let mut doc = self.clone();
        doc.entities.sort_by(|a, b| a.local_id.cmp(&b.local_id));
        doc.agents.sort_by(|a, b| a.local_id.cmp(&b.local_id));
        doc.relations.sort_by(|a, b| {
            a.key().cmp(&b.key()).then_with(|| to_canonical_bytes(&a.attributes).cmp(&to_canonical_bytes(&b.attributes)))
        });
        doc
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical_bytes(&self.normalized())
    }

    pub fn checksum(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> ProvDocument {
        let mut d = ProvDocument::new(Timestamp::from_millis(0));
        d.entities.push(Entity {
            local_id: "in".into(),
            label: "input".into(),
            artifact_pid: None,
            checksum: None,
            attributes: Attributes::new(),
        });
        d.entities.push(Entity { local_id: "out".into(), ..d.entities[0].clone() });
        d.activities.push(Activity {
            local_id: "run".into(),
            label: "run".into(),
            started: None,
            ended: None,
            attributes: Attributes::new(),
            parent_activity: None,
        });
        d.relations.push(Relation::new(RelationKind::Used, "run", "in"));
        d.relations.push(Relation::new(RelationKind::WasGeneratedBy, "out", "run"));
        d
    }

    #[test]
    fn empty_document_checksum_is_stable() {
        let d = ProvDocument::new(Timestamp::from_millis(0));
        assert!(d.validate().is_ok());
        assert_eq!(
            String::from_utf8(d.canonical_bytes()).unwrap(),
            r#"{"activities":[],"agents":[],"created_at":"1970-01-01T00:00:00.000Z","entities":[],"relations":[]}"#
        );
        assert_eq!(d.checksum(), ProvDocument::new(Timestamp::from_millis(0)).checksum());
    }

    #[test]
    fn set_order_does_not_change_checksum() {
        let a = doc();
        let mut b = doc();
        b.entities.reverse();
        b.relations.reverse();
        assert_eq!(a.checksum(), b.checksum());
        let mut c = doc();
        c.activities.push(Activity { local_id: "second".into(), ..c.activities[0].clone() });
        let mut d = c.clone();
        d.activities.reverse();
        assert_ne!(c.checksum(), d.checksum());
    }

    #[test]
    fn dangling_and_mistyped_endpoints_rejected() {
        let mut d = doc();
        d.relations.push(Relation::new(RelationKind::Used, "run", "ghost"));
        d.relations.push(Relation::new(RelationKind::Used, "in", "run"));
        let err = d.validate().unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }

    #[test]
    fn duplicate_ids_and_parent_cycles_rejected() {
        let mut d = doc();
        d.agents.push(Agent { local_id: "in".into(), identity_ref: None, label: String::new() });
        assert!(d.validate().is_err());
        let mut d = doc();
        d.activities.push(Activity { local_id: "a".into(), parent_activity: Some("b".into()), ..d.activities[0].clone() });
        d.activities.push(Activity { local_id: "b".into(), parent_activity: Some("a".into()), ..d.activities[0].clone() });
        assert!(d.validate().is_err());
    }

    #[test]
    fn doc_id_is_not_content() {
        let a = doc();
        let mut b = doc();
        b.doc_id = Some("21.P/000001".parse().unwrap());
        assert_eq!(a.checksum(), b.checksum());
    }
}
