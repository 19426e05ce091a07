//! Classification of a proposed provenance-document revision.
//!
//! The original document's elements, relations and attribute values must all
//! survive into the new version. Beyond that, the kind of addition decides the
//! class: pure attribute additions and filled references are enrichment;
//! sub-activities nested under original activities are decomposition; other
//! additions are a general revision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::document::{Attributes, ProvDocument, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateClass {
    Enrichment,
    Decomposition,
    GeneralRevision,
    Illegal,
}

impl fmt::Display for UpdateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateClass::Enrichment => "enrichment",
            UpdateClass::Decomposition => "decomposition",
            UpdateClass::GeneralRevision => "general-revision",
            UpdateClass::Illegal => "illegal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub class: UpdateClass,
    /// Why the update is illegal; empty otherwise.
    pub violations: Vec<String>,
}

pub fn classify_update(old: &ProvDocument, new: &ProvDocument) -> UpdateClass {
    explain_update(old, new).class
}

fn attrs_kept(old: &Attributes, new: &Attributes) -> Option<String> {
    for (k, v) in old {
        match new.get(k) {
            None => return Some(format!("attribute `{k}` removed")),
            Some(n) if n != v => return Some(format!("attribute `{k}` changed")),
            _ => {}
        }
    }
    None
}

/// `old` must be kept verbatim, or filled when it was empty.
fn kept_or_filled<T: PartialEq>(old: &Option<T>, new: &Option<T>) -> bool {
    old.is_none() || old == new
}

pub fn explain_update(old: &ProvDocument, new: &ProvDocument) -> Classification {
    let mut v: Vec<String> = Vec::new();

    if new.created_at < old.created_at {
        v.push("new version predates the original".into());
    }
    for e in &old.entities {
        let Some(n) = new.entity(&e.local_id) else {
            v.push(format!("entity `{}` removed", e.local_id));
            continue;
        };
        if n.label != e.label {
            v.push(format!("label of entity `{}` changed", e.local_id));
        }
        if !kept_or_filled(&e.artifact_pid, &n.artifact_pid) {
            v.push(format!("artifact-pid of entity `{}` changed", e.local_id));
        }
        if !kept_or_filled(&e.checksum, &n.checksum) {
            v.push(format!("checksum of entity `{}` changed", e.local_id));
        }
        if let Some(why) = attrs_kept(&e.attributes, &n.attributes) {
            v.push(format!("entity `{}`: {why}", e.local_id));
        }
    }
    for a in &old.activities {
        let Some(n) = new.activity(&a.local_id) else {
            v.push(format!("activity `{}` removed", a.local_id));
            continue;
        };
        if n.label != a.label {
            v.push(format!("label of activity `{}` changed", a.local_id));
        }
        if !kept_or_filled(&a.started, &n.started) || !kept_or_filled(&a.ended, &n.ended) {
            v.push(format!("time of activity `{}` changed", a.local_id));
        }
        if n.parent_activity != a.parent_activity {
            v.push(format!("parent of activity `{}` changed", a.local_id));
        }
        if let Some(why) = attrs_kept(&a.attributes, &n.attributes) {
            v.push(format!("activity `{}`: {why}", a.local_id));
        }
    }
    for a in &old.agents {
        let Some(n) = new.agent(&a.local_id) else {
            v.push(format!("agent `{}` removed", a.local_id));
            continue;
        };
        if n.label != a.label {
            v.push(format!("label of agent `{}` changed", a.local_id));
        }
        if !kept_or_filled(&a.identity_ref, &n.identity_ref) {
            v.push(format!("identity of agent `{}` changed", a.local_id));
        }
    }

    // Original activities must keep their relative order.
    let old_order: Vec<&str> = old.activities.iter().map(|a| a.local_id.as_str()).collect();
    let new_order: Vec<&str> =
        new.activities.iter().map(|a| a.local_id.as_str()).filter(|id| old_order.contains(id)).collect();
    if new_order.len() == old_order.len() && new_order != old_order {
        v.push("order of original activities changed".into());
    }

    let old_activity_ids: BTreeSet<&str> = old_order.iter().copied().collect();
    let is_new_activity = |id: &str| new.activity(id).is_some() && !old_activity_ids.contains(id);
    // `child` is a sub-activity introduced under original activity `parent`.
    let descends_from = |child: &str, parent: &str| {
        is_new_activity(child) && new.activity_ancestors(child).contains(&parent)
    };

    // Match every original relation, exactly or re-attached to a sub-activity.
    let mut matched_new: BTreeSet<usize> = BTreeSet::new();
    let mut reattached = false;
    for r in &old.relations {
        let exact = new.relations.iter().enumerate().find(|(i, n)| !matched_new.contains(i) && n.key() == r.key());
        let found = exact.or_else(|| {
            new.relations.iter().enumerate().find(|(i, n)| {
                !matched_new.contains(i)
                    && n.kind == r.kind
                    && ((n.source == r.source && descends_from(&n.target, &r.target))
                        || (n.target == r.target && descends_from(&n.source, &r.source)))
            })
        });
        match found {
            Some((i, n)) => {
                if n.key() != r.key() {
                    reattached = true;
                }
                if let Some(why) = attrs_kept(&r.attributes, &n.attributes) {
                    v.push(format!("{} relation {} → {}: {why}", r.kind, r.source, r.target));
                }
                matched_new.insert(i);
            }
            None => v.push(format!("{} relation {} → {} removed", r.kind, r.source, r.target)),
        }
    }

    if !v.is_empty() {
        return Classification { class: UpdateClass::Illegal, violations: v };
    }

    let new_relations: Vec<&Relation> =
        new.relations.iter().enumerate().filter(|(i, _)| !matched_new.contains(i)).map(|(_, r)| r).collect();
    let added_activities: Vec<&str> =
        new.activities.iter().map(|a| a.local_id.as_str()).filter(|id| !old_activity_ids.contains(id)).collect();
    let added_elements: BTreeSet<&str> = new
        .entities
        .iter()
        .map(|e| e.local_id.as_str())
        .filter(|id| old.entity(id).is_none())
        .chain(new.agents.iter().map(|a| a.local_id.as_str()).filter(|id| old.agent(id).is_none()))
        .collect();

    if added_activities.is_empty() && added_elements.is_empty() && new_relations.is_empty() && !reattached {
        return Classification { class: UpdateClass::Enrichment, violations: Vec::new() };
    }

    let all_nested = added_activities
        .iter()
        .all(|id| new.activity_ancestors(id).iter().any(|p| old_activity_ids.contains(p)));
    let is_added = |id: &str| added_elements.contains(id) || added_activities.contains(&id);
    let relations_local = new_relations
        .iter()
        .all(|r| added_activities.contains(&r.source.as_str()) || added_activities.contains(&r.target.as_str()) || (is_added(&r.source) && is_added(&r.target)));
    let mut linked: BTreeMap<&str, bool> = added_elements.iter().map(|id| (*id, false)).collect();
    for r in &new_relations {
        for end in [r.source.as_str(), r.target.as_str()] {
            if let Some(seen) = linked.get_mut(end) {
                *seen = true;
            }
        }
    }
    let elements_linked = linked.values().all(|b| *b);

    let class = if !added_activities.is_empty() && all_nested && relations_local && elements_linked {
        UpdateClass::Decomposition
    } else {
        UpdateClass::GeneralRevision
    };
    Classification { class, violations: Vec::new() }
}
