use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EntityId, KgError, KnowledgeGraph, RelationId, Result, TypeId};

/// Dense class id in `[0, L)`.
pub type LabelId = u32;

/// Ground-truth classes of target-type entities, read off a many-to-one
/// relation (e.g. a procedure's group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub target_type: TypeId,
    pub source_relation: RelationId,
    pub relation_name: String,
    /// Entity keyed, ordered by entity id.
    pub labels: BTreeMap<EntityId, LabelId>,
    /// Name of the tail entity behind each label id.
    pub label_names: Vec<String>,
}

impl LabelMap {
    /// Number of distinct labels, `L`.
    pub fn label_count(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, entity: EntityId) -> Option<LabelId> {
        self.labels.get(&entity).copied()
    }

    /// Keep only the entities accepted by `keep`, re-encoding nothing.
    pub fn restrict(&self, mut keep: impl FnMut(EntityId) -> bool) -> LabelMap {
        LabelMap {
            labels: self
                .labels
                .iter()
                .filter(|(e, _)| keep(**e))
                .map(|(e, l)| (*e, *l))
                .collect(),
            ..self.clone()
        }
    }
}

/// Build a [`LabelMap`] from every triple of `relation` across all splits.
///
/// Label ids are assigned to distinct tails in ascending tail-id order.
pub fn derive_labels(kg: &KnowledgeGraph, relation: RelationId) -> Result<LabelMap> {
    let dict = kg.dictionary();
    if relation.index() >= dict.num_relations() {
        return Err(KgError::UnknownRelation(relation.0.to_string()));
    }
    let mut tail_of: BTreeMap<EntityId, EntityId> = BTreeMap::new();
    for t in kg.all_triples().filter(|t| t.relation == relation) {
        if let Some(&prev) = tail_of.get(&t.head) {
            if prev != t.tail {
                return Err(KgError::NotManyToOne {
                    relation: dict.relation(relation).name.clone(),
                    head: dict.entity_name(t.head).to_string(),
                    first: dict.entity_name(prev).to_string(),
                    second: dict.entity_name(t.tail).to_string(),
                });
            }
        } else {
            tail_of.insert(t.head, t.tail);
        }
    }
    let mut tails: Vec<EntityId> = tail_of.values().copied().collect();
    tails.sort_unstable();
    tails.dedup();
    let labels = tail_of
        .iter()
        .map(|(&head, tail)| {
            let id = tails.binary_search(tail).expect("tail collected above") as LabelId;
            (head, id)
        })
        .collect();
    Ok(LabelMap {
        target_type: dict.relation(relation).domain,
        source_relation: relation,
        relation_name: dict.relation(relation).name.clone(),
        labels,
        label_names: tails.iter().map(|&e| dict.entity_name(e).to_string()).collect(),
    })
}
