//! Typed knowledge-graph data model.
//!
//! Every entity carries exactly one type, every relation records the type of
//! its heads (domain) and tails (range), and the triples of a graph are
//! partitioned into the four roles LRN / VLD / TUN / TST.

mod io;
mod labels;
mod parse;
mod split;

pub use io::{read_dataset, write_dataset, SplitManifest};
pub use labels::{derive_labels, LabelId, LabelMap};
pub use parse::{
    parse_triples, parse_type_sidecar, serialize_triples, DictionaryBuilder, DictionaryMode,
};
pub use split::{split_dataset, SplitRatios, DEFAULT_SPLIT_RATIOS};

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: entity `{entity}` re-declared with conflicting type `{found}` (was `{expected}`)")]
    TypeConflict {
        line: usize,
        entity: String,
        expected: String,
        found: String,
    },
    #[error("line {line}: relation `{relation}` used with signature {found} but was declared {expected}")]
    RelationSignatureConflict {
        line: usize,
        relation: String,
        expected: String,
        found: String,
    },
    #[error("line {line}: unknown {kind} `{name}`")]
    UnknownName {
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("split ratios must be non-negative and sum to 1 (got {0:?})")]
    InvalidRatios([f64; 4]),
    #[error("need at least 4 triples to populate all splits, got {0}")]
    TooFewTriples(usize),
    #[error("duplicate triple {0}")]
    DuplicateTriple(Triple),
    #[error("triple {triple} appears in both {first} and {second}")]
    OverlappingSplits {
        triple: Triple,
        first: Split,
        second: Split,
    },
    #[error("triple {0} violates the relation's domain/range types")]
    TypeViolation(Triple),
    #[error("triple {0} references an id outside the dictionary")]
    DanglingId(Triple),
    #[error("entity `{entity}` in {split} never appears in a LRN triple")]
    UnseenEntity { entity: String, split: Split },
    #[error("relation `{relation}` is not many-to-one: `{head}` has tails `{first}` and `{second}`")]
    NotManyToOne {
        relation: String,
        head: String,
        first: String,
        second: String,
    },
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub fn from_index(index: usize) -> Self {
                Self(u32::try_from(index).expect("id space exceeds u32"))
            }
        }
    };
}

dense_id!(
    /// Dense entity id, contiguous from 0.
    EntityId
);
dense_id!(
    /// Dense relation id, contiguous from 0.
    RelationId
);
dense_id!(
    /// Dense type (category) id, contiguous from 0.
    TypeId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    /// The entity on `side`.
    pub fn entity(&self, side: Side) -> EntityId {
        match side {
            Side::Head => self.head,
            Side::Tail => self.tail,
        }
    }

    /// Copy of this triple with `side` replaced by `entity`.
    pub fn with_entity(&self, side: Side, entity: EntityId) -> Self {
        match side {
            Side::Head => Self { head: entity, ..*self },
            Side::Tail => Self { tail: entity, ..*self },
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head.0, self.relation.0, self.tail.0)
    }
}

/// Which end of a triple is replaced or predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

/// Role of a triple subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "LRN")]
    Lrn,
    #[serde(rename = "VLD")]
    Vld,
    #[serde(rename = "TUN")]
    Tun,
    #[serde(rename = "TST")]
    Tst,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Lrn, Split::Vld, Split::Tun, Split::Tst];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Lrn => "LRN",
            Split::Vld => "VLD",
            Split::Tun => "TUN",
            Split::Tst => "TST",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LRN" => Ok(Split::Lrn),
            "VLD" => Ok(Split::Vld),
            "TUN" => Ok(Split::Tun),
            "TST" => Ok(Split::Tst),
            other => Err(format!("unknown split `{other}` (expected LRN, VLD, TUN or TST)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityEntry {
    pub name: String,
    pub ty: TypeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEntry {
    pub name: String,
    pub domain: TypeId,
    pub range: TypeId,
}

/// Names, types and signatures of everything a graph can mention.
///
/// Lookup indices are rebuilt on construction; the dictionary itself is
/// immutable once built.
#[derive(Debug, Clone, Default)]
pub struct TypedDictionary {
    types: Vec<String>,
    entities: Vec<EntityEntry>,
    relations: Vec<RelationEntry>,
    type_index: HashMap<String, TypeId>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    members: Vec<Vec<EntityId>>,
    rank_in_type: Vec<u32>,
}

impl TypedDictionary {
    /// Assemble a dictionary, checking id contiguity, name uniqueness and
    /// that every referenced type exists.
    pub fn new(
        types: Vec<String>,
        entities: Vec<EntityEntry>,
        relations: Vec<RelationEntry>,
    ) -> Result<Self> {
        let mut type_index = HashMap::with_capacity(types.len());
        for (i, name) in types.iter().enumerate() {
            if type_index.insert(name.clone(), TypeId::from_index(i)).is_some() {
                return Err(KgError::DuplicateName {
                    kind: "type",
                    name: name.clone(),
                });
            }
        }
        let n_types = types.len();
        let mut entity_index = HashMap::with_capacity(entities.len());
        let mut members = vec![Vec::new(); n_types];
        let mut rank_in_type = Vec::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if e.ty.index() >= n_types {
                return Err(KgError::UnknownName {
                    line: 0,
                    kind: "type id",
                    name: e.ty.0.to_string(),
                });
            }
            if entity_index.insert(e.name.clone(), EntityId::from_index(i)).is_some() {
                return Err(KgError::DuplicateName {
                    kind: "entity",
                    name: e.name.clone(),
                });
            }
            let bucket: &mut Vec<EntityId> = &mut members[e.ty.index()];
            rank_in_type.push(bucket.len() as u32);
            bucket.push(EntityId::from_index(i));
        }
        let mut relation_index = HashMap::with_capacity(relations.len());
        for (i, r) in relations.iter().enumerate() {
            if r.domain.index() >= n_types || r.range.index() >= n_types {
                return Err(KgError::UnknownName {
                    line: 0,
                    kind: "type id",
                    name: format!("{}/{}", r.domain.0, r.range.0),
                });
            }
            if relation_index.insert(r.name.clone(), RelationId::from_index(i)).is_some() {
                return Err(KgError::DuplicateName {
                    kind: "relation",
                    name: r.name.clone(),
                });
            }
        }
        Ok(Self {
            types,
            entities,
            relations,
            type_index,
            entity_index,
            relation_index,
            members,
            rank_in_type,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty() && self.types.is_empty()
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn entities(&self) -> &[EntityEntry] {
        &self.entities
    }

    pub fn relations(&self) -> &[RelationEntry] {
        &self.relations
    }

    pub fn entity(&self, id: EntityId) -> &EntityEntry {
        &self.entities[id.index()]
    }

    pub fn relation(&self, id: RelationId) -> &RelationEntry {
        &self.relations[id.index()]
    }

    pub fn type_name(&self, id: TypeId) -> &str {
        &self.types[id.index()]
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities[id.index()].name
    }

    pub fn entity_type(&self, id: EntityId) -> TypeId {
        self.entities[id.index()].ty
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.type_index.get(name).copied()
    }

    /// Entities of type `ty`, in id order.
    pub fn members_of(&self, ty: TypeId) -> &[EntityId] {
        &self.members[ty.index()]
    }

    /// Position of `entity` inside `members_of(entity_type(entity))`.
    pub fn rank_in_type(&self, entity: EntityId) -> usize {
        self.rank_in_type[entity.index()] as usize
    }

    /// Does `triple` respect its relation's domain and range?
    pub fn is_well_typed(&self, triple: &Triple) -> bool {
        let rel = self.relation(triple.relation);
        self.entity_type(triple.head) == rel.domain && self.entity_type(triple.tail) == rel.range
    }

    fn contains_ids(&self, triple: &Triple) -> bool {
        triple.head.index() < self.entities.len()
            && triple.tail.index() < self.entities.len()
            && triple.relation.index() < self.relations.len()
    }

    /// Stable content hash (hex SHA-256) over names and signatures in id order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"types\n");
        for t in &self.types {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hasher.update(b"entities\n");
        for e in &self.entities {
            hasher.update(e.name.as_bytes());
            hasher.update(b"\t");
            hasher.update(e.ty.0.to_le_bytes());
            hasher.update(b"\n");
        }
        hasher.update(b"relations\n");
        for r in &self.relations {
            hasher.update(r.name.as_bytes());
            hasher.update(b"\t");
            hasher.update(r.domain.0.to_le_bytes());
            hasher.update(r.range.0.to_le_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

impl PartialEq for TypedDictionary {
    fn eq(&self, other: &Self) -> bool {
        self.types == other.types
            && self.entities == other.entities
            && self.relations == other.relations
    }
}

/// A typed dictionary plus its four triple splits.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    dictionary: TypedDictionary,
    splits: [Vec<Triple>; 4],
    training_set: HashSet<Triple>,
    known_set: HashSet<Triple>,
}

impl KnowledgeGraph {
    /// Validate and assemble a graph.
    ///
    /// Checks that every triple is well typed, splits are disjoint and
    /// duplicate-free, and every entity used for evaluation also occurs in LRN.
    pub fn new(dictionary: TypedDictionary, splits: [Vec<Triple>; 4]) -> Result<Self> {
        let mut owner: HashMap<Triple, Split> = HashMap::new();
        for split in Split::ALL {
            for t in &splits[split.slot()] {
                if !dictionary.contains_ids(t) {
                    return Err(KgError::DanglingId(*t));
                }
                if !dictionary.is_well_typed(t) {
                    return Err(KgError::TypeViolation(*t));
                }
                if let Some(first) = owner.insert(*t, split) {
                    return Err(if first == split {
                        KgError::DuplicateTriple(*t)
                    } else {
                        KgError::OverlappingSplits {
                            triple: *t,
                            first,
                            second: split,
                        }
                    });
                }
            }
        }
        let mut seen = vec![false; dictionary.num_entities()];
        for t in &splits[Split::Lrn.slot()] {
            seen[t.head.index()] = true;
            seen[t.tail.index()] = true;
        }
        for split in [Split::Vld, Split::Tun, Split::Tst] {
            for t in &splits[split.slot()] {
                for e in [t.head, t.tail] {
                    if !seen[e.index()] {
                        return Err(KgError::UnseenEntity {
                            entity: dictionary.entity_name(e).to_string(),
                            split,
                        });
                    }
                }
            }
        }
        let training_set = splits[Split::Lrn.slot()].iter().copied().collect();
        let known_set = owner.into_keys().collect();
        Ok(Self {
            dictionary,
            splits,
            training_set,
            known_set,
        })
    }

    pub fn dictionary(&self) -> &TypedDictionary {
        &self.dictionary
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        &self.splits[split.slot()]
    }

    /// All triples in LRN, VLD, TUN, TST order.
    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> + '_ {
        self.splits.iter().flatten()
    }

    pub fn num_triples(&self) -> usize {
        self.splits.iter().map(Vec::len).sum()
    }

    /// Is `triple` part of the training split?
    pub fn in_training(&self, triple: &Triple) -> bool {
        self.training_set.contains(triple)
    }

    /// Is `triple` present in any split?
    pub fn is_known(&self, triple: &Triple) -> bool {
        self.known_set.contains(triple)
    }

    /// Re-encode ids in first-appearance order over LRN, VLD, TUN, TST.
    ///
    /// This is the order `read_dataset` assigns, so a canonical graph
    /// survives a write/read cycle with identical ids and dictionary hash.
    pub fn canonicalize(&self) -> Result<Self> {
        let mut builder = DictionaryBuilder::new();
        let mut splits: [Vec<Triple>; 4] = Default::default();
        for split in Split::ALL {
            let out = &mut splits[split.slot()];
            for t in self.split(split) {
                out.push(builder.intern_triple(&self.dictionary, t, 0)?);
            }
        }
        KnowledgeGraph::new(builder.finish()?, splits)
    }

    /// Stable hash of the dictionary and every split.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.dictionary.content_hash().as_bytes());
        for split in Split::ALL {
            hasher.update(split.as_str().as_bytes());
            for t in self.split(split) {
                hasher.update(t.head.0.to_le_bytes());
                hasher.update(t.relation.0.to_le_bytes());
                hasher.update(t.tail.0.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}
