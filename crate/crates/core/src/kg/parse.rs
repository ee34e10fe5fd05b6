use std::collections::HashMap;
use std::fmt::Write as _;

use super::{
    EntityEntry, EntityId, KgError, RelationEntry, RelationId, Result, Triple, TypeId,
    TypedDictionary,
};

/// How entity tokens are resolved while parsing.
#[derive(Debug, Clone, Copy)]
pub enum DictionaryMode<'a> {
    /// Tokens are `name:Type`; unseen names are added to a fresh dictionary.
    Build,
    /// Tokens are bare names (or `name:Type`) resolved against a known
    /// dictionary; unknown entity names are errors.
    Strict(&'a TypedDictionary),
}

/// Incrementally assigns dense ids in first-appearance order.
#[derive(Debug, Default)]
pub struct DictionaryBuilder {
    types: Vec<String>,
    entities: Vec<EntityEntry>,
    relations: Vec<RelationEntry>,
    type_index: HashMap<String, TypeId>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    strict: bool,
}

impl DictionaryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start from an existing dictionary and refuse unknown entities.
    pub fn strict(dictionary: &TypedDictionary) -> Self {
        let mut b = Self::new();
        for t in dictionary.types() {
            b.intern_type(t);
        }
        for e in dictionary.entities() {
            b.entity_index
                .insert(e.name.clone(), EntityId::from_index(b.entities.len()));
            b.entities.push(e.clone());
        }
        for r in dictionary.relations() {
            b.relation_index
                .insert(r.name.clone(), RelationId::from_index(b.relations.len()));
            b.relations.push(r.clone());
        }
        b.strict = true;
        b
    }

    fn intern_type(&mut self, name: &str) -> TypeId {
        if let Some(&id) = self.type_index.get(name) {
            return id;
        }
        let id = TypeId::from_index(self.types.len());
        self.types.push(name.to_string());
        self.type_index.insert(name.to_string(), id);
        id
    }

    /// Look up or declare `name` with type `type_name`.
    pub fn intern_entity(&mut self, name: &str, type_name: &str, line: usize) -> Result<EntityId> {
        if let Some(&id) = self.entity_index.get(name) {
            let existing = &self.types[self.entities[id.index()].ty.index()];
            if existing != type_name {
                return Err(KgError::TypeConflict {
                    line,
                    entity: name.to_string(),
                    expected: existing.clone(),
                    found: type_name.to_string(),
                });
            }
            return Ok(id);
        }
        if self.strict {
            return Err(KgError::UnknownName {
                line,
                kind: "entity",
                name: name.to_string(),
            });
        }
        let ty = self.intern_type(type_name);
        let id = EntityId::from_index(self.entities.len());
        self.entities.push(EntityEntry {
            name: name.to_string(),
            ty,
        });
        self.entity_index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Look up or declare a relation; the first use fixes its domain and range.
    pub fn intern_relation(
        &mut self,
        name: &str,
        domain: TypeId,
        range: TypeId,
        line: usize,
    ) -> Result<RelationId> {
        if let Some(&id) = self.relation_index.get(name) {
            let rel = &self.relations[id.index()];
            if rel.domain != domain || rel.range != range {
                return Err(KgError::RelationSignatureConflict {
                    line,
                    relation: name.to_string(),
                    expected: format!(
                        "{} -> {}",
                        self.types[rel.domain.index()],
                        self.types[rel.range.index()]
                    ),
                    found: format!(
                        "{} -> {}",
                        self.types[domain.index()],
                        self.types[range.index()]
                    ),
                });
            }
            return Ok(id);
        }
        let id = RelationId::from_index(self.relations.len());
        self.relations.push(RelationEntry {
            name: name.to_string(),
            domain,
            range,
        });
        self.relation_index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Re-encode a triple expressed against another dictionary.
    pub fn intern_triple(
        &mut self,
        source: &TypedDictionary,
        triple: &Triple,
        line: usize,
    ) -> Result<Triple> {
        let h = source.entity(triple.head);
        let t = source.entity(triple.tail);
        let head = self.intern_entity(&h.name, source.type_name(h.ty), line)?;
        let tail = self.intern_entity(&t.name, source.type_name(t.ty), line)?;
        let relation = self.intern_relation(
            &source.relation(triple.relation).name,
            self.entities[head.index()].ty,
            self.entities[tail.index()].ty,
            line,
        )?;
        Ok(Triple::new(head, relation, tail))
    }

    fn resolve_token(&mut self, token: &str, line: usize) -> Result<EntityId> {
        if self.strict {
            if let Some(&id) = self.entity_index.get(token) {
                return Ok(id);
            }
            if let Some((name, ty)) = token.rsplit_once(':') {
                if self.entity_index.contains_key(name) {
                    return self.intern_entity(name, ty, line);
                }
            }
            return Err(KgError::UnknownName {
                line,
                kind: "entity",
                name: token.to_string(),
            });
        }
        match token.rsplit_once(':') {
            Some((name, ty)) if !name.is_empty() && !ty.is_empty() => {
                self.intern_entity(name, ty, line)
            }
            _ => Err(KgError::MalformedLine {
                line,
                reason: format!("entity token `{token}` is not of the form name:Type"),
            }),
        }
    }

    /// Parse TSV triple lines, interning into this builder.
    pub fn parse_into(&mut self, text: &str) -> Result<Vec<Triple>> {
        let mut triples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::MalformedLine {
                    line,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields[1].is_empty() {
                return Err(KgError::MalformedLine {
                    line,
                    reason: "empty relation name".into(),
                });
            }
            let head = self.resolve_token(fields[0], line)?;
            let tail = self.resolve_token(fields[2], line)?;
            let relation = self.intern_relation(
                fields[1],
                self.entities[head.index()].ty,
                self.entities[tail.index()].ty,
                line,
            )?;
            triples.push(Triple::new(head, relation, tail));
        }
        Ok(triples)
    }

    pub fn finish(self) -> Result<TypedDictionary> {
        TypedDictionary::new(self.types, self.entities, self.relations)
    }
}

/// Parse a TSV triple stream into a dictionary and dense-id triples.
pub fn parse_triples(text: &str, mode: DictionaryMode<'_>) -> Result<(TypedDictionary, Vec<Triple>)> {
    let mut builder = match mode {
        DictionaryMode::Build => DictionaryBuilder::new(),
        DictionaryMode::Strict(dict) => DictionaryBuilder::strict(dict),
    };
    let triples = builder.parse_into(text)?;
    Ok((builder.finish()?, triples))
}

/// Read an `entity<TAB>Type` sidecar into a relation-free dictionary.
pub fn parse_type_sidecar(text: &str) -> Result<TypedDictionary> {
    let mut builder = DictionaryBuilder::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        match raw.split_once('\t') {
            Some((name, ty)) if !name.is_empty() && !ty.is_empty() && !ty.contains('\t') => {
                builder.intern_entity(name, ty, i + 1)?;
            }
            _ => {
                return Err(KgError::MalformedLine {
                    line: i + 1,
                    reason: "expected `entity<TAB>Type`".into(),
                })
            }
        }
    }
    builder.finish()
}

/// Write triples back out as `name:Type<TAB>relation<TAB>name:Type` lines.
pub fn serialize_triples(dictionary: &TypedDictionary, triples: &[Triple]) -> String {
    let mut out = String::new();
    for t in triples {
        let h = dictionary.entity(t.head);
        let tl = dictionary.entity(t.tail);
        let _ = writeln!(
            out,
            "{}:{}\t{}\t{}:{}",
            h.name,
            dictionary.type_name(h.ty),
            dictionary.relation(t.relation).name,
            tl.name,
            dictionary.type_name(tl.ty)
        );
    }
    out
}
