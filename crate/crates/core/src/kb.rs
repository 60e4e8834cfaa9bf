//! In-memory triple store with forward/reverse adjacency and a name index.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

/// Opaque entity identifier such as `/m/03_r3`. Literal objects (dates,
/// numbers) are stored as pseudo-entities whose id is the literal text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub String);

/// Slash-separated relation path such as `/people/person/nationality`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        EntityId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Ids that do not look like a path are treated as literal values.
    pub fn is_literal(&self) -> bool {
        !self.0.starts_with('/')
    }
}

impl RelationId {
    pub fn new(id: impl Into<String>) -> Self {
        RelationId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: EntityId,
    pub predicate: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(s: &str, p: &str, o: &str) -> Self {
        Triple {
            subject: EntityId::new(s),
            predicate: RelationId::new(p),
            object: EntityId::new(o),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// The queried entity is the subject of the edge.
    Forward,
    /// The queried entity is the object of the edge.
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub relation: RelationId,
    pub entity: EntityId,
    pub direction: Direction,
}

/// Immutable directed labelled multigraph. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    triples: BTreeSet<Triple>,
    fwd: BTreeMap<EntityId, Vec<(RelationId, EntityId)>>,
    rev: BTreeMap<EntityId, Vec<(RelationId, EntityId)>>,
    aliases: BTreeMap<EntityId, Vec<String>>,
    type_relation: RelationId,
}

impl KnowledgeGraph {
    /// Builds a graph from already-parsed triples and `(entity, alias)` pairs.
    /// Duplicate triples are collapsed; aliases accumulate in input order.
    pub fn from_parts(
        triples: impl IntoIterator<Item = Triple>,
        names: impl IntoIterator<Item = (EntityId, String)>,
        type_relation: RelationId,
    ) -> Self {
        let triples: BTreeSet<Triple> = triples.into_iter().collect();
        let mut fwd: BTreeMap<EntityId, Vec<(RelationId, EntityId)>> = BTreeMap::new();
        let mut rev: BTreeMap<EntityId, Vec<(RelationId, EntityId)>> = BTreeMap::new();
        // BTreeSet iteration is sorted by (s, p, o), so the per-subject lists
        // come out sorted by (p, o) already; the reverse lists need a sort.
        for t in &triples {
            fwd.entry(t.subject.clone())
                .or_default()
                .push((t.predicate.clone(), t.object.clone()));
            rev.entry(t.object.clone())
                .or_default()
                .push((t.predicate.clone(), t.subject.clone()));
        }
        for list in rev.values_mut() {
            list.sort();
        }

        let mut aliases: BTreeMap<EntityId, Vec<String>> = BTreeMap::new();
        for (id, alias) in names {
            aliases.entry(id).or_default().push(alias);
        }
        for t in &triples {
            if t.object.is_literal() && !aliases.contains_key(&t.object) {
                aliases.insert(t.object.clone(), vec![t.object.0.clone()]);
            }
        }

        KnowledgeGraph {
            triples,
            fwd,
            rev,
            aliases,
            type_relation,
        }
    }

    /// Reads the tab-separated triples and names formats. Lines starting with
    /// `#` and blank lines are skipped.
    pub fn load(
        triples: impl BufRead,
        names: impl BufRead,
        type_relation: RelationId,
    ) -> Result<Self> {
        let mut parsed = Vec::new();
        for (idx, line) in triples.lines().enumerate() {
            let line = line?;
            let Some(fields) = split_record(&line, 3, idx + 1)? else {
                continue;
            };
            parsed.push(Triple::new(fields[0], fields[1], fields[2]));
        }
        let mut parsed_names = Vec::new();
        for (idx, line) in names.lines().enumerate() {
            let line = line?;
            let Some(fields) = split_record(&line, 2, idx + 1)? else {
                continue;
            };
            parsed_names.push((EntityId::new(fields[0]), fields[1].to_string()));
        }
        Ok(Self::from_parts(parsed, parsed_names, type_relation))
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn type_relation(&self) -> &RelationId {
        &self.type_relation
    }

    /// Every entity mentioned by a triple or the name index, sorted.
    pub fn entities(&self) -> BTreeSet<&EntityId> {
        self.fwd
            .keys()
            .chain(self.rev.keys())
            .chain(self.aliases.keys())
            .collect()
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&EntityId, &[String])> {
        self.aliases.iter().map(|(id, a)| (id, a.as_slice()))
    }

    pub fn aliases_of(&self, e: &EntityId) -> &[String] {
        self.aliases.get(e).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, e: &EntityId) -> bool {
        self.fwd.contains_key(e) || self.rev.contains_key(e) || self.aliases.contains_key(e)
    }

    pub fn forward_edges(&self, e: &EntityId) -> &[(RelationId, EntityId)] {
        self.fwd.get(e).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn reverse_edges(&self, e: &EntityId) -> &[(RelationId, EntityId)] {
        self.rev.get(e).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Forward edges first, then reverse edges, each sorted by
    /// `(predicate, entity)`. Unknown entities have no neighbours.
    pub fn neighbors(&self, e: &EntityId) -> Vec<Edge> {
        let fwd = self.forward_edges(e).iter().map(|(r, o)| Edge {
            relation: r.clone(),
            entity: o.clone(),
            direction: Direction::Forward,
        });
        let rev = self.reverse_edges(e).iter().map(|(r, s)| Edge {
            relation: r.clone(),
            entity: s.clone(),
            direction: Direction::Reverse,
        });
        fwd.chain(rev).collect()
    }

    /// Objects of `(e, type_relation, o)`, sorted.
    pub fn typed_objects(&self, e: &EntityId) -> Vec<EntityId> {
        self.forward_edges(e)
            .iter()
            .filter(|(r, _)| *r == self.type_relation)
            .map(|(_, o)| o.clone())
            .collect()
    }

    /// First alias, lowercased and whitespace-split. Unnamed entities fall back
    /// to the last path segment of their id split on `_`.
    pub fn display_tokens(&self, e: &EntityId) -> Vec<String> {
        match self.aliases_of(e).first() {
            Some(alias) => text::whitespace_tokens(alias),
            None => {
                let last = e.0.rsplit('/').next().unwrap_or("");
                last.split('_')
                    .filter(|s| !s.is_empty())
                    .map(str::to_lowercase)
                    .collect()
            }
        }
    }

    /// Human-readable name: first alias, or the id itself.
    pub fn display_name(&self, e: &EntityId) -> String {
        self.aliases_of(e)
            .first()
            .cloned()
            .unwrap_or_else(|| e.0.clone())
    }

    pub fn to_triples_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&format!("{}\t{}\t{}\n", t.subject, t.predicate, t.object));
        }
        out
    }

    pub fn to_names_tsv(&self) -> String {
        let mut out = String::new();
        for (id, aliases) in &self.aliases {
            for a in aliases {
                out.push_str(&format!("{id}\t{a}\n"));
            }
        }
        out
    }
}

fn split_record(line: &str, arity: usize, line_no: usize) -> Result<Option<Vec<&str>>> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.trim().is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != arity {
        return Err(Error::MalformedLine {
            line: line_no,
            reason: format!(
                "expected {arity} tab-separated fields, found {}",
                fields.len()
            ),
        });
    }
    if fields.iter().any(|f| f.is_empty()) {
        return Err(Error::MalformedLine {
            line: line_no,
            reason: "empty field".into(),
        });
    }
    Ok(Some(fields))
}
