//! Topic-entity linking and 2-hop candidate generation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kb::{Direction, EntityId, KnowledgeGraph, RelationId};
use crate::text;

pub const DEFAULT_CANDIDATE_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicMatch {
    pub entity: EntityId,
    /// Half-open token span `[start, end)` in the question.
    pub matched_span: (usize, usize),
    pub alias_len: usize,
}

/// Path from the topic entity to a candidate. `relations` is in
/// topic-to-candidate order; each direction is relative to that walk.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CandidatePath {
    pub entity: EntityId,
    pub relations: Vec<(RelationId, Direction)>,
    pub intermediate: Option<EntityId>,
}

impl CandidatePath {
    pub fn hops(&self) -> usize {
        self.relations.len()
    }

    /// Entities on the path other than the candidate itself.
    pub fn path_nodes<'a>(&'a self, topic: &'a EntityId) -> impl Iterator<Item = &'a EntityId> {
        std::iter::once(topic).chain(self.intermediate.iter())
    }
}

/// Longest-alias-match linker over the name index. Ties go to the earliest
/// span start, then to the lexicographically smallest entity id.
pub fn identify_topic_entity(
    question_tokens: &[String],
    kb: &KnowledgeGraph,
) -> Result<TopicMatch> {
    let question: Vec<String> = question_tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut best: Option<TopicMatch> = None;
    for (entity, aliases) in kb.aliases() {
        for alias in aliases {
            let alias_tokens = text::tokenize(alias);
            let len = alias_tokens.len();
            if len == 0 || len > question.len() {
                continue;
            }
            let Some(start) = question
                .windows(len)
                .position(|w| w == alias_tokens.as_slice())
            else {
                continue;
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    (len, std::cmp::Reverse(start), std::cmp::Reverse(entity))
                        > (
                            b.alias_len,
                            std::cmp::Reverse(b.matched_span.0),
                            std::cmp::Reverse(&b.entity),
                        )
                }
            };
            if better {
                best = Some(TopicMatch {
                    entity: entity.clone(),
                    matched_span: (start, start + len),
                    alias_len: len,
                });
            }
        }
    }
    best.ok_or(Error::NoTopicEntity)
}

/// Every entity within two edges of `topic`, in either direction, excluding
/// the topic. Each candidate keeps its shortest path, ties broken by the
/// smallest relation sequence. Output is ordered by (hops, entity id) and
/// truncated to `cap`.
pub fn generate_candidates(
    kb: &KnowledgeGraph,
    topic: &EntityId,
    cap: usize,
) -> Vec<CandidatePath> {
    let mut best: BTreeMap<EntityId, CandidatePath> = BTreeMap::new();
    let mut offer = |path: CandidatePath| {
        if &path.entity == topic {
            return;
        }
        match best.get(&path.entity) {
            Some(cur)
                if (cur.hops(), &cur.relations, &cur.intermediate)
                    <= (path.hops(), &path.relations, &path.intermediate) => {}
            _ => {
                best.insert(path.entity.clone(), path);
            }
        }
    };

    for first in kb.neighbors(topic) {
        offer(CandidatePath {
            entity: first.entity.clone(),
            relations: vec![(first.relation.clone(), first.direction)],
            intermediate: None,
        });
        for second in kb.neighbors(&first.entity) {
            offer(CandidatePath {
                entity: second.entity.clone(),
                relations: vec![
                    (first.relation.clone(), first.direction),
                    (second.relation, second.direction),
                ],
                intermediate: Some(first.entity.clone()),
            });
        }
    }

    let mut out: Vec<CandidatePath> = best.into_values().collect();
    out.sort_by(|a, b| (a.hops(), &a.entity).cmp(&(b.hops(), &b.entity)));
    out.truncate(cap);
    out
}
