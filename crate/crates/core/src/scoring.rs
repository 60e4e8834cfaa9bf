//! End-to-end answering: link, generate, describe, embed, score, rank, select.

use std::cmp::Ordering;

use crate::aspects::{
    assemble_sequence, build_aspects, delexicalize, normalize_question, AnswerAspects,
    QuestionTokens, TokenSequence,
};
use crate::candidates::{generate_candidates, identify_topic_entity, CandidatePath, TopicMatch};
use crate::embeddings::{EmbeddingMatrix, EmbeddingProvider};
use crate::error::Result;
use crate::kb::{EntityId, KnowledgeGraph};
use crate::neural::model::{forward, ScoreTrace};
use crate::neural::ModelWeights;

/// Candidates scoring at least this fraction of the top score are selected.
pub const DEFAULT_ANSWER_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredAnswerSet {
    pub topic: EntityId,
    /// Sorted by score descending, then entity id ascending.
    pub ranked: Vec<(EntityId, f64)>,
    /// Selected entities in rank order.
    pub selected: Vec<EntityId>,
}

/// A candidate with its aspects, assembled sequence and embedding.
#[derive(Debug, Clone)]
pub struct PreparedCandidate {
    pub path: CandidatePath,
    pub aspects: AnswerAspects,
    pub sequence: TokenSequence,
    pub embedding: EmbeddingMatrix,
}

impl PreparedCandidate {
    pub fn entity(&self) -> &EntityId {
        &self.path.entity
    }

    pub fn trace(&self, w: &ModelWeights) -> Result<ScoreTrace> {
        forward(
            w,
            self.embedding.view(),
            self.sequence.question_range(),
            self.sequence.context_range(),
            None,
        )
    }

    pub fn score(&self, w: &ModelWeights) -> Result<f64> {
        Ok(self.trace(w)?.score)
    }
}

/// Everything about a question that does not depend on the weights.
#[derive(Debug, Clone)]
pub struct PreparedQuestion {
    pub question: QuestionTokens,
    pub delexicalized: Vec<String>,
    pub topic: TopicMatch,
    pub candidates: Vec<PreparedCandidate>,
}

pub fn prepare_candidate(
    kb: &KnowledgeGraph,
    provider: &EmbeddingProvider,
    question: &QuestionTokens,
    delexicalized: &[String],
    topic: &EntityId,
    path: CandidatePath,
) -> Result<PreparedCandidate> {
    let aspects = build_aspects(kb, topic, &path, question);
    let sequence = assemble_sequence(delexicalized, &aspects);
    let embedding = provider.embed(&sequence)?;
    Ok(PreparedCandidate {
        path,
        aspects,
        sequence,
        embedding,
    })
}

pub fn prepare_question(
    kb: &KnowledgeGraph,
    provider: &EmbeddingProvider,
    text: &str,
    candidate_cap: usize,
) -> Result<PreparedQuestion> {
    let question = normalize_question(text)?;
    let delexicalized = delexicalize(&question.tokens);
    let topic = identify_topic_entity(&question.tokens, kb)?;
    let candidates = generate_candidates(kb, &topic.entity, candidate_cap)
        .into_iter()
        .map(|path| prepare_candidate(kb, provider, &question, &delexicalized, &topic.entity, path))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedQuestion {
        question,
        delexicalized,
        topic,
        candidates,
    })
}

/// Similarity between a (delexicalized) question and one candidate's aspects.
pub fn score_candidate(
    weights: &ModelWeights,
    provider: &EmbeddingProvider,
    question: &[String],
    aspects: &AnswerAspects,
) -> Result<f64> {
    let sequence = assemble_sequence(question, aspects);
    let embedding = provider.embed(&sequence)?;
    let t = forward(
        weights,
        embedding.view(),
        sequence.question_range(),
        sequence.context_range(),
        None,
    )?;
    Ok(t.score)
}

fn by_rank(a: &(EntityId, f64), b: &(EntityId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

pub fn rank(mut scored: Vec<(EntityId, f64)>) -> Vec<(EntityId, f64)> {
    scored.sort_by(by_rank);
    scored
}

/// Relative-threshold selection over a ranked list. With a positive top score
/// `s*`, every candidate scoring at least `threshold * s*` is kept; otherwise
/// only the top candidate.
pub fn select_answers(ranked: &[(EntityId, f64)], threshold: f64) -> Vec<EntityId> {
    let Some((top_id, top)) = ranked.first() else {
        return Vec::new();
    };
    if *top <= 0.0 {
        return vec![top_id.clone()];
    }
    let cutoff = threshold * top;
    ranked
        .iter()
        .filter(|(_, s)| *s >= cutoff)
        .map(|(e, _)| e.clone())
        .collect()
}

pub fn answer_prepared(
    weights: &ModelWeights,
    prepared: &PreparedQuestion,
    threshold: f64,
) -> Result<ScoredAnswerSet> {
    let scored = prepared
        .candidates
        .iter()
        .map(|c| Ok((c.entity().clone(), c.score(weights)?)))
        .collect::<Result<Vec<_>>>()?;
    let ranked = rank(scored);
    let selected = select_answers(&ranked, threshold);
    Ok(ScoredAnswerSet {
        topic: prepared.topic.entity.clone(),
        ranked,
        selected,
    })
}

/// Full pipeline for one question. An isolated topic yields an empty set.
pub fn answer_question(
    weights: &ModelWeights,
    provider: &EmbeddingProvider,
    kb: &KnowledgeGraph,
    question: &str,
    threshold: f64,
    candidate_cap: usize,
) -> Result<ScoredAnswerSet> {
    let prepared = prepare_question(kb, provider, question, candidate_cap)?;
    answer_prepared(weights, &prepared, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::kb::{RelationId, Triple};
    use crate::neural::ModelDims;

    fn e(s: &str) -> EntityId {
        EntityId::new(s)
    }

    #[test]
    fn selection_examples() {
        let ranked = rank(vec![(e("c"), 0.3), (e("a"), 0.9), (e("b"), 0.7)]);
        assert_eq!(select_answers(&ranked, 0.7), vec![e("a"), e("b")]);
        assert_eq!(select_answers(&[(e("x"), 0.2)], 0.7), vec![e("x")]);
        let equal = vec![(e("a"), 0.5), (e("b"), 0.5), (e("c"), 0.5)];
        assert_eq!(select_answers(&equal, 0.7).len(), 3);
        assert!(select_answers(&[], 0.7).is_empty());
        let negative = rank(vec![(e("a"), -0.2), (e("b"), -0.1)]);
        assert_eq!(select_answers(&negative, 0.7), vec![e("b")]);
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let ranked = rank(vec![(e("/m/b"), 0.5), (e("/m/a"), 0.5), (e("/m/c"), 0.9)]);
        let ids: Vec<_> = ranked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["/m/c", "/m/a", "/m/b"]);
    }

    fn tiny_kb() -> KnowledgeGraph {
        KnowledgeGraph::from_parts(
            [
                Triple::new("/m/x", "/loc/country/capital", "/m/c1"),
                Triple::new("/m/x", "/loc/country/capital", "/m/c2"),
            ],
            [
                ("/m/x", "Xland"),
                ("/m/lonely", "Lonely"),
                ("/m/c1", "Alpha"),
                ("/m/c2", "Beta"),
            ]
            .map(|(id, a)| (e(id), a.to_string())),
            RelationId::new("is_a"),
        )
    }

    #[test]
    fn identical_aspects_tie_and_rank_by_id() {
        let kb = tiny_kb();
        let provider = EmbeddingProvider::stub(8, 1);
        let w = ModelWeights::random(ModelDims::new(8, 8, 2, 8).unwrap(), 2);
        let set =
            answer_question(&w, &provider, &kb, "what is the capital of xland", 0.7, 512).unwrap();
        assert_eq!(set.ranked.len(), 2);
        assert_eq!(set.ranked[0].1.to_bits(), set.ranked[1].1.to_bits());
        assert_eq!(set.ranked[0].0, e("/m/c1"));
        let expected = if set.ranked[0].1 > 0.0 { 2 } else { 1 };
        assert_eq!(set.selected.len(), expected);
    }

    #[test]
    fn isolated_topic_gives_empty_answer() {
        let kb = tiny_kb();
        let provider = EmbeddingProvider::stub(8, 1);
        let w = ModelWeights::random(ModelDims::new(8, 8, 2, 8).unwrap(), 2);
        let set = answer_question(&w, &provider, &kb, "who is lonely", 0.7, 512).unwrap();
        assert_eq!(set.topic, e("/m/lonely"));
        assert!(set.ranked.is_empty() && set.selected.is_empty());
        assert!(matches!(
            answer_question(&w, &provider, &kb, "who is nobody", 0.7, 512),
            Err(Error::NoTopicEntity)
        ));
    }

    #[test]
    fn empty_context_scores_on_separator_row() {
        let provider = EmbeddingProvider::stub(8, 1);
        let w = ModelWeights::random(ModelDims::new(8, 8, 2, 8).unwrap(), 2);
        let q: Vec<String> = vec!["who".into()];
        let s = score_candidate(&w, &provider, &q, &AnswerAspects::default()).unwrap();
        assert!(s.is_finite());
    }
}
