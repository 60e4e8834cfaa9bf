//! Question normalization, delexicalization and the three answer aspects
//! (type, path, context) that make up a candidate's text.

use std::collections::HashSet;
use std::ops::Range;

use crate::candidates::CandidatePath;
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeGraph, RelationId};
use crate::text;

pub const CLS: &str = "<CLS>";
pub const SEP: &str = "<SEP>";
pub const DATE: &str = "<date>";
pub const NUMBER: &str = "<number>";
pub const ORDINAL: &str = "<ordinal>";

/// Maximum number of question tokens kept in a sequence.
pub const MAX_QUESTION_LEN: usize = 18;
/// Maximum number of context tokens kept in a sequence.
pub const MAX_CONTEXT_LEN: usize = 96;

const ORDINAL_WORDS: [&str; 10] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionTokens {
    pub tokens: Vec<String>,
    pub raw: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnswerAspects {
    pub type_tokens: Vec<String>,
    pub path_tokens: Vec<String>,
    pub context_tokens: Vec<String>,
}

impl AnswerAspects {
    /// type ++ path ++ context, untruncated.
    pub fn combined(&self) -> Vec<String> {
        self.type_tokens
            .iter()
            .chain(&self.path_tokens)
            .chain(&self.context_tokens)
            .cloned()
            .collect()
    }
}

/// `<CLS> question <SEP> context`, with both parts already truncated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub question_len: usize,
    pub context_len: usize,
}

impl TokenSequence {
    /// Lookup key for precomputed embeddings: tokens joined by single spaces.
    pub fn key(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn question_range(&self) -> Range<usize> {
        1..1 + self.question_len
    }

    /// Context rows; when the context is empty this is the `<SEP>` row alone.
    pub fn context_range(&self) -> Range<usize> {
        if self.context_len == 0 {
            1 + self.question_len..2 + self.question_len
        } else {
            2 + self.question_len..2 + self.question_len + self.context_len
        }
    }
}

pub fn normalize_question(text: &str) -> Result<QuestionTokens> {
    let tokens: Vec<String> = text::tokenize(text)
        .into_iter()
        .filter(|t| !t.contains('?'))
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    Ok(QuestionTokens {
        tokens,
        raw: text.to_string(),
    })
}

/// Replaces dates, ordinals and other numerals by class placeholders.
pub fn delexicalize(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| delexicalize_token(t)).collect()
}

fn delexicalize_token(tok: &str) -> String {
    if is_ordinal(tok) {
        return ORDINAL.to_string();
    }
    if tok.len() == 4 && tok.bytes().all(|b| b.is_ascii_digit()) {
        let year: u32 = tok.parse().unwrap_or(0);
        if (1000..=2100).contains(&year) {
            return DATE.to_string();
        }
    }
    if is_numeral(tok) {
        return NUMBER.to_string();
    }
    tok.to_string()
}

fn is_numeral(tok: &str) -> bool {
    let bytes = tok.as_bytes();
    !bytes.is_empty()
        && bytes[0].is_ascii_digit()
        && bytes[bytes.len() - 1].is_ascii_digit()
        && bytes
            .iter()
            .all(|b| b.is_ascii_digit() || *b == b'.' || *b == b',')
}

fn is_ordinal(tok: &str) -> bool {
    if ORDINAL_WORDS.contains(&tok) {
        return true;
    }
    let digits = tok.bytes().take_while(u8::is_ascii_digit).count();
    digits > 0 && matches!(&tok[digits..], "st" | "nd" | "rd" | "th")
}

/// Relation path to tokens: the leading domain segment is dropped, the rest is
/// split on `/` and `_`.
pub fn relation_tokens(r: &RelationId) -> Vec<String> {
    let segments: Vec<&str> = r.as_str().split('/').filter(|s| !s.is_empty()).collect();
    let kept = if segments.len() > 1 {
        &segments[1..]
    } else {
        &segments[..]
    };
    kept.iter()
        .flat_map(|s| s.split('_'))
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Longest common subsequence. The backtrack takes a match whenever the two
/// heads agree, so among equal-length answers the one matching earliest in
/// `a` is returned.
pub fn lcs<T: PartialEq + Clone>(a: &[T], b: &[T]) -> Vec<T> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    // suffix[i * w + j] = |lcs(a[i..], b[j..])|
    let mut suffix = vec![0usize; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i * w + j] = if a[i] == b[j] {
                suffix[(i + 1) * w + j + 1] + 1
            } else {
                suffix[(i + 1) * w + j].max(suffix[i * w + j + 1])
            };
        }
    }
    let mut out = Vec::with_capacity(suffix[0]);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            out.push(a[i].clone());
            i += 1;
            j += 1;
        } else if suffix[(i + 1) * w + j] > suffix[i * w + j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Builds the type, path and context aspects of a candidate. `question` is the
/// normalized but not yet delexicalized question; the context tokens that come
/// back are delexicalized.
pub fn build_aspects(
    kb: &KnowledgeGraph,
    topic: &EntityId,
    cand: &CandidatePath,
    question: &QuestionTokens,
) -> AnswerAspects {
    let type_tokens = kb
        .typed_objects(&cand.entity)
        .iter()
        .flat_map(|t| kb.display_tokens(t))
        .collect();
    let path_tokens = cand
        .relations
        .iter()
        .flat_map(|(r, _)| relation_tokens(r))
        .collect();

    let excluded: HashSet<&EntityId> = cand
        .path_nodes(topic)
        .chain(std::iter::once(&cand.entity))
        .collect();
    let mut seen: HashSet<EntityId> = HashSet::new();
    let mut context = Vec::new();
    for edge in kb.neighbors(&cand.entity) {
        if excluded.contains(&edge.entity) || !seen.insert(edge.entity.clone()) {
            continue;
        }
        context.extend(lcs(&kb.display_tokens(&edge.entity), &question.tokens));
    }

    AnswerAspects {
        type_tokens,
        path_tokens,
        context_tokens: delexicalize(&context),
    }
}

/// Lays out `<CLS> question <SEP> context` with the 18/96 caps applied.
pub fn assemble_sequence(question: &[String], aspects: &AnswerAspects) -> TokenSequence {
    let q = &question[..question.len().min(MAX_QUESTION_LEN)];
    let mut context = aspects.combined();
    context.truncate(MAX_CONTEXT_LEN);

    let mut tokens = Vec::with_capacity(q.len() + context.len() + 2);
    tokens.push(CLS.to_string());
    tokens.extend(q.iter().cloned());
    tokens.push(SEP.to_string());
    let context_len = context.len();
    tokens.extend(context);
    TokenSequence {
        tokens,
        question_len: q.len(),
        context_len,
    }
}
