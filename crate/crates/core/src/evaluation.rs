//! Question/answer datasets and the averaged F1 metric.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::kb::KnowledgeGraph;
use crate::neural::ModelWeights;
use crate::scoring::{answer_prepared, prepare_question, PreparedQuestion};
use crate::text::normalize_answer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: u64,
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set-level precision, recall and F1 over normalized answer strings.
pub fn answer_f1<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T]) -> F1Score {
    let pred: BTreeSet<String> = pred.iter().map(|s| normalize_answer(s.as_ref())).collect();
    let gold: BTreeSet<String> = gold.iter().map(|s| normalize_answer(s.as_ref())).collect();
    let hits = pred.intersection(&gold).count() as f64;
    let precision = if pred.is_empty() {
        0.0
    } else {
        hits / pred.len() as f64
    };
    let recall = if gold.is_empty() {
        0.0
    } else {
        hits / gold.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1Score {
        precision,
        recall,
        f1,
    }
}

pub fn macro_f1(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// JSON Lines, one `{"id", "question", "answers"}` object per line. Blank
/// lines are skipped.
pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<QAPair>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QAPair = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        if pair.question.trim().is_empty() {
            return Err(Error::MalformedRecord {
                line: idx + 1,
                reason: "blank question".into(),
            });
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QAPair>> {
    parse_dataset(BufReader::new(File::open(path)?))
}

pub fn dataset_to_jsonl(pairs: &[QAPair]) -> String {
    pairs
        .iter()
        .map(|p| serde_json::to_string(p).expect("plain struct") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionResult {
    pub id: u64,
    pub predicted: Vec<String>,
    pub score: F1Score,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_question: Vec<QuestionResult>,
    pub macro_f1: f64,
}

/// Answers one pair. A question that cannot be linked to the graph predicts
/// nothing (and so scores zero) instead of failing the run.
fn predict(
    weights: &ModelWeights,
    kb: &KnowledgeGraph,
    prepared: Option<&PreparedQuestion>,
    threshold: f64,
) -> Result<Vec<String>> {
    let Some(prepared) = prepared else {
        return Ok(Vec::new());
    };
    let set = answer_prepared(weights, prepared, threshold)?;
    Ok(set.selected.iter().map(|e| kb.display_name(e)).collect())
}

/// `prepare_question` with linking failures mapped to `None`.
pub fn prepare_or_skip(
    kb: &KnowledgeGraph,
    provider: &EmbeddingProvider,
    text: &str,
    candidate_cap: usize,
) -> Result<Option<PreparedQuestion>> {
    match prepare_question(kb, provider, text, candidate_cap) {
        Ok(p) => Ok(Some(p)),
        Err(Error::NoTopicEntity | Error::EmptyQuestion) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores already-prepared questions. Results are in input order regardless
/// of `threads`.
pub fn evaluate_prepared(
    weights: &ModelWeights,
    kb: &KnowledgeGraph,
    items: &[(&QAPair, Option<&PreparedQuestion>)],
    threshold: f64,
    threads: usize,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let one = |(pair, prepared): &(&QAPair, Option<&PreparedQuestion>)| -> Result<QuestionResult> {
        let predicted = predict(weights, kb, *prepared, threshold)?;
        let score = answer_f1(&predicted, &pair.answers);
        Ok(QuestionResult {
            id: pair.id,
            predicted,
            score,
        })
    };
    let per_question: Vec<QuestionResult> = if threads <= 1 {
        items.iter().map(one).collect::<Result<_>>()?
    } else {
        let chunk = items.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = items
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(one).collect::<Result<Vec<_>>>()))
                .collect();
            let mut out = Vec::with_capacity(items.len());
            for h in handles {
                out.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, Error>(out)
        })?
    };
    let f1s: Vec<f64> = per_question.iter().map(|r| r.score.f1).collect();
    Ok(EvalReport {
        macro_f1: macro_f1(&f1s)?,
        per_question,
    })
}

/// Runs the full answering pipeline over a dataset.
pub fn evaluate(
    weights: &ModelWeights,
    provider: &EmbeddingProvider,
    kb: &KnowledgeGraph,
    dataset: &[QAPair],
    threshold: f64,
    candidate_cap: usize,
    threads: usize,
) -> Result<EvalReport> {
    let prepared = dataset
        .iter()
        .map(|p| prepare_or_skip(kb, provider, &p.question, candidate_cap))
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<_> = dataset
        .iter()
        .zip(prepared.iter().map(Option::as_ref))
        .collect();
    evaluate_prepared(weights, kb, &items, threshold, threads)
}
