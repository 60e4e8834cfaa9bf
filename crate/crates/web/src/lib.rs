//! WebAssembly bindings for an in-browser demo over the built-in toy graph.
//!
//! Every operation returns a JSON string. Failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use lmkbqa::aspects::{lcs, MAX_CONTEXT_LEN};
use lmkbqa::embeddings::EmbeddingProvider;
use lmkbqa::kb::{Direction, KnowledgeGraph};
use lmkbqa::neural::{ModelDims, ModelWeights};
use lmkbqa::scoring::{
    answer_prepared, prepare_question, PreparedQuestion, DEFAULT_ANSWER_THRESHOLD,
};
use lmkbqa::toy::{toy_dataset, toy_kb};
use lmkbqa::training::{prepare_examples, train_prepared, TrainingConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const EMB_DIM: usize = 64;
const EMB_SEED: u64 = 1;
const CAP: usize = 512;

#[derive(Serialize)]
struct Epoch {
    epoch: usize,
    loss: f64,
    f1: f64,
}

#[derive(Serialize)]
struct RankedCandidate {
    index: usize,
    name: String,
    id: String,
    score: f64,
    selected: bool,
    path: Vec<String>,
}

#[derive(Serialize)]
struct Ranking {
    topic: String,
    question: Vec<String>,
    candidates: Vec<RankedCandidate>,
}

#[derive(Serialize)]
struct Heatmap {
    candidate: String,
    question: Vec<String>,
    context: Vec<String>,
    /// `weights[i][j]`: attention of context row `i` on question token `j`.
    weights: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct NeighbourMatch {
    neighbour: String,
    relation: String,
    common: Vec<String>,
}

#[derive(Serialize)]
struct Aspects {
    candidate: String,
    type_tokens: Vec<String>,
    path_tokens: Vec<String>,
    context_tokens: Vec<String>,
    neighbours: Vec<NeighbourMatch>,
    sequence: Vec<String>,
    truncated: bool,
}

fn json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn path_label(kb: &KnowledgeGraph, q: &PreparedQuestion, index: usize) -> Vec<String> {
    let path = &q.candidates[index].path;
    let mut out = vec![kb.display_name(&q.topic.entity)];
    for (k, (rel, dir)) in path.relations.iter().enumerate() {
        let arrow = match dir {
            Direction::Forward => "->",
            Direction::Reverse => "<-",
        };
        out.push(format!("{arrow} {rel}"));
        let node = if k + 1 < path.relations.len() {
            path.intermediate.as_ref().unwrap_or(&path.entity)
        } else {
            &path.entity
        };
        out.push(kb.display_name(node));
    }
    out
}

/// A small model trained on the toy question set, plus the graph it answers
/// over.
#[wasm_bindgen]
pub struct Demo {
    kb: KnowledgeGraph,
    provider: EmbeddingProvider,
    weights: ModelWeights,
    history: Vec<Epoch>,
}

#[wasm_bindgen]
impl Demo {
    /// Trains a width-32 model on the toy questions until every one is
    /// answered exactly (at most `max_epochs`).
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, max_epochs: u32) -> Demo {
        let kb = toy_kb();
        let provider = EmbeddingProvider::stub(EMB_DIM, EMB_SEED);
        let cfg = TrainingConfig {
            seed: u64::from(seed),
            max_epochs: max_epochs as usize,
            stop_at_f1: Some(1.0),
            ..TrainingConfig::default()
        };
        let dims = ModelDims::new(EMB_DIM, 32, 4, 64).expect("valid dims");
        let init = ModelWeights::random(dims, cfg.seed);
        let mut history = Vec::new();
        let weights = prepare_examples(&kb, &provider, &toy_dataset(), CAP)
            .and_then(|ex| {
                train_prepared(init.clone(), &kb, &ex, &ex, &cfg, |r| {
                    history.push(Epoch {
                        epoch: r.epoch,
                        loss: r.loss,
                        f1: r.val_f1,
                    })
                })
            })
            .map(|o| o.weights)
            .unwrap_or(init);
        Demo {
            kb,
            provider,
            weights,
            history,
        }
    }

    /// Per-epoch loss and training F1 as JSON.
    pub fn history(&self) -> String {
        json(Ok(&self.history))
    }

    /// The toy questions with their gold answers.
    pub fn questions() -> String {
        json(Ok(toy_dataset()))
    }

    /// Every candidate of `question`, best first, with score and selection.
    pub fn rank(&self, question: &str) -> String {
        json(self.ranking(question))
    }

    /// Cross-attention weights between the candidate's context and the
    /// question.
    pub fn attention(&self, question: &str, candidate: usize) -> String {
        json(self.heatmap(question, candidate))
    }

    /// Type, path and context tokens of a candidate, with the common
    /// subsequence found for each neighbour.
    pub fn aspects(&self, question: &str, candidate: usize) -> String {
        json(self.aspect_view(question, candidate))
    }
}

impl Demo {
    fn prepare(&self, question: &str) -> Result<PreparedQuestion, String> {
        prepare_question(&self.kb, &self.provider, question, CAP).map_err(|e| e.to_string())
    }

    fn ranking(&self, question: &str) -> Result<Ranking, String> {
        let q = self.prepare(question)?;
        let set = answer_prepared(&self.weights, &q, DEFAULT_ANSWER_THRESHOLD)
            .map_err(|e| e.to_string())?;
        let candidates = set
            .ranked
            .iter()
            .map(|(id, score)| {
                let index = q
                    .candidates
                    .iter()
                    .position(|c| c.entity() == id)
                    .expect("ranked candidate");
                RankedCandidate {
                    index,
                    name: self.kb.display_name(id),
                    id: id.to_string(),
                    score: *score,
                    selected: set.selected.contains(id),
                    path: path_label(&self.kb, &q, index),
                }
            })
            .collect();
        Ok(Ranking {
            topic: self.kb.display_name(&q.topic.entity),
            question: q.delexicalized.clone(),
            candidates,
        })
    }

    fn heatmap(&self, question: &str, candidate: usize) -> Result<Heatmap, String> {
        let q = self.prepare(question)?;
        let c = q.candidates.get(candidate).ok_or("no such candidate")?;
        let trace = c.trace(&self.weights).map_err(|e| e.to_string())?;
        let probs = &trace.attention().row_probs;
        let tokens = &c.sequence.tokens;
        Ok(Heatmap {
            candidate: self.kb.display_name(c.entity()),
            question: tokens[c.sequence.question_range()].to_vec(),
            context: tokens[c.sequence.context_range()].to_vec(),
            weights: probs.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
    }

    fn aspect_view(&self, question: &str, candidate: usize) -> Result<Aspects, String> {
        let q = self.prepare(question)?;
        let c = q.candidates.get(candidate).ok_or("no such candidate")?;
        let on_path: Vec<_> = c
            .path
            .path_nodes(&q.topic.entity)
            .chain([c.entity()])
            .collect();
        let mut seen = Vec::new();
        let mut neighbours = Vec::new();
        for edge in self.kb.neighbors(c.entity()) {
            if on_path.contains(&&edge.entity) || seen.contains(&edge.entity) {
                continue;
            }
            neighbours.push(NeighbourMatch {
                neighbour: self.kb.display_name(&edge.entity),
                relation: edge.relation.to_string(),
                common: lcs(&self.kb.display_tokens(&edge.entity), &q.question.tokens),
            });
            seen.push(edge.entity);
        }
        let a = &c.aspects;
        Ok(Aspects {
            candidate: self.kb.display_name(c.entity()),
            type_tokens: a.type_tokens.clone(),
            path_tokens: a.path_tokens.clone(),
            context_tokens: a.context_tokens.clone(),
            neighbours,
            sequence: c.sequence.tokens.clone(),
            truncated: a.combined().len() > MAX_CONTEXT_LEN,
        })
    }
}
