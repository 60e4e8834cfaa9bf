//! Pairwise hinge training with hand-derived gradients and Adam.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_prepared, prepare_or_skip, QAPair};
use crate::io_util::Reader;
use crate::kb::KnowledgeGraph;
use crate::neural::encoder::Dropout;
use crate::neural::model::{backward as model_backward, forward, ScoreTrace};
use crate::neural::ModelWeights;
use crate::scoring::{PreparedCandidate, PreparedQuestion, DEFAULT_ANSWER_THRESHOLD};
use crate::text::normalize_answer;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LMKW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub lr_decay_factor: f64,
    pub patience_epochs: usize,
    /// Smallest validation F1 gain that counts as an improvement.
    pub min_delta: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub answer_threshold: f64,
    /// Stop as soon as validation macro-F1 reaches this value.
    pub stop_at_f1: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.01,
            batch_size: 4,
            dropout: 0.3,
            margin: 0.5,
            negatives_per_positive: 8,
            lr_decay_factor: 0.1,
            patience_epochs: 3,
            min_delta: 1e-4,
            max_epochs: 50,
            seed: 1,
            answer_threshold: DEFAULT_ANSWER_THRESHOLD,
            stop_at_f1: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        // false for NaN as well
        let positive = |x: f64| x > 0.0;
        if !positive(self.lr) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.negatives_per_positive == 0 {
            return bad("batch_size, max_epochs and negatives_per_positive must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !positive(self.margin) || !positive(self.lr_decay_factor) {
            return bad("margin and lr_decay_factor must be positive");
        }
        if self.patience_epochs < 1 {
            return bad("patience_epochs must be at least 1");
        }
        if !positive(self.answer_threshold) {
            return bad("answer_threshold must be positive");
        }
        Ok(())
    }
}

// ----------------------------------------------------------------------- loss

/// `sum_neg max(0, margin - pos + neg)`.
pub fn hinge_loss(pos_score: f64, neg_scores: &[f64], margin: f64) -> f64 {
    neg_scores
        .iter()
        .map(|n| (margin - pos_score + n).max(0.0))
        .sum()
}

/// One positive candidate and the negatives it is ranked against.
#[derive(Debug, Clone)]
pub struct Instance {
    pub positive: PreparedCandidate,
    pub negatives: Vec<PreparedCandidate>,
}

fn trace(
    w: &ModelWeights,
    c: &PreparedCandidate,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<ScoreTrace> {
    forward(
        w,
        c.embedding.view(),
        c.sequence.question_range(),
        c.sequence.context_range(),
        dropout,
    )
}

/// Forward and backward over one instance. Dropout masks drawn in the forward
/// pass are reused by the backward pass through the traces.
fn instance_backward(
    w: &ModelWeights,
    inst: &Instance,
    margin: f64,
    mut dropout: Option<&mut Dropout<'_>>,
    grads: &mut ModelWeights,
) -> Result<f64> {
    let pos = trace(w, &inst.positive, dropout.as_deref_mut())?;
    let negs = inst
        .negatives
        .iter()
        .map(|n| trace(w, n, dropout.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut dpos = 0.0;
    for n in &negs {
        let slack = margin - pos.score + n.score;
        if slack > 0.0 {
            loss += slack;
            dpos -= 1.0;
            model_backward(w, n, 1.0, grads);
        }
    }
    model_backward(w, &pos, dpos, grads);
    Ok(loss)
}

/// Total hinge loss of a batch and its exact gradient.
pub fn backward(
    w: &ModelWeights,
    batch: &[Instance],
    margin: f64,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(f64, ModelWeights)> {
    let mut grads = w.zeros_like();
    let mut loss = 0.0;
    for inst in batch {
        loss += instance_backward(w, inst, margin, dropout.as_deref_mut(), &mut grads)?;
    }
    Ok((loss, grads))
}

type BranchPattern = (Vec<bool>, Vec<usize>);

/// Loss without dropout, plus the branch pattern of every pass.
fn probe(
    w: &ModelWeights,
    inst: &Instance,
    margin: f64,
) -> Result<(f64, Vec<BranchPattern>, Vec<bool>)> {
    let pos = trace(w, &inst.positive, None)?;
    let negs = inst
        .negatives
        .iter()
        .map(|n| trace(w, n, None))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = negs.iter().map(|t| t.score).collect();
    let active = scores
        .iter()
        .map(|n| margin - pos.score + n > 0.0)
        .collect();
    let mut patterns = vec![pos.branch_pattern()];
    patterns.extend(negs.iter().map(ScoreTrace::branch_pattern));
    Ok((hinge_loss(pos.score, &scores, margin), patterns, active))
}

// ----------------------------------------------------------------- grad check

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    /// Scalars whose probe straddled a ReLU, max-pool or hinge switch; the
    /// loss is not differentiable there, so they are left out.
    pub skipped: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of the dropout-free loss.
#[allow(clippy::needless_range_loop)]
pub fn compare_gradients(
    w: &ModelWeights,
    inst: &Instance,
    margin: f64,
    analytic: &ModelWeights,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let (_, base_pattern, base_active) = probe(w, inst, margin)?;
    let layout: Vec<(String, usize)> = w
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.data.len()))
        .collect();
    let analytic: Vec<Vec<f64>> = analytic
        .tensors()
        .into_iter()
        .map(|t| t.data.to_vec())
        .collect();
    let mut probe_w = w.clone();
    let mut tensors = Vec::with_capacity(layout.len());
    let (mut skipped, mut checked) = (0, 0);
    for (ti, (name, len)) in layout.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..len {
            let orig = probe_w.tensors_mut()[ti][k];
            probe_w.tensors_mut()[ti][k] = orig + h;
            let (plus, p_pat, p_act) = probe(&probe_w, inst, margin)?;
            probe_w.tensors_mut()[ti][k] = orig - h;
            let (minus, m_pat, m_act) = probe(&probe_w, inst, margin)?;
            probe_w.tensors_mut()[ti][k] = orig;
            if p_pat != base_pattern
                || m_pat != base_pattern
                || p_act != base_active
                || m_act != base_active
            {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic[ti][k], numeric));
        }
        tensors.push(TensorCheck {
            name,
            max_rel_error: worst,
            passed: worst < tol,
        });
    }
    Ok(GradCheckReport {
        tensors,
        skipped,
        checked,
    })
}

/// Finite-difference verification of [`backward`] on one instance.
pub fn grad_check(
    w: &ModelWeights,
    inst: &Instance,
    margin: f64,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = backward(w, std::slice::from_ref(inst), margin, None)?;
    compare_gradients(w, inst, margin, &analytic, h, tol)
}

/// Width 8, two heads, sequence parts of at most six tokens, two negatives.
pub const CHECK_DIMS: (usize, usize, usize, usize) = (8, 8, 2, 16);
/// Wide enough that every hinge term is active for cosine scores.
pub const CHECK_MARGIN: f64 = 2.5;

/// A random tiny model and instance for gradient verification.
pub fn random_check_case(seed: u64) -> (ModelWeights, Instance) {
    use crate::aspects::{assemble_sequence, AnswerAspects};
    use crate::candidates::CandidatePath;
    use crate::kb::EntityId;
    use crate::neural::ModelDims;
    use rand::Rng;

    const VOCAB: [&str; 10] = [
        "what", "who", "language", "speak", "capital", "city", "country", "in", "of", "born",
    ];
    let (e, d, h, ff) = CHECK_DIMS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let provider = EmbeddingProvider::stub(e, seed);
    let weights = ModelWeights::random(ModelDims::new(e, d, h, ff).expect("valid dims"), seed);
    let mut words = |lo: usize| -> Vec<String> {
        let n = rng.gen_range(lo..=6);
        (0..n)
            .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
            .collect()
    };
    let question = words(1);
    let candidate = |name: String, context: Vec<String>| {
        let aspects = AnswerAspects {
            path_tokens: context,
            ..Default::default()
        };
        let sequence = assemble_sequence(&question, &aspects);
        PreparedCandidate {
            path: CandidatePath {
                entity: EntityId::new(name),
                relations: Vec::new(),
                intermediate: None,
            },
            embedding: provider
                .embed(&sequence)
                .expect("stub embeddings never fail"),
            aspects,
            sequence,
        }
    };
    let contexts: Vec<Vec<String>> = (0..3).map(|_| words(0)).collect();
    let mut it = contexts
        .into_iter()
        .enumerate()
        .map(|(i, c)| candidate(format!("/m/c{i}"), c));
    let positive = it.next().expect("three contexts");
    let instance = Instance {
        positive,
        negatives: it.collect(),
    };
    (weights, instance)
}

// ----------------------------------------------------------------------- adam

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelWeights,
    pub v: ModelWeights,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelWeights) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelWeights,
    grads: &ModelWeights,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.dims != grads.dims || params.dims != state.m.dims {
        return Err(Error::shape(
            "adam_step",
            format!(
                "params {:?}, grads {:?}, state {:?}",
                params.dims, grads.dims, state.m.dims
            ),
        ));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let g: Vec<&[f64]> = grads.tensors().into_iter().map(|t| t.data).collect();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g).zip(m).zip(v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

// ------------------------------------------------------------------- sampling

/// Up to `k` non-gold candidates drawn without replacement.
pub fn sample_negatives<T: Clone>(
    candidates: &[T],
    is_gold: impl Fn(&T) -> bool,
    k: usize,
    rng: &mut impl rand::Rng,
) -> Vec<T> {
    let pool: Vec<&T> = candidates.iter().filter(|c| !is_gold(c)).collect();
    pool.choose_multiple(rng, k.min(pool.len()))
        .map(|c| (*c).clone())
        .collect()
}

// ------------------------------------------------------------------- datasets

/// A dataset pair with its weight-independent preprocessing done.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub pair: QAPair,
    /// `None` when the question could not be linked to the graph.
    pub prepared: Option<PreparedQuestion>,
    /// Per candidate: does its display name match a gold answer?
    pub gold: Vec<bool>,
}

pub fn prepare_examples(
    kb: &KnowledgeGraph,
    provider: &EmbeddingProvider,
    dataset: &[QAPair],
    candidate_cap: usize,
) -> Result<Vec<PreparedExample>> {
    dataset
        .iter()
        .map(|pair| {
            let prepared = prepare_or_skip(kb, provider, &pair.question, candidate_cap)?;
            let answers: Vec<String> = pair.answers.iter().map(|a| normalize_answer(a)).collect();
            let gold = prepared
                .as_ref()
                .map(|p| {
                    p.candidates
                        .iter()
                        .map(|c| answers.contains(&normalize_answer(&kb.display_name(c.entity()))))
                        .collect()
                })
                .unwrap_or_default();
            Ok(PreparedExample {
                pair: pair.clone(),
                prepared,
                gold,
            })
        })
        .collect()
}

/// 80/20 split after a seeded shuffle.
pub fn split_train_validation(dataset: &[QAPair], seed: u64) -> (Vec<QAPair>, Vec<QAPair>) {
    let mut shuffled = dataset.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (shuffled.len() * 4).div_ceil(5);
    let valid = shuffled.split_off(cut);
    (shuffled, valid)
}

pub fn evaluate_examples(
    w: &ModelWeights,
    kb: &KnowledgeGraph,
    examples: &[PreparedExample],
    threshold: f64,
) -> Result<f64> {
    let items: Vec<_> = examples
        .iter()
        .map(|e| (&e.pair, e.prepared.as_ref()))
        .collect();
    Ok(evaluate_prepared(w, kb, &items, threshold, 1)?.macro_f1)
}

// ---------------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean hinge loss per batch.
    pub loss: f64,
    pub val_f1: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: Vec<EpochRecord>,
}

/// Reduce-on-plateau schedule: after `patience` epochs without a validation
/// gain of at least `min_delta`, the rate is multiplied by `factor`.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub lr: f64,
    best: f64,
    stale: usize,
    factor: f64,
    patience: usize,
    min_delta: f64,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainingConfig) -> Self {
        PlateauSchedule {
            lr: cfg.lr,
            best: f64::NEG_INFINITY,
            stale: 0,
            factor: cfg.lr_decay_factor,
            patience: cfg.patience_epochs,
            min_delta: cfg.min_delta,
        }
    }

    pub fn observe(&mut self, val: f64) {
        if val > self.best + self.min_delta {
            self.best = val;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
    }
}

fn build_instances(ex: &PreparedExample, k: usize, rng: &mut ChaCha8Rng) -> Vec<Instance> {
    let Some(prepared) = &ex.prepared else {
        return Vec::new();
    };
    let indexed: Vec<usize> = (0..prepared.candidates.len()).collect();
    indexed
        .iter()
        .filter(|&&i| ex.gold[i])
        .map(|&i| {
            let negatives = sample_negatives(&indexed, |&j| ex.gold[j], k, rng)
                .into_iter()
                .map(|j| prepared.candidates[j].clone())
                .collect();
            Instance {
                positive: prepared.candidates[i].clone(),
                negatives,
            }
        })
        .collect()
}

/// Trains on prepared examples; validation macro-F1 drives the schedule.
pub fn train_prepared(
    mut weights: ModelWeights,
    kb: &KnowledgeGraph,
    train: &[PreparedExample],
    valid: &[PreparedExample],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let usable: Vec<usize> = (0..train.len())
        .filter(|&i| train[i].gold.iter().any(|&g| g))
        .collect();
    if usable.is_empty() || valid.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&weights);
    let mut schedule = PlateauSchedule::new(cfg);
    let mut history = Vec::new();
    let mut order = usable;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr;
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let instances: Vec<Instance> = batch
                .iter()
                .flat_map(|&i| build_instances(&train[i], cfg.negatives_per_positive, &mut rng))
                .collect();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(rand::Rng::gen(&mut rng));
            let mut dropout = Dropout {
                rate: cfg.dropout,
                rng: &mut drop_rng,
            };
            let (loss, mut grads) = backward(&weights, &instances, cfg.margin, Some(&mut dropout))?;
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut weights, &grads, &mut adam, lr)?;
            loss_sum += loss / batch.len() as f64;
            batches += 1;
        }
        let val_f1 = evaluate_examples(&weights, kb, valid, cfg.answer_threshold)?;
        schedule.observe(val_f1);
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            val_f1,
            lr,
        };
        on_epoch(&record);
        history.push(record);
        if cfg.stop_at_f1.is_some_and(|t| val_f1 >= t) {
            break;
        }
    }
    Ok(TrainOutcome { weights, history })
}

pub fn train(
    weights: ModelWeights,
    provider: &EmbeddingProvider,
    kb: &KnowledgeGraph,
    train_set: &[QAPair],
    valid_set: &[QAPair],
    cfg: &TrainingConfig,
    candidate_cap: usize,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train = prepare_examples(kb, provider, train_set, candidate_cap)?;
    let valid = prepare_examples(kb, provider, valid_set, candidate_cap)?;
    train_prepared(weights, kb, &train, &valid, cfg, |_| {})
}

// ----------------------------------------------------------------- checkpoint

pub fn checkpoint_bytes(w: &ModelWeights) -> Vec<u8> {
    let tensors = w.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8], heads: usize) -> Result<ModelWeights> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: "LMKW" });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank)
            .map(|_| Ok(r.u32()? as usize))
            .collect::<Result<Vec<_>>>()?;
        let size: usize = shape.iter().product();
        let data = (0..size).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push((name, shape, data));
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    ModelWeights::from_named(&tensors, heads)
}

pub fn write_checkpoint(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(w))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, heads: usize) -> Result<ModelWeights> {
    checkpoint_from_bytes(&fs::read(path)?, heads)
}
