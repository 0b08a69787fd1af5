//! Paragraph vectors trained with negative sampling.
//!
//! Two architectures are supported:
//!
//! * PV-DM (mean): the document vector and the context word vectors are
//!   averaged into a hidden vector that predicts the centre word.
//! * PV-DBOW: the document vector alone predicts every word of the document.
//!
//! Everything after [`build_vocab`] works on integer ids, and every random
//! draw comes from one seeded generator. Renaming tokens through any injective
//! map therefore leaves the trained matrices bit-for-bit unchanged.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};
use crate::textprep::TokenizedDoc;

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    token_to_id: HashMap<String, usize>,
    counts: Vec<u64>,
    pub min_count: u64,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// In-vocabulary ids of `tokens`, dropping unknown tokens.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }
}

/// Ids follow first occurrence in corpus order among tokens whose total
/// count reaches `min_count`.
pub fn build_vocab(docs: &[TokenizedDoc], min_count: u64) -> Result<Vocab> {
    if min_count == 0 {
        return Err(Error::InvalidInput("min_count must be at least 1".into()));
    }
    let mut totals: HashMap<&str, u64> = HashMap::new();
    for t in docs.iter().flat_map(|d| &d.tokens) {
        *totals.entry(t.as_str()).or_default() += 1;
    }
    let mut vocab = Vocab {
        tokens: Vec::new(),
        token_to_id: HashMap::new(),
        counts: Vec::new(),
        min_count,
    };
    for t in docs.iter().flat_map(|d| &d.tokens) {
        let count = totals[t.as_str()];
        if count >= min_count && !vocab.token_to_id.contains_key(t) {
            vocab.token_to_id.insert(t.clone(), vocab.tokens.len());
            vocab.tokens.push(t.clone());
            vocab.counts.push(count);
        }
    }
    Ok(vocab)
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

/// Draws ids with probability proportional to `count^0.75`.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

pub const SAMPLING_EXPONENT: f64 = 0.75;

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(SAMPLING_EXPONENT);
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        let total = *self
            .cumulative
            .last()
            .expect("sampler over empty vocabulary");
        let u = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    pub fn probability(&self, id: usize) -> f64 {
        let total = self.cumulative.last().copied().unwrap_or(0.0);
        let lo = if id == 0 {
            0.0
        } else {
            self.cumulative[id - 1]
        };
        (self.cumulative[id] - lo) / total
    }
}

// ---------------------------------------------------------------------------
// Hyperparameters and model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    #[serde(rename = "pv-dm")]
    PvDmMean,
    #[serde(rename = "pv-dbow")]
    PvDbow,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PvDmMean => "pv-dm",
            Mode::PvDbow => "pv-dbow",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pv-dm" | "dm" => Ok(Mode::PvDmMean),
            "pv-dbow" | "dbow" => Ok(Mode::PvDbow),
            _ => Err(Error::Config(format!("unknown embedding mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedHyper {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negative: usize,
    pub initial_lr: f64,
    pub final_lr: f64,
    pub min_count: u64,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for EmbedHyper {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            epochs: 10,
            negative: 5,
            initial_lr: 0.025,
            final_lr: 1e-4,
            min_count: 5,
            mode: Mode::PvDmMean,
            seed: 0,
        }
    }
}

impl EmbedHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.negative == 0 {
            return bad("negative must be at least 1");
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1");
        }
        if !(self.initial_lr.is_finite() && self.final_lr.is_finite())
            || self.final_lr <= 0.0
            || self.initial_lr < self.final_lr
        {
            return bad("learning rates must satisfy 0 < final_lr <= initial_lr");
        }
        Ok(())
    }

    /// Half-width of the uniform initialisation interval.
    pub fn init_scale(&self) -> f64 {
        0.5 / self.dim as f64
    }
}

/// Learning rate after `done` of `total` scheduled positions.
pub fn learning_rate(initial: f64, final_lr: f64, done: usize, total: usize) -> f64 {
    if total == 0 {
        return initial;
    }
    initial - (initial - final_lr) * (done as f64 / total as f64)
}

#[derive(Debug, Clone)]
pub(crate) struct WordWeights {
    pub(crate) dim: usize,
    pub(crate) w_in: Vec<f64>,
    pub(crate) w_out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub vocab: Vocab,
    pub hyper: EmbedHyper,
    pub doc_ids: Vec<String>,
    pub(crate) words: WordWeights,
    /// N×d row-major.
    pub(crate) docs: Vec<f64>,
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.hyper.dim
    }

    /// V×d row-major word input vectors.
    pub fn word_vectors(&self) -> &[f64] {
        &self.words.w_in
    }

    /// V×d row-major output weights.
    pub fn output_weights(&self) -> &[f64] {
        &self.words.w_out
    }

    /// N×d row-major document vectors, in training order.
    pub fn doc_vectors(&self) -> &[f64] {
        &self.docs
    }

    pub fn doc_vector(&self, i: usize) -> &[f64] {
        &self.docs[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn all_finite(&self) -> bool {
        self.words
            .w_in
            .iter()
            .chain(&self.words.w_out)
            .chain(&self.docs)
            .all(|x| x.is_finite())
    }

    /// Text dump: `V N d mode`, then `token v1..vd` per word, then
    /// `doc_id v1..vd` per document.
    pub fn render(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {}",
            self.vocab.len(),
            self.doc_ids.len(),
            d,
            self.hyper.mode.as_str()
        );
        let mut row = |name: &str, v: &[f64]| {
            out.push_str(name);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        };
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            row(tok, &self.words.w_in[i * d..(i + 1) * d]);
        }
        for (i, id) in self.doc_ids.iter().enumerate() {
            row(id, &self.docs[i * d..(i + 1) * d]);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// One target word (label 1) followed by negatives (label 0).
#[derive(Debug, Clone, Default)]
pub(crate) struct Samples(pub(crate) Vec<(usize, f64)>);

impl Samples {
    fn fill(&mut self, target: usize, negative: usize, sampler: &NegativeSampler, rng: &mut Rng) {
        self.0.clear();
        self.0.push((target, 1.0));
        for _ in 0..negative {
            let w = sampler.draw(rng);
            if w != target {
                self.0.push((w, 0.0));
            }
        }
    }
}

#[derive(Debug, Default)]
struct Scratch {
    hidden: Vec<f64>,
    neu1e: Vec<f64>,
    samples: Samples,
    context: Vec<usize>,
}

/// One SGD step on the negative-sampling loss
/// `-ln σ(u_target·h) - Σ ln σ(-u_neg·h)`.
///
/// For PV-DM `h` is the mean of the document vector and the context word
/// vectors, for PV-DBOW it is the document vector. The update equals
/// `-lr` times the loss gradient with respect to every touched parameter.
/// With `learn_words == false` only `doc_vec` changes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgd_step(
    words: &mut WordWeights,
    doc_vec: &mut [f64],
    mode: Mode,
    context: &[usize],
    samples: &Samples,
    lr: f64,
    learn_words: bool,
    hidden: &mut Vec<f64>,
    neu1e: &mut Vec<f64>,
) {
    let d = words.dim;
    hidden.clear();
    hidden.extend_from_slice(doc_vec);
    let norm = match mode {
        Mode::PvDmMean => {
            for &c in context {
                axpy(1.0, &words.w_in[c * d..(c + 1) * d], hidden);
            }
            let n = (context.len() + 1) as f64;
            hidden.iter_mut().for_each(|x| *x /= n);
            1.0 / n
        }
        Mode::PvDbow => 1.0,
    };
    neu1e.clear();
    neu1e.resize(d, 0.0);
    for &(w, label) in &samples.0 {
        let row = &mut words.w_out[w * d..(w + 1) * d];
        let g = (label - sigmoid(dot(hidden, row))) * lr;
        axpy(g, row, neu1e);
        if learn_words {
            axpy(g, hidden, row);
        }
    }
    axpy(norm, neu1e, doc_vec);
    if learn_words && mode == Mode::PvDmMean {
        for &c in context {
            axpy(norm, neu1e, &mut words.w_in[c * d..(c + 1) * d]);
        }
    }
}

/// Gradient of the negative-sampling loss at a single position, returned as
/// `(d w_in, d w_out, d doc_vec)`. `w_in` and `w_out` are row-major `V x d`
/// with `d = doc_vec.len()`; `samples` is `(word, label)` with label 1 for
/// the target. Uses the same update routine as training.
pub fn position_gradient(
    w_in: &[f64],
    w_out: &[f64],
    doc_vec: &[f64],
    mode: Mode,
    context: &[usize],
    samples: &[(usize, f64)],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut words = WordWeights {
        dim: doc_vec.len(),
        w_in: w_in.to_vec(),
        w_out: w_out.to_vec(),
    };
    let mut dv = doc_vec.to_vec();
    let samples = Samples(samples.to_vec());
    sgd_step(
        &mut words,
        &mut dv,
        mode,
        context,
        &samples,
        1.0,
        true,
        &mut vec![],
        &mut vec![],
    );
    // with lr = 1 the step is exactly -grad
    let diff =
        |before: &[f64], after: &[f64]| before.iter().zip(after).map(|(b, a)| b - a).collect();
    (
        diff(w_in, &words.w_in),
        diff(w_out, &words.w_out),
        diff(doc_vec, &dv),
    )
}

/// Runs every position of one encoded document through [`sgd_step`].
#[allow(clippy::too_many_arguments)]
fn train_document(
    words: &mut WordWeights,
    doc_vec: &mut [f64],
    ids: &[usize],
    hyper: &EmbedHyper,
    sampler: &NegativeSampler,
    rng: &mut Rng,
    learn_words: bool,
    done: &mut usize,
    total: usize,
    s: &mut Scratch,
) {
    for t in 0..ids.len() {
        let lr = learning_rate(hyper.initial_lr, hyper.final_lr, *done, total);
        *done += 1;
        s.context.clear();
        if hyper.mode == Mode::PvDmMean {
            let b = rng.gen_range(1..=hyper.window);
            let lo = t.saturating_sub(b);
            let hi = (t + b).min(ids.len() - 1);
            s.context
                .extend((lo..=hi).filter(|&j| j != t).map(|j| ids[j]));
        }
        s.samples.fill(ids[t], hyper.negative, sampler, rng);
        sgd_step(
            words,
            doc_vec,
            hyper.mode,
            &s.context,
            &s.samples,
            lr,
            learn_words,
            &mut s.hidden,
            &mut s.neu1e,
        );
    }
}

fn uniform_init(rng: &mut Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * scale)
        .collect()
}

/// Trains word and document vectors. Single-threaded and bit-reproducible
/// for a given (document structure, vocabulary ids, hyperparameters).
pub fn train(docs: &[TokenizedDoc], vocab: &Vocab, hyper: &EmbedHyper) -> Result<EmbeddingModel> {
    hyper.validate()?;
    let d = hyper.dim;
    let v = vocab.len();
    let mut rng = seeded(hyper.seed);
    let scale = hyper.init_scale();
    let mut words = WordWeights {
        dim: d,
        w_in: uniform_init(&mut rng, v * d, scale),
        w_out: vec![0.0; v * d],
    };
    let mut doc_matrix = uniform_init(&mut rng, docs.len() * d, scale);

    let encoded: Vec<Vec<usize>> = docs.iter().map(|doc| vocab.encode(&doc.tokens)).collect();
    let total = hyper.epochs * encoded.iter().map(Vec::len).sum::<usize>();
    if total > 0 {
        let sampler = NegativeSampler::new(vocab.counts());
        let mut done = 0;
        let mut scratch = Scratch::default();
        for _ in 0..hyper.epochs {
            for (i, ids) in encoded.iter().enumerate() {
                train_document(
                    &mut words,
                    &mut doc_matrix[i * d..(i + 1) * d],
                    ids,
                    hyper,
                    &sampler,
                    &mut rng,
                    true,
                    &mut done,
                    total,
                    &mut scratch,
                );
            }
        }
    }

    let model = EmbeddingModel {
        vocab: vocab.clone(),
        hyper: hyper.clone(),
        doc_ids: docs.iter().map(|doc| doc.doc_id.clone()).collect(),
        words,
        docs: doc_matrix,
    };
    if !model.all_finite() {
        return Err(Error::InvalidInput(
            "embedding training diverged (non-finite weights)".into(),
        ));
    }
    Ok(model)
}

/// Learns a vector for an unseen document with the word weights frozen.
/// A document with no in-vocabulary token gets its initialisation back.
pub fn infer_vector(
    model: &EmbeddingModel,
    tokens: &[String],
    epochs: usize,
    seed: u64,
) -> Vec<f64> {
    let hyper = &model.hyper;
    let mut rng = seeded(seed);
    let mut v = uniform_init(&mut rng, hyper.dim, hyper.init_scale());
    let ids = model.vocab.encode(tokens);
    let total = epochs * ids.len();
    if total == 0 {
        return v;
    }
    // frozen: sgd_step leaves word weights untouched when learn_words is false
    let mut words = model.words.clone();
    let sampler = NegativeSampler::new(model.vocab.counts());
    let mut done = 0;
    let mut scratch = Scratch::default();
    for _ in 0..epochs {
        train_document(
            &mut words,
            &mut v,
            &ids,
            hyper,
            &sampler,
            &mut rng,
            false,
            &mut done,
            total,
            &mut scratch,
        );
    }
    v
}
