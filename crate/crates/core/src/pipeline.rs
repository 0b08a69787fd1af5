//! Experiment orchestration: configuration, stage runners, and the paired
//! plaintext/encrypted comparison.
//!
//! Artifacts live under `output_dir`:
//!
//! ```text
//! labels.txt
//! plain/      train.tok test.tok train.vec test.vec embedding.txt
//!             gbt.json lstm.json lstm.weights.txt
//!             predictions.<clf>.txt report.<clf>.json report.<clf>.txt
//! encrypted/  same layout
//! comparison.json comparison.txt timings.json
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boost::{self, BoostHyper, TreeEnsemble};
use crate::corpus::{self, CorpusSplit};
use crate::embed::{self, EmbedHyper, Mode};
use crate::error::{Error, Result};
use crate::eval::{self, DeltaReport, MetricsReport};
use crate::formats::{self, ArtifactHeader, DocVectors};
use crate::recur::{self, EpochStats, LstmHyper, LstmModel, TensorSpec};
use crate::rng::{derive_indexed, derive_seed};
use crate::textprep::{self, StopwordList, TokenizedDoc};
use crate::wordcrypt::{self, CipherContext, RoundTripReport};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierChoice {
    Gbt,
    Lstm,
    Both,
}

impl ClassifierChoice {
    pub fn classifiers(self) -> Vec<Classifier> {
        match self {
            ClassifierChoice::Gbt => vec![Classifier::Gbt],
            ClassifierChoice::Lstm => vec![Classifier::Lstm],
            ClassifierChoice::Both => vec![Classifier::Gbt, Classifier::Lstm],
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ClassifierChoice::Gbt => "gbt",
            ClassifierChoice::Lstm => "lstm",
            ClassifierChoice::Both => "both",
        }
    }
}

impl FromStr for ClassifierChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbt" => Ok(ClassifierChoice::Gbt),
            "lstm" => Ok(ClassifierChoice::Lstm),
            "both" => Ok(ClassifierChoice::Both),
            _ => Err(Error::Config(format!(
                "classifier must be gbt, lstm or both, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Gbt,
    Lstm,
}

impl Classifier {
    pub fn as_str(self) -> &'static str {
        match self {
            Classifier::Gbt => "gbt",
            Classifier::Lstm => "lstm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Plain,
    Encrypted,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Plain, Arm::Encrypted];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Plain => "plain",
            Arm::Encrypted => "encrypted",
        }
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Arm::Plain),
            "encrypted" => Ok(Arm::Encrypted),
            _ => Err(Error::Config(format!(
                "arm must be plain or encrypted, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus_root: PathBuf,
    pub categories: Option<Vec<String>>,
    pub stopwords: Option<PathBuf>,
    pub passphrase_env: String,
    pub embed: EmbedHyper,
    /// Epochs for test-document inference; defaults to the training epochs.
    pub infer_epochs: Option<usize>,
    pub classifier: ClassifierChoice,
    pub gbt: BoostHyper,
    pub lstm: LstmHyper,
    pub seed: u64,
    pub deterministic: bool,
    pub transductive: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus_root: PathBuf::from("data/20news-bydate"),
            categories: None,
            stopwords: None,
            passphrase_env: "CRYPTEXT_PASSPHRASE".into(),
            embed: EmbedHyper::default(),
            infer_epochs: None,
            classifier: ClassifierChoice::Both,
            gbt: BoostHyper::default(),
            lstm: LstmHyper::default(),
            seed: 42,
            deterministic: true,
            transductive: false,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Keys excluded from the config hash: they say where things are, not what
/// is computed.
const LOCATION_KEYS: [&str; 3] = ["corpus_root", "output_dir", "passphrase_env"];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ExperimentConfig {
    /// Parses a `key = value` file on top of the defaults. `#` starts a
    /// comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&formats::read_text(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "corpus_root" => self.corpus_root = value.into(),
            "categories" => {
                let cats: Vec<String> = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
                self.categories = (!cats.is_empty()).then_some(cats);
            }
            "stopwords" => self.stopwords = (!value.is_empty()).then(|| value.into()),
            "passphrase_env" => self.passphrase_env = value.into(),
            "classifier" => self.classifier = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "deterministic" => self.deterministic = parse_value(key, value)?,
            "transductive" => self.transductive = parse_value(key, value)?,
            "output_dir" => self.output_dir = value.into(),
            "embed.dim" => self.embed.dim = parse_value(key, value)?,
            "embed.window" => self.embed.window = parse_value(key, value)?,
            "embed.epochs" => self.embed.epochs = parse_value(key, value)?,
            "embed.negative" => self.embed.negative = parse_value(key, value)?,
            "embed.min_count" => self.embed.min_count = parse_value(key, value)?,
            "embed.initial_lr" => self.embed.initial_lr = parse_value(key, value)?,
            "embed.final_lr" => self.embed.final_lr = parse_value(key, value)?,
            "embed.mode" => self.embed.mode = value.parse::<Mode>()?,
            "embed.infer_epochs" => {
                self.infer_epochs = if value.is_empty() {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "gbt.rounds" => self.gbt.rounds = parse_value(key, value)?,
            "gbt.max_depth" => self.gbt.max_depth = parse_value(key, value)?,
            "gbt.eta" => self.gbt.eta = parse_value(key, value)?,
            "gbt.lambda" => self.gbt.lambda = parse_value(key, value)?,
            "gbt.gamma" => self.gbt.gamma = parse_value(key, value)?,
            "gbt.min_child_weight" => self.gbt.min_child_weight = parse_value(key, value)?,
            "lstm.hidden1" => self.lstm.hidden1 = parse_value(key, value)?,
            "lstm.hidden2" => self.lstm.hidden2 = parse_value(key, value)?,
            "lstm.dropout" => self.lstm.dropout = parse_value(key, value)?,
            "lstm.epochs" => self.lstm.epochs = parse_value(key, value)?,
            "lstm.batch_size" => self.lstm.batch_size = parse_value(key, value)?,
            "lstm.validation_split" => self.lstm.validation_split = parse_value(key, value)?,
            "lstm.learning_rate" => self.lstm.learning_rate = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, sorted by key.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        let opt = |o: &Option<PathBuf>| {
            o.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("corpus_root", self.corpus_root.display().to_string());
        put(
            "categories",
            self.categories
                .as_ref()
                .map(|c| c.join(","))
                .unwrap_or_default(),
        );
        put("stopwords", opt(&self.stopwords));
        put("passphrase_env", self.passphrase_env.clone());
        put("classifier", self.classifier.as_str().into());
        put("seed", self.seed.to_string());
        put("deterministic", self.deterministic.to_string());
        put("transductive", self.transductive.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("embed.dim", self.embed.dim.to_string());
        put("embed.window", self.embed.window.to_string());
        put("embed.epochs", self.embed.epochs.to_string());
        put("embed.negative", self.embed.negative.to_string());
        put("embed.min_count", self.embed.min_count.to_string());
        put("embed.initial_lr", self.embed.initial_lr.to_string());
        put("embed.final_lr", self.embed.final_lr.to_string());
        put("embed.mode", self.embed.mode.as_str().into());
        put(
            "embed.infer_epochs",
            self.infer_epochs.map(|e| e.to_string()).unwrap_or_default(),
        );
        put("gbt.rounds", self.gbt.rounds.to_string());
        put("gbt.max_depth", self.gbt.max_depth.to_string());
        put("gbt.eta", self.gbt.eta.to_string());
        put("gbt.lambda", self.gbt.lambda.to_string());
        put("gbt.gamma", self.gbt.gamma.to_string());
        put(
            "gbt.min_child_weight",
            self.gbt.min_child_weight.to_string(),
        );
        put("lstm.hidden1", self.lstm.hidden1.to_string());
        put("lstm.hidden2", self.lstm.hidden2.to_string());
        put("lstm.dropout", self.lstm.dropout.to_string());
        put("lstm.epochs", self.lstm.epochs.to_string());
        put("lstm.batch_size", self.lstm.batch_size.to_string());
        put(
            "lstm.validation_split",
            self.lstm.validation_split.to_string(),
        );
        put("lstm.learning_rate", self.lstm.learning_rate.to_string());
        m
    }

    /// Config file text that [`ExperimentConfig::parse`] reads back.
    pub fn render(&self) -> String {
        self.canonical()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// First 16 hex chars of SHA-256 over the canonical computation keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            if LOCATION_KEYS.contains(&k.as_str()) {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn arm_dir(&self, arm: Arm) -> PathBuf {
        self.output_dir.join(arm.as_str())
    }

    fn header(&self, stage: &str, seed: u64) -> ArtifactHeader {
        ArtifactHeader::new(stage, &self.hash(), seed)
    }

    pub fn embed_seed(&self) -> u64 {
        derive_seed(self.seed, "embed.train")
    }

    pub fn infer_seed(&self) -> u64 {
        derive_seed(self.seed, "embed.infer")
    }

    pub fn lstm_seed(&self) -> u64 {
        derive_seed(self.seed, "lstm")
    }

    fn stopword_list(&self) -> Result<StopwordList> {
        match &self.stopwords {
            Some(p) => StopwordList::from_file(p),
            None => Ok(StopwordList::english()),
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

pub const TRAIN_TOKENS: &str = "train.tok";
pub const TEST_TOKENS: &str = "test.tok";
pub const TRAIN_VECTORS: &str = "train.vec";
pub const TEST_VECTORS: &str = "test.vec";
pub const EMBEDDING_DUMP: &str = "embedding.txt";
pub const LABELS: &str = "labels.txt";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{stage}: missing input {} (run the earlier stage first)",
            path.display()
        )))
    }
}

/// Rejects inputs produced under a different configuration.
fn check_header(cfg: &ExperimentConfig, path: &Path, text: &str) -> Result<()> {
    match ArtifactHeader::find(text) {
        Some(h) if h.config_hash != cfg.hash() => Err(Error::format(
            path,
            1,
            format!(
                "artifact was produced with config {} but the current config is {}",
                h.config_hash,
                cfg.hash()
            ),
        )),
        _ => Ok(()),
    }
}

fn read_tokens_checked(
    cfg: &ExperimentConfig,
    path: &Path,
    stage: &str,
) -> Result<Vec<TokenizedDoc>> {
    require(path, stage)?;
    let text = formats::read_text(path)?;
    check_header(cfg, path, &text)?;
    formats::parse_tokens(&text, path)
}

fn read_vectors_checked(cfg: &ExperimentConfig, path: &Path, stage: &str) -> Result<DocVectors> {
    require(path, stage)?;
    let text = formats::read_text(path)?;
    check_header(cfg, path, &text)?;
    formats::parse_vectors(&text, path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    formats::write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> Result<T> {
    require(path, stage)?;
    let text = formats::read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))
}

pub fn read_labels(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let path = cfg.output_dir.join(LABELS);
    require(&path, "labels")?;
    let text = formats::read_text(&path)?;
    check_header(cfg, &path, &text)?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(String::from)
        .collect())
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

pub fn load_configured_corpus(cfg: &ExperimentConfig) -> Result<CorpusSplit> {
    let full = corpus::load_corpus(&cfg.corpus_root)?;
    match &cfg.categories {
        Some(cats) => corpus::subset(&full, cats),
        None => Ok(full),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrepSummary {
    pub train_docs: usize,
    pub test_docs: usize,
    pub num_classes: usize,
    pub empty_docs: usize,
    pub stopwords_checksum: String,
}

/// Cleans and tokenizes the corpus into the plaintext arm.
pub fn stage_prep(cfg: &ExperimentConfig) -> Result<PrepSummary> {
    let corpus = load_configured_corpus(cfg)?;
    let stopwords = cfg.stopword_list()?;
    let (train, test) = textprep::preprocess_corpus(&corpus, &stopwords);
    let header = cfg.header("prep", cfg.seed);
    let dir = cfg.arm_dir(Arm::Plain);
    formats::write_tokens(&dir.join(TRAIN_TOKENS), &train, Some(&header))?;
    formats::write_tokens(&dir.join(TEST_TOKENS), &test, Some(&header))?;
    let mut labels = header.comment_line();
    for name in &corpus.label_names {
        labels.push_str(name);
        labels.push('\n');
    }
    formats::write_text(&cfg.output_dir.join(LABELS), &labels)?;
    Ok(PrepSummary {
        train_docs: train.len(),
        test_docs: test.len(),
        num_classes: corpus.num_classes(),
        empty_docs: train
            .iter()
            .chain(&test)
            .filter(|d| d.tokens.is_empty())
            .count(),
        stopwords_checksum: stopwords.source_checksum,
    })
}

/// Encrypts the plaintext arm's token files into the encrypted arm.
pub fn stage_encrypt(cfg: &ExperimentConfig, ctx: &CipherContext) -> Result<()> {
    let header = cfg.header("encrypt", cfg.seed);
    for name in [TRAIN_TOKENS, TEST_TOKENS] {
        let plain = read_tokens_checked(cfg, &cfg.arm_dir(Arm::Plain).join(name), "encrypt")?;
        let enc = wordcrypt::encrypt_corpus(ctx, &plain)?;
        formats::write_tokens(&cfg.arm_dir(Arm::Encrypted).join(name), &enc, Some(&header))?;
    }
    Ok(())
}

/// Decrypts the encrypted arm and checks it against the plaintext arm.
pub fn stage_verify(cfg: &ExperimentConfig, ctx: &CipherContext) -> Result<RoundTripReport> {
    let mut total = RoundTripReport {
        documents: 0,
        tokens: 0,
        matched: 0,
        failures: 0,
    };
    for name in [TRAIN_TOKENS, TEST_TOKENS] {
        let plain = read_tokens_checked(cfg, &cfg.arm_dir(Arm::Plain).join(name), "verify")?;
        let enc = read_tokens_checked(cfg, &cfg.arm_dir(Arm::Encrypted).join(name), "verify")?;
        let r = wordcrypt::verify_round_trip(ctx, &plain, &enc);
        total.documents += r.documents;
        total.tokens += r.tokens;
        total.matched += r.matched;
        total.failures += r.failures;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedSummary {
    pub vocab_size: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub transductive: bool,
}

fn to_doc_vectors(docs: &[TokenizedDoc], dim: usize, data: Vec<f64>) -> DocVectors {
    DocVectors {
        doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
        labels: docs.iter().map(|d| d.label_id).collect(),
        dim,
        data,
    }
}

/// Trains paragraph vectors for one arm and writes train/test vectors.
pub fn stage_embed(cfg: &ExperimentConfig, arm: Arm) -> Result<EmbedSummary> {
    let dir = cfg.arm_dir(arm);
    let train = read_tokens_checked(cfg, &dir.join(TRAIN_TOKENS), "embed")?;
    let test = read_tokens_checked(cfg, &dir.join(TEST_TOKENS), "embed")?;
    let hyper = EmbedHyper {
        seed: cfg.embed_seed(),
        ..cfg.embed.clone()
    };
    let d = hyper.dim;

    let (model, train_vecs, test_vecs) = if cfg.transductive {
        let all: Vec<TokenizedDoc> = train.iter().chain(&test).cloned().collect();
        let vocab = embed::build_vocab(&all, hyper.min_count)?;
        let model = embed::train(&all, &vocab, &hyper)?;
        let (a, b) = model.doc_vectors().split_at(train.len() * d);
        let (a, b) = (a.to_vec(), b.to_vec());
        (model, a, b)
    } else {
        let vocab = embed::build_vocab(&train, hyper.min_count)?;
        let model = embed::train(&train, &vocab, &hyper)?;
        let epochs = cfg.infer_epochs.unwrap_or(hyper.epochs);
        let infer_seed = cfg.infer_seed();
        let mut inferred = Vec::with_capacity(test.len() * d);
        for (i, doc) in test.iter().enumerate() {
            inferred.extend(embed::infer_vector(
                &model,
                &doc.tokens,
                epochs,
                derive_indexed(infer_seed, "doc", i),
            ));
        }
        let a = model.doc_vectors().to_vec();
        (model, a, inferred)
    };

    let header = cfg.header("embed", hyper.seed);
    formats::write_vectors(
        &dir.join(TRAIN_VECTORS),
        &to_doc_vectors(&train, d, train_vecs),
        Some(&header),
    )?;
    formats::write_vectors(
        &dir.join(TEST_VECTORS),
        &to_doc_vectors(&test, d, test_vecs),
        Some(&header),
    )?;
    let mut dump = header.comment_line();
    dump.push_str(&model.render());
    formats::write_text(&dir.join(EMBEDDING_DUMP), &dump)?;
    Ok(EmbedSummary {
        vocab_size: model.vocab.len(),
        train_docs: train.len(),
        test_docs: test.len(),
        transductive: cfg.transductive,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GbtArtifact {
    header: String,
    model: TreeEnsemble,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmManifest {
    pub header: String,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hyper: LstmHyper,
    pub layout: String,
    pub weights_file: String,
    pub tensors: Vec<TensorSpec>,
    pub history: Vec<EpochStats>,
}

fn gbt_path(dir: &Path) -> PathBuf {
    dir.join("gbt.json")
}

fn lstm_manifest_path(dir: &Path) -> PathBuf {
    dir.join("lstm.json")
}

fn lstm_weights_name() -> &'static str {
    "lstm.weights.txt"
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub classifier: Classifier,
    /// Final training mlogloss (gbt) or final training loss (lstm).
    pub final_train_loss: f64,
}

/// Fits the configured classifiers on one arm's training vectors.
pub fn stage_train(cfg: &ExperimentConfig, arm: Arm) -> Result<Vec<TrainSummary>> {
    let dir = cfg.arm_dir(arm);
    let labels = read_labels(cfg)?;
    let train = read_vectors_checked(cfg, &dir.join(TRAIN_VECTORS), "train")?;
    if train.is_empty() {
        return Err(Error::InvalidInput("train: no training documents".into()));
    }
    let mut out = Vec::new();
    for clf in cfg.classifier.classifiers() {
        match clf {
            Classifier::Gbt => {
                let model = boost::fit(
                    &train.data,
                    train.dim,
                    &train.labels,
                    labels.len(),
                    &cfg.gbt,
                )?;
                let loss = *model.train_mlogloss.last().unwrap_or(&f64::NAN);
                let header = cfg
                    .header("train.gbt", 0)
                    .comment_line()
                    .trim_end()
                    .to_string();
                write_json(&gbt_path(&dir), &GbtArtifact { header, model })?;
                out.push(TrainSummary {
                    classifier: clf,
                    final_train_loss: loss,
                });
            }
            Classifier::Lstm => {
                let hyper = LstmHyper {
                    seed: cfg.lstm_seed(),
                    ..cfg.lstm.clone()
                };
                let (model, history) =
                    recur::fit(&train.data, train.dim, &train.labels, labels.len(), &hyper)?;
                let header = cfg.header("train.lstm", hyper.seed);
                let mut weights = header.comment_line();
                for v in model.params() {
                    let _ = writeln!(weights, "{v}");
                }
                formats::write_text(&dir.join(lstm_weights_name()), &weights)?;
                let loss = history.last().map_or(f64::NAN, |h| h.train_loss);
                write_json(
                    &lstm_manifest_path(&dir),
                    &LstmManifest {
                        header: header.comment_line().trim_end().to_string(),
                        input_dim: model.input_dim,
                        num_classes: model.num_classes,
                        hyper,
                        layout: "row-major".into(),
                        weights_file: lstm_weights_name().into(),
                        tensors: model.tensors(),
                        history,
                    },
                )?;
                out.push(TrainSummary {
                    classifier: clf,
                    final_train_loss: loss,
                });
            }
        }
    }
    Ok(out)
}

pub fn load_lstm(cfg: &ExperimentConfig, arm: Arm) -> Result<(LstmModel, LstmManifest)> {
    let dir = cfg.arm_dir(arm);
    let manifest: LstmManifest = read_json(&lstm_manifest_path(&dir), "evaluate")?;
    let wpath = dir.join(&manifest.weights_file);
    require(&wpath, "evaluate")?;
    let text = formats::read_text(&wpath)?;
    check_header(cfg, &wpath, &text)?;
    let params = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'))
        .map(|(i, l)| {
            l.parse::<f64>()
                .map_err(|_| Error::format(&wpath, i + 1, format!("bad weight {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = LstmModel::from_params(
        manifest.input_dim,
        manifest.num_classes,
        &manifest.hyper,
        params,
    )?;
    Ok((model, manifest))
}

pub fn load_gbt(cfg: &ExperimentConfig, arm: Arm) -> Result<TreeEnsemble> {
    let path = gbt_path(&cfg.arm_dir(arm));
    let artifact: GbtArtifact = read_json(&path, "evaluate")?;
    if ArtifactHeader::find(&artifact.header).is_some_and(|h| h.config_hash != cfg.hash()) {
        return Err(Error::format(
            &path,
            1,
            "model was trained under a different config",
        ));
    }
    Ok(artifact.model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub classifier: Classifier,
    pub predictions: Vec<usize>,
    pub report: MetricsReport,
}

#[derive(Serialize)]
struct ReportArtifact<'a> {
    header: String,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

/// Scores the trained classifiers on one arm's test vectors.
pub fn stage_evaluate(cfg: &ExperimentConfig, arm: Arm) -> Result<Vec<Evaluation>> {
    let dir = cfg.arm_dir(arm);
    let labels = read_labels(cfg)?;
    let test = read_vectors_checked(cfg, &dir.join(TEST_VECTORS), "evaluate")?;
    if test.is_empty() {
        return Err(Error::InvalidInput("evaluate: no test documents".into()));
    }
    let header = cfg.header("evaluate", cfg.seed);
    let mut out = Vec::new();
    for clf in cfg.classifier.classifiers() {
        let predictions = match clf {
            Classifier::Gbt => load_gbt(cfg, arm)?.predict(&test.data, test.dim)?,
            Classifier::Lstm => load_lstm(cfg, arm)?.0.predict(&test.data)?,
        };
        let report = eval::compute_report(&test.labels, &predictions, &labels)?;
        let mut pred_text = header.comment_line();
        for (id, p) in test.doc_ids.iter().zip(&predictions) {
            let _ = writeln!(pred_text, "{id}\t{p}");
        }
        formats::write_text(
            &dir.join(format!("predictions.{}.txt", clf.as_str())),
            &pred_text,
        )?;
        write_json(
            &dir.join(format!("report.{}.json", clf.as_str())),
            &ReportArtifact {
                header: header.comment_line().trim_end().to_string(),
                report: &report,
            },
        )?;
        formats::write_text(
            &dir.join(format!("report.{}.txt", clf.as_str())),
            &report.render(),
        )?;
        out.push(Evaluation {
            classifier: clf,
            predictions,
            report,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierComparison {
    pub classifier: Classifier,
    pub plain: MetricsReport,
    pub encrypted: MetricsReport,
    pub delta: DeltaReport,
    pub predictions_equal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Equivariance {
    pub vocab_size_plain: usize,
    pub vocab_size_encrypted: usize,
    pub vocab_size_equal: bool,
    pub doc_vectors_equal: bool,
    pub predictions_equal: bool,
    pub exact_equal_metrics: bool,
    pub round_trip_failures: usize,
    pub plaintext_leaks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub key_fingerprint: String,
    pub corpus_digest: String,
    pub input_hashes: BTreeMap<String, String>,
    pub classifiers: Vec<ClassifierComparison>,
    pub equivariance: Equivariance,
}

impl ComparisonReport {
    /// The deterministic-mode guarantee: both arms agree exactly.
    pub fn arms_identical(&self) -> bool {
        let e = &self.equivariance;
        e.vocab_size_equal && e.doc_vectors_equal && e.predictions_equal && e.exact_equal_metrics
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "config {}  key {}",
            self.config_hash, self.key_fingerprint
        );
        for c in &self.classifiers {
            let _ = writeln!(out, "\n[{}]", c.classifier.as_str());
            let _ = writeln!(
                out,
                "{:<22}{:>10}{:>12}{:>10}",
                "metric (%)", "plain", "encrypted", "delta"
            );
            let rows = [
                ("accuracy", c.plain.accuracy, c.encrypted.accuracy),
                (
                    "macro precision",
                    c.plain.macro_avg.precision,
                    c.encrypted.macro_avg.precision,
                ),
                (
                    "macro recall",
                    c.plain.macro_avg.recall,
                    c.encrypted.macro_avg.recall,
                ),
                ("macro f1", c.plain.macro_avg.f1, c.encrypted.macro_avg.f1),
                (
                    "weighted precision",
                    c.plain.weighted_avg.precision,
                    c.encrypted.weighted_avg.precision,
                ),
                (
                    "weighted recall",
                    c.plain.weighted_avg.recall,
                    c.encrypted.weighted_avg.recall,
                ),
                (
                    "weighted f1",
                    c.plain.weighted_avg.f1,
                    c.encrypted.weighted_avg.f1,
                ),
            ];
            for (name, a, b) in rows {
                let _ = writeln!(
                    out,
                    "{:<22}{:>10.2}{:>12.2}{:>10.2}",
                    name,
                    a * 100.0,
                    b * 100.0,
                    (a - b) * 100.0
                );
            }
            let _ = writeln!(
                out,
                "exact equal: {}   predictions equal: {}",
                c.delta.exact_equal, c.predictions_equal
            );
        }
        let e = &self.equivariance;
        let _ = writeln!(
            out,
            "\nvocabulary {} / {}   doc vectors equal: {}   plaintext leaks: {}",
            e.vocab_size_plain, e.vocab_size_encrypted, e.doc_vectors_equal, e.plaintext_leaks
        );
        out
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    fn time<T>(&mut self, name: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.stages.push((name, start.elapsed().as_secs_f64()));
        out
    }
}

fn arm_error(arm: Arm, stage: &str, e: Error) -> Error {
    Error::InvalidInput(format!("{} arm, stage {stage}: {e}", arm.as_str()))
}

/// Counts tokens in the encrypted arm's files that are plaintext vocabulary
/// words. A plaintext token can only collide with a ciphertoken if it is
/// itself lowercase hex of a block-aligned length.
pub fn scan_for_plaintext(cfg: &ExperimentConfig) -> Result<usize> {
    let mut plain_vocab: HashSet<String> = HashSet::new();
    for name in [TRAIN_TOKENS, TEST_TOKENS] {
        for d in formats::read_tokens(&cfg.arm_dir(Arm::Plain).join(name))? {
            plain_vocab.extend(d.tokens);
        }
    }
    plain_vocab.retain(|t| wordcrypt::CipherToken::parse(t).is_err());
    let mut leaks = 0;
    let enc = cfg.arm_dir(Arm::Encrypted);
    for name in [TRAIN_TOKENS, TEST_TOKENS] {
        for d in formats::read_tokens(&enc.join(name))? {
            leaks += d.tokens.iter().filter(|t| plain_vocab.contains(*t)).count();
        }
    }
    let dump = enc.join(EMBEDDING_DUMP);
    if dump.is_file() {
        let text = formats::read_text(&dump)?;
        leaks += text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .filter_map(|l| l.split(' ').next())
            .filter(|w| plain_vocab.contains(*w))
            .count();
    }
    Ok(leaks)
}

fn corpus_digest(c: &CorpusSplit) -> String {
    let mut h = Sha256::new();
    for name in &c.label_names {
        h.update(name.as_bytes());
        h.update([0]);
    }
    for d in c.train.iter().chain(&c.test) {
        h.update(d.doc_id.as_bytes());
        h.update([0]);
        h.update(d.label_id.to_le_bytes());
        h.update(d.text.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

fn vocab_size(cfg: &ExperimentConfig, arm: Arm) -> Result<usize> {
    let text = formats::read_text(&cfg.arm_dir(arm).join(EMBEDDING_DUMP))?;
    text.lines()
        .find(|l| !l.starts_with('#'))
        .and_then(|l| l.split(' ').next())
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(cfg.arm_dir(arm).join(EMBEDDING_DUMP), 1, "bad dump header"))
}

/// Runs prep, encryption, and embed/train/evaluate on both arms under one
/// seed, then writes `comparison.json`, `comparison.txt` and `timings.json`.
pub fn compare(cfg: &ExperimentConfig, ctx: &CipherContext) -> Result<(ComparisonReport, Timings)> {
    let mut timings = Timings::default();
    let corpus = load_configured_corpus(cfg)?;
    timings.time("prep".into(), || stage_prep(cfg))?;
    timings.time("encrypt".into(), || stage_encrypt(cfg, ctx))?;
    let round_trip = stage_verify(cfg, ctx)?;

    let mut evaluations = Vec::new();
    for arm in Arm::BOTH {
        timings
            .time(format!("{}.embed", arm.as_str()), || stage_embed(cfg, arm))
            .map_err(|e| arm_error(arm, "embed", e))?;
        timings
            .time(format!("{}.train", arm.as_str()), || stage_train(cfg, arm))
            .map_err(|e| arm_error(arm, "train", e))?;
        let ev = timings
            .time(format!("{}.evaluate", arm.as_str()), || {
                stage_evaluate(cfg, arm)
            })
            .map_err(|e| arm_error(arm, "evaluate", e))?;
        evaluations.push(ev);
    }
    let enc_evals = evaluations.pop().unwrap_or_default();
    let plain_evals = evaluations.pop().unwrap_or_default();

    let mut classifiers = Vec::new();
    for (p, e) in plain_evals.into_iter().zip(enc_evals) {
        let delta = eval::compare_reports(&p.report, &e.report)?;
        classifiers.push(ClassifierComparison {
            classifier: p.classifier,
            predictions_equal: p.predictions == e.predictions,
            plain: p.report,
            encrypted: e.report,
            delta,
        });
    }

    let mut input_hashes = BTreeMap::new();
    for arm in Arm::BOTH {
        let dir = cfg.arm_dir(arm);
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let name = format!(
                "{}/{}",
                arm.as_str(),
                f.file_name().unwrap_or_default().to_string_lossy()
            );
            input_hashes.insert(name, sha256_file(&f)?);
        }
    }
    let same_file = |name: &str| -> Result<bool> {
        Ok(sha256_file(&cfg.arm_dir(Arm::Plain).join(name))?
            == sha256_file(&cfg.arm_dir(Arm::Encrypted).join(name))?)
    };
    let vocab_plain = vocab_size(cfg, Arm::Plain)?;
    let vocab_enc = vocab_size(cfg, Arm::Encrypted)?;
    let equivariance = Equivariance {
        vocab_size_plain: vocab_plain,
        vocab_size_encrypted: vocab_enc,
        vocab_size_equal: vocab_plain == vocab_enc,
        doc_vectors_equal: same_file(TRAIN_VECTORS)? && same_file(TEST_VECTORS)?,
        predictions_equal: classifiers.iter().all(|c| c.predictions_equal),
        exact_equal_metrics: classifiers.iter().all(|c| c.delta.exact_equal),
        round_trip_failures: round_trip.failures,
        plaintext_leaks: scan_for_plaintext(cfg)?,
    };
    let report = ComparisonReport {
        config: cfg.canonical(),
        config_hash: cfg.hash(),
        key_fingerprint: ctx.fingerprint(),
        corpus_digest: corpus_digest(&corpus),
        input_hashes,
        classifiers,
        equivariance,
    };
    write_json(&cfg.output_dir.join("comparison.json"), &report)?;
    formats::write_text(&cfg.output_dir.join("comparison.txt"), &report.render())?;
    write_json(&cfg.output_dir.join("timings.json"), &timings)?;
    Ok((report, timings))
}
