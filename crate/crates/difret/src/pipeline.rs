//! The five pipeline stages over a fixed working-directory layout:
//!
//! ```text
//! workdir/
//!   dataset.bundle/   manifest.json corpus.jsonl queries.jsonl train.jsonl test.jsonl vocab.txt
//!   vocab.txt         model vocabulary (bundle words + code ranges / ordinals)
//!   registry.tsv
//!   codebook.bin      learnable identifiers only
//!   checkpoint.bin
//!   reports/*.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use difret_core::corpus::{build_vocabulary, generate_pseudo_queries, split_dataset, Document, Query, RelevancePair, Vocabulary};
use difret_core::denoiser::{train, DenoiserParameters, TrainState, TrainingExample};
use difret_core::docid::{
    assign_linguistic_docid, build_learnable_registry, build_linguistic_registry, embed_documents, quantize,
    train_codebooks, DocIdRegistry,
};
use difret_core::metrics::Qrels;
use difret_core::sampler::Retriever;
use serde::{Deserialize, Serialize};

use crate::config::{DocIdKindName, PipelineConfig};
use crate::error::{Error, Result};
use crate::eval::{self, AblationRow, EvalQuery, MetricReport, SweepPoint};
use crate::formats::{self, Checkpoint};
use crate::jsonl::{self, PairRecord, QueryRecord};

/// Fixed artifact locations under a working directory.
#[derive(Debug, Clone)]
pub struct Workdir(pub PathBuf);

impl Workdir {
    pub fn bundle(&self) -> PathBuf {
        self.0.join("dataset.bundle")
    }
    pub fn vocab(&self) -> PathBuf {
        self.0.join("vocab.txt")
    }
    pub fn registry(&self) -> PathBuf {
        self.0.join("registry.tsv")
    }
    pub fn codebook(&self) -> PathBuf {
        self.0.join("codebook.bin")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.0.join("checkpoint.bin")
    }
    pub fn reports(&self) -> PathBuf {
        self.0.join("reports")
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(format!("{name}.json"))
    }
}

/// Dataset summary written next to the bundle files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub config_hash: String,
    pub documents: usize,
    pub queries: usize,
    pub pseudo_queries: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub test_queries: usize,
    pub vocab_words: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: BundleManifest,
    pub docs: Vec<Document>,
    pub queries: Vec<Query>,
    pub train: Vec<RelevancePair>,
    pub test: Vec<RelevancePair>,
    pub vocab: Vocabulary,
}

/// Everything retrieval needs, loaded from a trained working directory.
#[derive(Debug, Clone)]
pub struct Model {
    pub vocab: Vocabulary,
    pub registry: DocIdRegistry,
    pub state: TrainState,
}

impl Model {
    pub fn retriever(&self) -> Retriever<'_> {
        Retriever { params: &self.state.params, vocab: &self.vocab, registry: &self.registry }
    }
}

fn check_hash(path: &Path, found: &str, expected: &str, force: bool) -> Result<()> {
    if found == expected || force {
        Ok(())
    } else {
        Err(Error::StaleArtifact { path: path.into(), expected: expected.into(), found: found.into() })
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

fn with_hash<T: Serialize>(rows: &[T], hash: &str) -> serde_json::Value {
    rows.iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).expect("report serializes");
            v.as_object_mut().expect("rows are objects").insert("config_hash".into(), hash.into());
            v
        })
        .collect()
}

// ---- ingest ---------------------------------------------------------------

/// Loads the corpus (and real queries if configured), adds pseudo-queries,
/// splits all pairs and writes the dataset bundle.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<BundleManifest> {
    cfg.validate()?;
    let hash = cfg.ingest_hash()?;
    let docs = jsonl::load_corpus(&cfg.paths.corpus)?;
    let doc_ids: BTreeSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    let (mut queries, mut pairs) = match (&cfg.paths.queries, &cfg.paths.pairs) {
        (Some(qp), Some(pp)) => {
            let queries = jsonl::load_queries(qp)?;
            let qids: BTreeSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
            let pairs = jsonl::load_pairs(pp, &qids, &doc_ids)?;
            (queries, pairs)
        }
        _ => (Vec::new(), Vec::new()),
    };
    let real = queries.len();
    let mut qids: BTreeSet<String> = queries.iter().map(|q| q.query_id.clone()).collect();
    for doc in &docs {
        for q in generate_pseudo_queries(doc, cfg.ingest.pseudo_queries_per_doc, cfg.seed) {
            if !qids.insert(q.query_id.clone()) {
                return Err(Error::Config(format!("pseudo-query id {} clashes with a real query id", q.query_id)));
            }
            pairs.push(RelevancePair::new(q.query_id.clone(), doc.doc_id.clone()));
            queries.push(q);
        }
    }
    let (train, test) = split_dataset(&pairs, cfg.ingest.holdout_fraction, cfg.seed)?;
    let vocab = build_vocabulary(&docs, &queries, &[]);

    let wd = Workdir(cfg.paths.workdir.clone());
    let dir = wd.bundle();
    mkdir(&dir)?;
    jsonl::write_records(&dir.join("corpus.jsonl"), &docs.iter().map(jsonl::doc_record).collect::<Vec<_>>())?;
    jsonl::write_records(&dir.join("queries.jsonl"), &queries.iter().map(jsonl::query_record).collect::<Vec<_>>())?;
    jsonl::write_records(&dir.join("train.jsonl"), &train.iter().map(jsonl::pair_record).collect::<Vec<_>>())?;
    jsonl::write_records(&dir.join("test.jsonl"), &test.iter().map(jsonl::pair_record).collect::<Vec<_>>())?;
    formats::save_vocab(&dir.join("vocab.txt"), &vocab, &hash)?;
    let manifest = BundleManifest {
        config_hash: hash,
        documents: docs.len(),
        queries: real,
        pseudo_queries: queries.len() - real,
        train_pairs: train.len(),
        test_pairs: test.len(),
        test_queries: test.iter().map(|p| &p.query_id).collect::<BTreeSet<_>>().len(),
        vocab_words: vocab.num_words(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn load_pair_file(path: &Path) -> Result<Vec<RelevancePair>> {
    Ok(jsonl::read_records::<PairRecord>(path)?.into_iter().map(|(_, r)| RelevancePair::new(r.qid, r.doc_id)).collect())
}

/// Reads the bundle back, refusing one built from a different config.
pub fn load_dataset(cfg: &PipelineConfig, force: bool) -> Result<Dataset> {
    let dir = Workdir(cfg.paths.workdir.clone()).bundle();
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(Error::io(&mpath))?;
    let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    check_hash(&mpath, &manifest.config_hash, &cfg.ingest_hash()?, force)?;
    let docs = jsonl::load_corpus(&dir.join("corpus.jsonl"))?;
    let queries = jsonl::read_records::<QueryRecord>(&dir.join("queries.jsonl"))?
        .into_iter()
        .map(|(_, r)| Query { query_id: r.qid, text: r.text.split(' ').map(str::to_string).collect() })
        .collect();
    Ok(Dataset {
        manifest,
        docs,
        queries,
        train: load_pair_file(&dir.join("train.jsonl"))?,
        test: load_pair_file(&dir.join("test.jsonl"))?,
        vocab: formats::load_vocab(&dir.join("vocab.txt"))?,
    })
}

// ---- build-docids ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocIdSummary {
    pub kind: &'static str,
    pub documents: usize,
    pub docid_len: usize,
    /// Final residual objective of each codebook level (learnable only).
    pub level_objectives: Vec<f64>,
    pub disambiguated: usize,
}

pub fn cmd_build_docids(cfg: &PipelineConfig, force: bool) -> Result<DocIdSummary> {
    cfg.validate()?;
    let data = load_dataset(cfg, force)?;
    let hash = cfg.docid_hash()?;
    let wd = Workdir(cfg.paths.workdir.clone());
    let mut vocab = Vocabulary::from_words(data.vocab.words().iter().map(String::as_str), cfg.code_sizes());
    let doc_ids: Vec<String> = data.docs.iter().map(|d| d.doc_id.clone()).collect();
    let d = &cfg.docid;
    let summary = match d.kind {
        DocIdKindName::Learnable => {
            let emb = embed_documents(&data.docs, &vocab, d.embedding_dim, cfg.seed);
            let fit = train_codebooks(&emb, &d.codebook_sizes, &cfg.kmeans_config())?;
            let codes = emb.iter().map(|e| Ok(quantize(e, &fit.codebook)?.0)).collect::<Result<Vec<_>>>()?;
            let registry = build_learnable_registry(&doc_ids, &codes, &vocab, d.embedding_dim)?;
            formats::save_codebook(&wd.codebook(), &fit.codebook, &hash)?;
            formats::save_registry(&wd.registry(), &registry, &vocab, &hash)?;
            DocIdSummary {
                kind: "learnable",
                documents: registry.len(),
                docid_len: registry.docid_len(),
                level_objectives: fit.objective_traces.iter().map(|t| t.last().copied().unwrap_or(0.0)).collect(),
                disambiguated: 0,
            }
        }
        DocIdKindName::Linguistic => {
            let mut ids: Vec<_> =
                data.docs.iter().map(|doc| assign_linguistic_docid(doc, &vocab, d.max_tokens, d.max_tokens)).collect();
            let registry = build_linguistic_registry(&doc_ids, &mut ids, &mut vocab, d.max_tokens)?;
            if wd.codebook().exists() {
                fs::remove_file(wd.codebook()).map_err(Error::io(wd.codebook()))?;
            }
            formats::save_registry(&wd.registry(), &registry, &vocab, &hash)?;
            DocIdSummary {
                kind: "linguistic",
                documents: registry.len(),
                docid_len: registry.docid_len(),
                level_objectives: Vec::new(),
                disambiguated: ids.iter().filter(|i| i.source == difret_core::docid::DocIdSource::Disambiguated).count(),
            }
        }
    };
    formats::save_vocab(&wd.vocab(), &vocab, &hash)?;
    Ok(summary)
}

/// Loads the model vocabulary and registry written by `build-docids`.
pub fn load_docids(cfg: &PipelineConfig, force: bool) -> Result<(Vocabulary, DocIdRegistry)> {
    let wd = Workdir(cfg.paths.workdir.clone());
    let hash = cfg.docid_hash()?;
    for p in [wd.vocab(), wd.registry()] {
        check_hash(&p, &formats::text_config_hash(&p)?, &hash, force)?;
    }
    let vocab = formats::load_vocab(&wd.vocab())?;
    let dim = match cfg.docid.kind {
        DocIdKindName::Learnable => Some(cfg.docid.embedding_dim),
        DocIdKindName::Linguistic => None,
    };
    let registry = formats::load_registry(&wd.registry(), &vocab, dim)?;
    if registry.docid_len() != cfg.docid_len() {
        return Err(Error::DimensionMismatch { path: wd.registry(), expected: cfg.docid_len(), got: registry.docid_len() });
    }
    Ok((vocab, registry))
}

// ---- train ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    pub resume: bool,
    /// Stop once this many epochs are done, leaving a resumable checkpoint.
    pub stop_after: Option<usize>,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub config_hash: String,
    pub epochs_done: usize,
    pub loss: Vec<f64>,
}

/// Supervision pairs: every training pair, plus one indexing pair per
/// document when enabled.
pub fn training_examples(cfg: &PipelineConfig, data: &Dataset, vocab: &Vocabulary, registry: &DocIdRegistry) -> Result<Vec<TrainingExample>> {
    let max_q = cfg.denoiser.max_query_len;
    let text: BTreeMap<&str, &[String]> = data.queries.iter().map(|q| (q.query_id.as_str(), q.text.as_slice())).collect();
    let target = |doc: &str| {
        registry
            .padded_tokens_of(doc)
            .ok_or_else(|| Error::Config(format!("document {doc} has no identifier; rerun build-docids")))
    };
    let mut out = Vec::with_capacity(data.train.len() + data.docs.len());
    for p in &data.train {
        let words = text
            .get(p.query_id.as_str())
            .ok_or_else(|| Error::Config(format!("training pair names unknown query {}", p.query_id)))?;
        out.push(TrainingExample::new(&vocab.encode_words(words), target(&p.doc_id)?, max_q));
    }
    if cfg.train.index_documents {
        for d in &data.docs {
            out.push(TrainingExample::new(&vocab.encode_words(&d.body), target(&d.doc_id)?, max_q));
        }
    }
    Ok(out)
}

/// Trains (or resumes) the denoiser, checkpointing after every epoch.
pub fn cmd_train(cfg: &PipelineConfig, opts: TrainOptions) -> Result<LossReport> {
    cfg.validate()?;
    let data = load_dataset(cfg, opts.force)?;
    let (vocab, registry) = load_docids(cfg, opts.force)?;
    let examples = training_examples(cfg, &data, &vocab, &registry)?;
    let wd = Workdir(cfg.paths.workdir.clone());
    let hash = cfg.train_hash()?;
    let dcfg = cfg.denoiser_config(vocab.len());
    let mut state = if opts.resume && wd.checkpoint().exists() {
        let ckpt = formats::load_checkpoint(&wd.checkpoint(), Some(&dcfg))?;
        check_hash(&wd.checkpoint(), &ckpt.config_hash, &hash, opts.force)?;
        ckpt.state
    } else {
        TrainState::new(DenoiserParameters::init(dcfg, cfg.seed)?)
    };
    let tcfg = cfg.train_config();
    let loss_path = wd.report("loss_trace");
    let mut io_error = None;
    train(&mut state, &examples, &tcfg, |_, st| {
        let saved = formats::save_checkpoint(&wd.checkpoint(), &Checkpoint { config_hash: hash.clone(), state: st.clone() })
            .and_then(|_| write_json(&loss_path, &loss_report(&hash, st)));
        if let Err(e) = saved {
            io_error = Some(e);
            return ControlFlow::Break(());
        }
        match opts.stop_after {
            Some(n) if st.epochs_done >= n => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let report = loss_report(&hash, &state);
    write_json(&loss_path, &report)?;
    Ok(report)
}

fn loss_report(hash: &str, st: &TrainState) -> LossReport {
    LossReport { config_hash: hash.into(), epochs_done: st.epochs_done, loss: st.loss_trace.clone() }
}

/// Loads vocabulary, registry and checkpoint, all checked against `cfg`.
pub fn load_model(cfg: &PipelineConfig, force: bool) -> Result<Model> {
    cfg.validate()?;
    let (vocab, registry) = load_docids(cfg, force)?;
    let wd = Workdir(cfg.paths.workdir.clone());
    let ckpt = formats::load_checkpoint(&wd.checkpoint(), Some(&cfg.denoiser_config(vocab.len())))?;
    check_hash(&wd.checkpoint(), &ckpt.config_hash, &cfg.train_hash()?, force)?;
    Ok(Model { vocab, registry, state: ckpt.state })
}

// ---- eval / sweep ---------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Split {
    Train,
    #[default]
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Queries of one split, in first-appearance order, with their judgments.
pub fn split_queries(data: &Dataset, split: Split) -> (Vec<EvalQuery>, Qrels) {
    let pairs = match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let text: BTreeMap<&str, &Vec<String>> = data.queries.iter().map(|q| (q.query_id.as_str(), &q.text)).collect();
    let mut qrels = Qrels::new();
    let mut queries = Vec::new();
    for p in pairs {
        let rel = qrels.entry(p.query_id.clone()).or_default();
        if rel.is_empty() {
            if let Some(words) = text.get(p.query_id.as_str()) {
                queries.push(EvalQuery { query_id: p.query_id.clone(), words: (*words).clone() });
            }
        }
        rel.insert(p.doc_id.clone());
    }
    (queries, qrels)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub split: &'static str,
    #[serde(flatten)]
    pub report: MetricReport,
}

pub fn cmd_eval(cfg: &PipelineConfig, split: Split, force: bool) -> Result<EvalReport> {
    let model = load_model(cfg, force)?;
    let data = load_dataset(cfg, force)?;
    let (queries, qrels) = split_queries(&data, split);
    let (run, metrics) = eval::evaluate(&model.retriever(), &queries, &qrels, &cfg.sampler_config()?, &cfg.beam_config()?)?;
    let out = EvalReport { config_hash: cfg.train_hash()?, split: split.name(), report: eval::report(&run, &metrics) };
    let name = match split {
        Split::Test => "eval".to_string(),
        Split::Train => "eval_train".to_string(),
    };
    write_json(&Workdir(cfg.paths.workdir.clone()).report(&name), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Tradeoff(Vec<SweepPoint>),
    Ablation(Vec<AblationRow>),
}

/// Step sweep with one strategy, or the four-way strategy ablation when
/// `strategy` is `"all"`.
pub fn cmd_sweep(cfg: &PipelineConfig, steps: Option<&[usize]>, strategy: Option<&str>, force: bool) -> Result<SweepOutcome> {
    let mut cfg = cfg.clone();
    let ablation = strategy == Some("all");
    if let Some(s) = strategy.filter(|_| !ablation) {
        cfg.sampler.strategy = s.to_string();
    }
    if let Some(s) = steps {
        cfg.eval.sweep_steps = s.to_vec();
    }
    let model = load_model(&cfg, force)?;
    let data = load_dataset(&cfg, force)?;
    let (queries, qrels) = split_queries(&data, Split::Test);
    let r = model.retriever();
    let sampler = cfg.sampler_config()?;
    let beam = cfg.beam_config()?;
    let hash = cfg.train_hash()?;
    let wd = Workdir(cfg.paths.workdir.clone());
    if ablation {
        let rows = eval::strategy_ablation(&r, &queries, &qrels, &sampler, &beam)?;
        write_json(&wd.report("ablation"), &with_hash(&rows, &hash))?;
        Ok(SweepOutcome::Ablation(rows))
    } else {
        let points = eval::tradeoff_sweep(&r, &queries, &qrels, &cfg.eval.sweep_steps, &sampler, &beam)?;
        write_json(&wd.report("sweep"), &with_hash(&points, &hash))?;
        Ok(SweepOutcome::Tradeoff(points))
    }
}
