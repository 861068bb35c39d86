//! Pipeline configuration (TOML), validated in full before any work, and the
//! per-stage hashes stamped into every artifact.

use std::path::{Path, PathBuf};

use difret_core::denoiser::{DenoiserConfig, TrainConfig};
use difret_core::docid::{KMeansConfig, MAX_LINGUISTIC_TOKENS};
use difret_core::sampler::{BeamConfig, BeamMode, DenoisingStrategy, SamplerConfig, Scoring};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub docid: DocIdConfig,
    pub denoiser: DenoiserSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub queries: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub pseudo_queries_per_doc: usize,
    pub holdout_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocIdKindName {
    Learnable,
    Linguistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DocIdConfig {
    pub kind: DocIdKindName,
    pub codebook_sizes: Vec<usize>,
    pub embedding_dim: usize,
    pub max_tokens: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub max_query_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Also train on (leading body tokens, identifier) pairs.
    pub index_documents: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    /// Denoising steps; defaults to the identifier length.
    pub steps: Option<usize>,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub beam_mode: String,
    pub k: usize,
    pub n_variants: usize,
    pub scoring: String,
    pub sweep_steps: Vec<usize>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { corpus: "corpus.jsonl".into(), queries: None, pairs: None, workdir: "work".into() }
    }
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { pseudo_queries_per_doc: 10, holdout_fraction: 0.2 }
    }
}

impl Default for DocIdConfig {
    fn default() -> Self {
        let k = KMeansConfig::default();
        Self {
            kind: DocIdKindName::Learnable,
            codebook_sizes: vec![64, 64, 64],
            embedding_dim: 16,
            max_tokens: MAX_LINGUISTIC_TOKENS,
            kmeans_max_iters: k.max_iters,
            kmeans_tol: k.tol,
        }
    }
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let c = DenoiserConfig::small(5, 1);
        Self { layers: c.layers, width: c.width, heads: c.heads, ffn_width: c.ffn_width, max_query_len: c.max_query_len }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
            index_documents: true,
        }
    }
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { steps: None, strategy: DenoisingStrategy::MaskgitPlus.name().into() }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        let b = BeamConfig::default();
        Self {
            beam_mode: b.mode.name().into(),
            k: b.k,
            n_variants: b.n_variants,
            scoring: "pseudo_likelihood".into(),
            sweep_steps: vec![1, 2, 3],
        }
    }
}

fn scoring_from_str(s: &str) -> Result<Scoring> {
    match s {
        "trajectory" => Ok(Scoring::Trajectory),
        "pseudo_likelihood" => Ok(Scoring::PseudoLikelihood),
        _ => Err(Error::Config(format!("unknown scoring {s:?} (trajectory | pseudo_likelihood)"))),
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn in_section<E: std::fmt::Display>(name: &'static str) -> impl Fn(E) -> Error {
    move |e| bad(format!("{name}: {e}"))
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| bad(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.workdir);
        self.paths.queries.as_mut().map(fix);
        self.paths.pairs.as_mut().map(fix);
    }

    /// Checks every section; nothing runs until this passes.
    pub fn validate(&self) -> Result<()> {
        if self.paths.queries.is_some() != self.paths.pairs.is_some() {
            return Err(bad("paths.queries and paths.pairs must be given together"));
        }
        let i = &self.ingest;
        if !(i.holdout_fraction > 0.0 && i.holdout_fraction < 1.0) {
            return Err(bad(format!("ingest.holdout_fraction {} not in (0, 1)", i.holdout_fraction)));
        }
        let d = &self.docid;
        match d.kind {
            DocIdKindName::Learnable => {
                if d.codebook_sizes.is_empty() || d.codebook_sizes.iter().any(|&k| k < 2) {
                    return Err(bad("docid.codebook_sizes needs at least one level, each K >= 2"));
                }
                if d.embedding_dim == 0 {
                    return Err(bad("docid.embedding_dim must be >= 1"));
                }
            }
            DocIdKindName::Linguistic => {
                if !(1..=MAX_LINGUISTIC_TOKENS).contains(&d.max_tokens) {
                    return Err(bad(format!("docid.max_tokens must be in 1..={MAX_LINGUISTIC_TOKENS}")));
                }
            }
        }
        if d.kmeans_max_iters == 0 || !(d.kmeans_tol >= 0.0) {
            return Err(bad("docid.kmeans_max_iters must be >= 1 and kmeans_tol >= 0"));
        }
        self.denoiser_config(5).validate().map_err(in_section("denoiser"))?;
        self.train_config().validate().map_err(in_section("train"))?;
        if self.train.epochs == 0 {
            return Err(bad("train.epochs must be >= 1"));
        }
        if self.sampler.steps == Some(0) {
            return Err(bad("sampler.steps must be >= 1"));
        }
        self.strategy()?;
        self.beam_config()?;
        if self.eval.k == 0 {
            return Err(bad("eval.k must be >= 1"));
        }
        if self.eval.sweep_steps.is_empty() || self.eval.sweep_steps.contains(&0) {
            return Err(bad("eval.sweep_steps must be non-empty and every entry >= 1"));
        }
        Ok(())
    }

    pub fn docid_len(&self) -> usize {
        match self.docid.kind {
            DocIdKindName::Learnable => self.docid.codebook_sizes.len(),
            DocIdKindName::Linguistic => self.docid.max_tokens,
        }
    }

    /// Code ranges the model vocabulary reserves.
    pub fn code_sizes(&self) -> &[usize] {
        match self.docid.kind {
            DocIdKindName::Learnable => &self.docid.codebook_sizes,
            DocIdKindName::Linguistic => &[],
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig { max_iters: self.docid.kmeans_max_iters, tol: self.docid.kmeans_tol, seed: self.seed }
    }

    pub fn denoiser_config(&self, vocab_size: usize) -> DenoiserConfig {
        let s = &self.denoiser;
        DenoiserConfig {
            layers: s.layers,
            width: s.width,
            heads: s.heads,
            ffn_width: s.ffn_width,
            max_query_len: s.max_query_len,
            docid_len: self.docid_len(),
            vocab_size,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: self.seed,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
        }
    }

    pub fn strategy(&self) -> Result<DenoisingStrategy> {
        self.sampler.strategy.parse().map_err(|e: difret_core::Error| bad(e.to_string()))
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let l = self.docid_len();
        Ok(SamplerConfig { steps: self.sampler.steps.unwrap_or(l), docid_len: l, strategy: self.strategy()?, seed: self.seed })
    }

    pub fn beam_config(&self) -> Result<BeamConfig> {
        let mode: BeamMode = self.eval.beam_mode.parse().map_err(|e: difret_core::Error| bad(e.to_string()))?;
        Ok(BeamConfig { mode, k: self.eval.k, n_variants: self.eval.n_variants, scoring: scoring_from_str(&self.eval.scoring)? })
    }

    fn input_digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        let mut files = vec![&self.paths.corpus];
        files.extend(self.paths.queries.iter());
        files.extend(self.paths.pairs.iter());
        for f in files {
            let bytes = std::fs::read(f).map_err(Error::io(f))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Hash of everything the dataset bundle depends on, input file contents
    /// included.
    pub fn ingest_hash(&self) -> Result<String> {
        Ok(digest(&[&self.input_digest()?, &json(&self.seed), &json(&self.ingest)]))
    }

    pub fn docid_hash(&self) -> Result<String> {
        Ok(digest(&[&self.ingest_hash()?, &json(&self.docid)]))
    }

    pub fn train_hash(&self) -> Result<String> {
        Ok(digest(&[&self.docid_hash()?, &json(&self.denoiser), &json(&self.train)]))
    }
}

fn json<T: Serialize>(x: &T) -> String {
    serde_json::to_string(x).expect("config serializes")
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}
