//! Document identifiers.
//!
//! Two families are supported:
//!
//! * learnable identifiers: a document embedding is residual-quantized against
//!   `l` codebooks, giving one code per level;
//! * linguistic identifiers: the title words, or the leading body words when a
//!   document has no title.
//!
//! The [`DocIdRegistry`] keeps the identifier <-> document map strictly
//! bijective so that a generated sequence resolves to at most one document.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, Token, Vocabulary};
use crate::linalg::{norm, sq_dist};
use crate::{Error, Result, TokenId};

/// Dense document vector used to learn codebooks.
pub type DocEmbedding = Vec<f64>;

/// Longest linguistic identifier, in tokens.
pub const MAX_LINGUISTIC_TOKENS: usize = 12;

/// TF-IDF weighting followed by a seeded random projection.
#[derive(Debug, Clone)]
pub struct DocEmbedder {
    dim: usize,
    seed: u64,
    idf: BTreeMap<TokenId, f64>,
}

impl DocEmbedder {
    /// Fits document frequencies over `docs` (bodies and titles).
    pub fn fit(docs: &[Document], vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut df: BTreeMap<TokenId, usize> = BTreeMap::new();
        for doc in docs {
            let mut ids = doc_word_ids(doc, vocab);
            ids.sort_unstable();
            ids.dedup();
            for id in ids {
                *df.entry(id).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = df.into_iter().map(|(id, c)| (id, libm::log((1.0 + n) / (1.0 + c as f64)) + 1.0)).collect();
        Self { dim, seed, idf }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn projection_row(&self, id: TokenId, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id as u64);
        let scale = 1.0 / libm::sqrt(self.dim as f64);
        for x in out.iter_mut() {
            *x = if rng.gen::<bool>() { scale } else { -scale };
        }
    }

    /// Unit-norm embedding of `doc`.
    pub fn embed(&self, doc: &Document, vocab: &Vocabulary) -> DocEmbedding {
        let ids = doc_word_ids(doc, vocab);
        let mut tf: BTreeMap<TokenId, f64> = BTreeMap::new();
        for &id in &ids {
            *tf.entry(id).or_default() += 1.0;
        }
        let mut out = alloc::vec![0.0; self.dim];
        let mut row = alloc::vec![0.0; self.dim];
        for (id, count) in tf {
            let w = count / ids.len() as f64 * self.idf.get(&id).copied().unwrap_or(1.0);
            self.projection_row(id, &mut row);
            for (o, r) in out.iter_mut().zip(&row) {
                *o += w * r;
            }
        }
        let n = norm(&out);
        if n > 0.0 {
            out.iter_mut().for_each(|x| *x /= n);
        }
        out
    }
}

fn doc_word_ids(doc: &Document, vocab: &Vocabulary) -> Vec<TokenId> {
    let title = doc.title.iter().flatten();
    title
        .chain(&doc.body)
        .filter_map(|w| vocab.word_id(w))
        .collect()
}

/// Embeds every document with a shared IDF table.
pub fn embed_documents(docs: &[Document], vocab: &Vocabulary, dim: usize, seed: u64) -> Vec<DocEmbedding> {
    let embedder = DocEmbedder::fit(docs, vocab, dim, seed);
    docs.iter().map(|d| embedder.embed(d, vocab)).collect()
}

/// Per-level code embeddings; level `i` is a row-major `K_i x dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    levels: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

impl Codebook {
    pub fn new(dim: usize, levels: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 || levels.is_empty() {
            return Err(Error::InvalidArgument("codebook needs dim >= 1 and at least one level".into()));
        }
        let mut sizes = Vec::with_capacity(levels.len());
        for level in &levels {
            if level.len() % dim != 0 || level.len() / dim < 2 {
                return Err(Error::InvalidArgument(format!(
                    "level of {} values is not a K x {dim} matrix with K >= 2",
                    level.len()
                )));
            }
            if level.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("non-finite code embedding".into()));
            }
            sizes.push(level.len() / dim);
        }
        Ok(Self { dim, levels, sizes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn code(&self, level: usize, k: usize) -> &[f64] {
        &self.levels[level][k * self.dim..(k + 1) * self.dim]
    }
}

/// Lloyd iteration limits shared by every level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-6, seed: 0 }
    }
}

/// A fitted codebook plus the per-level objective after each assignment step.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookFit {
    pub codebook: Codebook,
    pub objective_traces: Vec<Vec<f64>>,
}

impl CodebookFit {
    /// Sum over levels of the final level objective.
    pub fn objective(&self) -> f64 {
        self.objective_traces.iter().filter_map(|t| t.last()).sum()
    }
}

/// Index of the nearest row, lowest index on ties.
fn nearest(point: &[f64], rows: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, row) in rows.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = points[0].len();
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = alloc::vec![false; points.len()];
    let first = rng.gen_range(0..points.len());
    centroids.extend_from_slice(&points[first]);
    chosen[first] = true;
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    u -= d;
                    if u < 0.0 {
                        break;
                    }
                }
            }
            pick.expect("positive total")
        } else {
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.extend_from_slice(&points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds. Returns centroids and the
/// objective after every assignment step.
fn kmeans(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let dim = points[0].len();
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut assign = alloc::vec![0usize; points.len()];
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iters.max(1) {
        let mut objective = 0.0;
        for (a, p) in assign.iter_mut().zip(points) {
            let (best, d) = nearest(p, &centroids, dim);
            *a = best;
            objective += d;
        }
        let converged = trace.last().is_some_and(|&prev: &f64| prev - objective < cfg.tol);
        trace.push(objective);
        if converged || objective == 0.0 {
            break;
        }

        let mut sums = alloc::vec![0.0; k * dim];
        let mut counts = alloc::vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        // Empty clusters move to the points worst served by the updated centroids.
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut far: Vec<(f64, usize)> = points
                .iter()
                .zip(&assign)
                .enumerate()
                .map(|(i, (p, &a))| (sq_dist(p, &centroids[a * dim..(a + 1) * dim]), i))
                .collect();
            far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (c, (_, i)) in empties.into_iter().zip(far) {
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[i]);
            }
        }
    }
    (centroids, trace)
}

/// Fits `sizes.len()` codebook levels stage-wise: each level runs k-means on
/// the residuals left by the levels before it.
pub fn train_codebooks(embeddings: &[DocEmbedding], sizes: &[usize], cfg: &KMeansConfig) -> Result<CodebookFit> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("need at least one codebook level".into()));
    }
    let needed = sizes.iter().copied().max().unwrap_or(0);
    if embeddings.len() < needed {
        return Err(Error::TooFewPoints { needed, got: embeddings.len() });
    }
    if let Some(&k) = sizes.iter().find(|&&k| k < 2) {
        return Err(Error::InvalidArgument(format!("codebook size {k} < 2")));
    }
    let dim = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut residuals = embeddings.to_vec();
    let mut levels = Vec::with_capacity(sizes.len());
    let mut traces = Vec::with_capacity(sizes.len());
    for &k in sizes {
        let (centroids, trace) = kmeans(&residuals, k, cfg, &mut rng);
        for r in residuals.iter_mut() {
            let (best, _) = nearest(r, &centroids, dim);
            for (x, c) in r.iter_mut().zip(&centroids[best * dim..(best + 1) * dim]) {
                *x -= c;
            }
        }
        levels.push(centroids);
        traces.push(trace);
    }
    Ok(CodebookFit { codebook: Codebook::new(dim, levels)?, objective_traces: traces })
}

/// Per-level code indices `z_1..z_l`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LearnableDocId {
    pub codes: Vec<usize>,
}

impl LearnableDocId {
    /// Level-tagged code tokens.
    pub fn to_tokens(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
        self.codes
            .iter()
            .enumerate()
            .map(|(level, &code)| {
                let size = vocab.code_sizes().get(level).copied().unwrap_or(0);
                vocab.code_id(level, code).ok_or(Error::CodeOutOfRange { level, code, size })
            })
            .collect()
    }
}

/// Greedy residual quantization; ties go to the lowest code index.
/// Returns the codes and the norm of the final residual.
pub fn quantize(embedding: &[f64], codebook: &Codebook) -> Result<(LearnableDocId, f64)> {
    if embedding.len() != codebook.dim() {
        return Err(Error::DimensionMismatch { expected: codebook.dim(), got: embedding.len() });
    }
    let mut residual = embedding.to_vec();
    let mut codes = Vec::with_capacity(codebook.num_levels());
    for level in 0..codebook.num_levels() {
        let (k, _) = nearest(&residual, codebook.level(level), codebook.dim());
        for (r, e) in residual.iter_mut().zip(codebook.code(level, k)) {
            *r -= e;
        }
        codes.push(k);
    }
    Ok((LearnableDocId { codes }, norm(&residual)))
}

/// Sum of the selected code embeddings.
pub fn reconstruct(docid: &LearnableDocId, codebook: &Codebook) -> Result<DocEmbedding> {
    if docid.codes.len() != codebook.num_levels() {
        return Err(Error::DimensionMismatch { expected: codebook.num_levels(), got: docid.codes.len() });
    }
    let mut out = alloc::vec![0.0; codebook.dim()];
    for (level, &code) in docid.codes.iter().enumerate() {
        let size = codebook.sizes()[level];
        if code >= size {
            return Err(Error::CodeOutOfRange { level, code, size });
        }
        for (o, e) in out.iter_mut().zip(codebook.code(level, code)) {
            *o += e;
        }
    }
    Ok(out)
}

/// Where a linguistic identifier came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocIdSource {
    Title,
    Leading,
    Disambiguated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinguisticDocId {
    pub tokens: Vec<TokenId>,
    pub source: DocIdSource,
}

/// Title words truncated to `max_tokens`, or the first `n_leading` body words
/// for documents without a usable title.
pub fn assign_linguistic_docid(doc: &Document, vocab: &Vocabulary, max_tokens: usize, n_leading: usize) -> LinguisticDocId {
    match &doc.title {
        Some(title) if !title.is_empty() => {
            let take = title.len().min(max_tokens);
            LinguisticDocId { tokens: vocab.encode_words(&title[..take]), source: DocIdSource::Title }
        }
        _ => {
            let take = doc.body.len().min(n_leading).min(max_tokens);
            LinguisticDocId { tokens: vocab.encode_words(&doc.body[..take]), source: DocIdSource::Leading }
        }
    }
}

/// Which identifier family a registry holds, with its shape parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocIdKind {
    Learnable { sizes: Vec<usize>, dim: usize },
    Linguistic { max_tokens: usize },
}

impl DocIdKind {
    /// Number of identifier slots the model generates.
    pub fn docid_len(&self) -> usize {
        match self {
            DocIdKind::Learnable { sizes, .. } => sizes.len(),
            DocIdKind::Linguistic { max_tokens } => *max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub doc_id: String,
    pub tokens: Vec<TokenId>,
}

/// Bijective map between identifier token sequences and document ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocIdRegistry {
    kind: DocIdKind,
    entries: Vec<RegistryEntry>,
    by_tokens: BTreeMap<Vec<TokenId>, usize>,
    by_doc: BTreeMap<String, usize>,
}

impl DocIdRegistry {
    /// Builds from already-unique entries; any collision, MASK or PAD token, or
    /// wrong length is an error.
    pub fn from_entries(kind: DocIdKind, entries: Vec<RegistryEntry>) -> Result<Self> {
        let mut by_tokens = BTreeMap::new();
        let mut by_doc = BTreeMap::new();
        let len = kind.docid_len();
        for (i, e) in entries.iter().enumerate() {
            let bad_len = match kind {
                DocIdKind::Learnable { .. } => e.tokens.len() != len,
                DocIdKind::Linguistic { .. } => e.tokens.is_empty() || e.tokens.len() > len,
            };
            if bad_len {
                return Err(Error::InvalidArgument(format!("identifier of {} has length {}", e.doc_id, e.tokens.len())));
            }
            if e.tokens.iter().any(|&t| t == Vocabulary::MASK || t == Vocabulary::PAD) {
                return Err(Error::InvalidArgument(format!("identifier of {} contains MASK or PAD", e.doc_id)));
            }
            if let Some(&j) = by_tokens.get(&e.tokens) {
                let other: &RegistryEntry = &entries[j];
                return Err(Error::DocIdCollision(alloc::vec![other.doc_id.clone(), e.doc_id.clone()]));
            }
            if by_doc.insert(e.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId(e.doc_id.clone()));
            }
            by_tokens.insert(e.tokens.clone(), i);
        }
        Ok(Self { kind, entries, by_tokens, by_doc })
    }

    pub fn kind(&self) -> &DocIdKind {
        &self.kind
    }

    pub fn docid_len(&self) -> usize {
        self.kind.docid_len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    /// Exact-sequence lookup.
    pub fn lookup(&self, tokens: &[TokenId]) -> Option<&str> {
        self.by_tokens.get(tokens).map(|&i| self.entries[i].doc_id.as_str())
    }

    /// Lookup of a fixed-length generated sequence: trailing PAD slots are
    /// dropped first.
    pub fn lookup_padded(&self, tokens: &[TokenId]) -> Option<&str> {
        let end = tokens.iter().rposition(|&t| t != Vocabulary::PAD).map_or(0, |p| p + 1);
        self.lookup(&tokens[..end])
    }

    pub fn tokens_of(&self, doc_id: &str) -> Option<&[TokenId]> {
        self.by_doc.get(doc_id).map(|&i| self.entries[i].tokens.as_slice())
    }

    /// Identifier of `doc_id` right-padded with PAD to the generation length.
    pub fn padded_tokens_of(&self, doc_id: &str) -> Option<Vec<TokenId>> {
        let mut out = self.tokens_of(doc_id)?.to_vec();
        out.resize(self.docid_len(), Vocabulary::PAD);
        Some(out)
    }
}

/// Registers learnable identifiers. Documents sharing codes are reported
/// together as a collision.
pub fn build_learnable_registry(
    doc_ids: &[String],
    docids: &[LearnableDocId],
    vocab: &Vocabulary,
    dim: usize,
) -> Result<DocIdRegistry> {
    if doc_ids.len() != docids.len() {
        return Err(Error::DimensionMismatch { expected: doc_ids.len(), got: docids.len() });
    }
    let mut groups: BTreeMap<&LearnableDocId, Vec<&str>> = BTreeMap::new();
    for (doc, id) in doc_ids.iter().zip(docids) {
        groups.entry(id).or_default().push(doc);
    }
    let colliding: Vec<String> = groups
        .values()
        .filter(|g| g.len() > 1)
        .flat_map(|g| g.iter().map(|d| d.to_string()))
        .collect();
    if !colliding.is_empty() {
        return Err(Error::DocIdCollision(colliding));
    }
    let entries = doc_ids
        .iter()
        .zip(docids)
        .map(|(doc_id, id)| Ok(RegistryEntry { doc_id: doc_id.clone(), tokens: id.to_tokens(vocab)? }))
        .collect::<Result<Vec<_>>>()?;
    let sizes = vocab.code_sizes().to_vec();
    DocIdRegistry::from_entries(DocIdKind::Learnable { sizes, dim }, entries)
}

/// Registers linguistic identifiers in input order. A document whose
/// identifier is already taken gets an ordinal word appended ("2", "3", ...),
/// truncating its identifier first if the budget requires. Ordinal words are
/// added to `vocab` when missing.
pub fn build_linguistic_registry(
    doc_ids: &[String],
    docids: &mut [LinguisticDocId],
    vocab: &mut Vocabulary,
    max_tokens: usize,
) -> Result<DocIdRegistry> {
    if doc_ids.len() != docids.len() {
        return Err(Error::DimensionMismatch { expected: doc_ids.len(), got: docids.len() });
    }
    let mut taken: BTreeMap<Vec<TokenId>, ()> = BTreeMap::new();
    let mut entries = Vec::with_capacity(doc_ids.len());
    for (doc_id, candidate) in doc_ids.iter().zip(docids.iter_mut()) {
        if candidate.tokens.len() > max_tokens {
            candidate.tokens.truncate(max_tokens);
        }
        let mut tokens = candidate.tokens.clone();
        if taken.contains_key(&tokens) {
            if max_tokens < 2 {
                return Err(Error::BudgetExhausted { doc_id: doc_id.clone(), budget: max_tokens });
            }
            let stem: Vec<TokenId> = candidate.tokens.iter().copied().take(max_tokens - 1).collect();
            let mut ordinal = 2usize;
            loop {
                let word = ordinal.to_string();
                let mut next = stem.clone();
                next.push(vocab.insert_word(&word));
                if !taken.contains_key(&next) {
                    tokens = next;
                    break;
                }
                ordinal += 1;
            }
            candidate.tokens = tokens.clone();
            candidate.source = DocIdSource::Disambiguated;
        }
        taken.insert(tokens.clone(), ());
        entries.push(RegistryEntry { doc_id: doc_id.clone(), tokens });
    }
    DocIdRegistry::from_entries(DocIdKind::Linguistic { max_tokens }, entries)
}

/// Renders an identifier as words or integer codes, one token per item.
pub fn render_tokens(tokens: &[TokenId], vocab: &Vocabulary) -> Vec<String> {
    tokens
        .iter()
        .map(|&t| match vocab.token(t) {
            Some(Token::Word(w)) => w.to_string(),
            Some(Token::Code { code, .. }) => code.to_string(),
            _ => format!("#{t}"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use alloc::vec;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let docs = vec![
            Document::new("a", None, "alpha beta gamma").unwrap(),
            Document::new("b", None, "alpha beta gamma").unwrap(),
            Document::new("c", None, "delta epsilon").unwrap(),
        ];
        let vocab = build_vocabulary(&docs, &[], &[]);
        let e = embed_documents(&docs, &vocab, 32, 9);
        assert_eq!(e[0], e[1]);
        for v in &e {
            assert!((norm(v) - 1.0).abs() < 1e-6);
        }
        assert_eq!(e, embed_documents(&docs, &vocab, 32, 9));
    }

    #[test]
    fn exact_points_quantize_with_zero_objective() {
        let pts: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let fit = train_codebooks(&pts, &[4], &KMeansConfig::default()).unwrap();
        assert!(fit.objective() < 1e-12);
        for p in &pts {
            let (_, r) = quantize(p, &fit.codebook).unwrap();
            assert!(r < 1e-12);
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = vec![vec![0.0, 1.0]; 3];
        assert_eq!(
            train_codebooks(&pts, &[4], &KMeansConfig::default()),
            Err(Error::TooFewPoints { needed: 4, got: 3 })
        );
    }

    #[test]
    fn exact_code_match_with_zero_rows_below() {
        let level0: Vec<f64> = (0..8).flat_map(|k| vec![k as f64, 1.0]).collect();
        let zero_level = vec![0.0, 0.0, 3.0, 3.0];
        let cb = Codebook::new(2, vec![level0, zero_level.clone(), zero_level]).unwrap();
        let (id, r) = quantize(&[5.0, 1.0], &cb).unwrap();
        assert_eq!(id.codes, vec![5, 0, 0]);
        assert_eq!(r, 0.0);
        assert_eq!(reconstruct(&id, &cb).unwrap(), vec![5.0, 1.0]);
    }

    #[test]
    fn reconstruct_rejects_out_of_range_codes() {
        let cb = Codebook::new(1, vec![vec![0.0, 1.0]]).unwrap();
        let err = reconstruct(&LearnableDocId { codes: vec![2] }, &cb).unwrap_err();
        assert_eq!(err, Error::CodeOutOfRange { level: 0, code: 2, size: 2 });
    }

    #[test]
    fn quantize_ties_pick_lowest_index() {
        let cb = Codebook::new(1, vec![vec![-1.0, 1.0]]).unwrap();
        assert_eq!(quantize(&[0.0], &cb).unwrap().0.codes, vec![0]);
    }

    fn titled(id: &str, title: &str) -> Document {
        Document::new(id, Some(title), "some body text here").unwrap()
    }

    #[test]
    fn linguistic_sources() {
        let long_title = (0..20).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let docs = vec![
            titled("a", "one two three four five"),
            titled("b", &long_title),
            Document::new("c", None, &(0..30).map(|i| format!("b{i}")).collect::<Vec<_>>().join(" ")).unwrap(),
            Document::new("d", Some(""), "short body").unwrap(),
        ];
        let vocab = build_vocabulary(&docs, &[], &[]);
        let a = assign_linguistic_docid(&docs[0], &vocab, 12, 12);
        assert_eq!((a.tokens.len(), a.source), (5, DocIdSource::Title));
        let b = assign_linguistic_docid(&docs[1], &vocab, 12, 12);
        assert_eq!(b.tokens, vocab.encode_words(&docs[1].title.as_ref().unwrap()[..12]));
        let c = assign_linguistic_docid(&docs[2], &vocab, 12, 12);
        assert_eq!((c.tokens.len(), c.source), (12, DocIdSource::Leading));
        assert_eq!(c.tokens, vocab.encode_words(&docs[2].body[..12]));
        let d = assign_linguistic_docid(&docs[3], &vocab, 12, 12);
        assert_eq!((d.tokens.len(), d.source), (2, DocIdSource::Leading));
    }

    #[test]
    fn colliding_titles_get_ordinals() {
        let docs = vec![titled("a", "world cup"), titled("b", "world cup"), titled("c", "world cup")];
        let mut vocab = build_vocabulary(&docs, &[], &[]);
        let mut cands: Vec<_> = docs.iter().map(|d| assign_linguistic_docid(d, &vocab, 12, 12)).collect();
        let names: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
        let reg = build_linguistic_registry(&names, &mut cands, &mut vocab, 12).unwrap();
        let rendered: Vec<String> = reg.entries().iter().map(|e| render_tokens(&e.tokens, &vocab).join(" ")).collect();
        assert_eq!(rendered, ["world cup", "world cup 2", "world cup 3"]);
        assert_eq!(cands[1].source, DocIdSource::Disambiguated);
        for e in reg.entries() {
            assert_eq!(reg.lookup(&e.tokens), Some(e.doc_id.as_str()));
        }
    }

    #[test]
    fn disambiguation_truncates_to_budget() {
        let docs = vec![titled("a", "a b c"), titled("b", "a b c")];
        let mut vocab = build_vocabulary(&docs, &[], &[]);
        let mut cands: Vec<_> = docs.iter().map(|d| assign_linguistic_docid(d, &vocab, 3, 3)).collect();
        let reg = build_linguistic_registry(&ids(2), &mut cands, &mut vocab, 3).unwrap();
        assert_eq!(render_tokens(&reg.entries()[1].tokens, &vocab), ["a", "b", "2"]);

        let mut cands: Vec<_> = docs.iter().map(|d| assign_linguistic_docid(d, &vocab, 1, 1)).collect();
        assert!(matches!(
            build_linguistic_registry(&ids(2), &mut cands, &mut vocab, 1),
            Err(Error::BudgetExhausted { .. })
        ));
    }

    #[test]
    fn learnable_collisions_name_every_document() {
        let vocab = Vocabulary::from_words(["x"], &[4, 4]);
        let same = LearnableDocId { codes: vec![1, 2] };
        let err = build_learnable_registry(&ids(3), &[same.clone(), same.clone(), same], &vocab, 8).unwrap_err();
        assert_eq!(err, Error::DocIdCollision(ids(3)));
    }

    #[test]
    fn lookup_is_exact() {
        let vocab = Vocabulary::from_words(["x"], &[4, 4, 4]);
        let docids = vec![LearnableDocId { codes: vec![0, 1, 2] }, LearnableDocId { codes: vec![3, 1, 2] }];
        let reg = build_learnable_registry(&ids(2), &docids, &vocab, 8).unwrap();
        assert_eq!(reg.len(), 2);
        let t0 = reg.tokens_of("d0").unwrap().to_vec();
        assert_eq!(reg.lookup(&t0), Some("d0"));
        assert_eq!(reg.lookup(&t0[..2]), None);
        let mut masked = t0.clone();
        masked[1] = Vocabulary::MASK;
        assert_eq!(reg.lookup(&masked), None);
    }

    #[test]
    fn padded_lookup_strips_trailing_pad_only() {
        let docs = vec![titled("a", "world cup")];
        let mut vocab = build_vocabulary(&docs, &[], &[]);
        let mut cands = vec![assign_linguistic_docid(&docs[0], &vocab, 12, 12)];
        let reg = build_linguistic_registry(&ids(1), &mut cands, &mut vocab, 12).unwrap();
        let padded = reg.padded_tokens_of("d0").unwrap();
        assert_eq!(padded.len(), 12);
        assert_eq!(reg.lookup_padded(&padded), Some("d0"));
        let mut gap = padded.clone();
        gap.swap(1, 2);
        assert_eq!(reg.lookup_padded(&gap), None);
    }
}
