//! On-disk artifacts: vocabulary, identifier registry, codebooks and
//! training checkpoints. Every file records the config hash it came from.

use std::fs;
use std::path::Path;

use difret_core::corpus::{Token, Vocabulary};
use difret_core::denoiser::{DenoiserConfig, DenoiserParameters, OptimizerState, TrainState};
use difret_core::docid::{Codebook, DocIdKind, DocIdRegistry, RegistryEntry};
use difret_core::TokenId;

use crate::error::{Error, Result};

const CODEBOOK_MAGIC: &[u8; 4] = b"DRCB";
const CHECKPOINT_MAGIC: &[u8; 4] = b"DRCK";
const VERSION: u8 = 1;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::io(path))
}

/// Parses `key=value` fields of a header line after its leading tag.
fn header_fields<'a>(path: &Path, line: &'a str, tag: &str) -> Result<Vec<(&'a str, &'a str)>> {
    let mut parts = line.split(' ');
    if parts.next() != Some(tag) || parts.next() != Some("v1") {
        return Err(Error::format(path, format!("expected header starting with `{tag} v1`")));
    }
    parts
        .map(|p| p.split_once('=').ok_or_else(|| Error::format(path, format!("bad header field {p:?}"))))
        .collect()
}

fn field<'a>(path: &Path, fields: &[(&str, &'a str)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::format(path, format!("header missing {key}")))
}

fn parse_num<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(path, format!("bad number {s:?}")))
}

fn parse_sizes(path: &Path, s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| parse_num(path, x)).collect()
}

fn join_sizes(sizes: &[usize]) -> String {
    sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

/// Returns the `config=` hash recorded in a text artifact's header.
pub fn text_config_hash(path: &Path) -> Result<String> {
    let text = read_text(path)?;
    let header = text.lines().next().unwrap_or_default();
    header
        .split(' ')
        .find_map(|f| f.strip_prefix("config="))
        .map(str::to_string)
        .ok_or_else(|| Error::format(path, "header has no config hash"))
}

// ---- vocabulary -----------------------------------------------------------

/// One word per line in id order after a header naming the code ranges.
pub fn save_vocab(path: &Path, vocab: &Vocabulary, hash: &str) -> Result<()> {
    let mut out = format!(
        "#vocab v1 codes={} words={} config={hash}\n",
        join_sizes(vocab.code_sizes()),
        vocab.num_words()
    );
    for w in vocab.words() {
        out.push_str(w);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let fields = header_fields(path, lines.next().unwrap_or_default(), "#vocab")?;
    let sizes = parse_sizes(path, field(path, &fields, "codes")?)?;
    let n: usize = parse_num(path, field(path, &fields, "words")?)?;
    let words: Vec<&str> = lines.collect();
    if words.len() != n {
        return Err(Error::format(path, format!("truncated: header promises {n} words, found {}", words.len())));
    }
    let vocab = Vocabulary::from_words(words.iter().copied(), &sizes);
    if vocab.words().iter().map(String::as_str).ne(words.iter().copied()) {
        return Err(Error::format(path, "words are not unique"));
    }
    Ok(vocab)
}

// ---- registry -------------------------------------------------------------

/// Writes `doc_id<TAB>tokens` lines; codes as integers, words as words.
pub fn save_registry(path: &Path, registry: &DocIdRegistry, vocab: &Vocabulary, hash: &str) -> Result<()> {
    let n = registry.len();
    let mut out = match registry.kind() {
        DocIdKind::Learnable { sizes, dim } => {
            format!("#registry v1 kind=learnable l={} k={} d={dim} n={n} config={hash}\n", sizes.len(), join_sizes(sizes))
        }
        DocIdKind::Linguistic { max_tokens } => {
            format!("#registry v1 kind=linguistic l={max_tokens} max_tokens={max_tokens} n={n} config={hash}\n")
        }
    };
    for e in registry.entries() {
        let rendered: Vec<String> = e
            .tokens
            .iter()
            .map(|&t| match vocab.token(t) {
                Some(Token::Code { code, .. }) => Ok(code.to_string()),
                Some(Token::Word(w)) => Ok(w.to_string()),
                _ => Err(Error::format(path, format!("token {t} of {} is not storable", e.doc_id))),
            })
            .collect::<Result<_>>()?;
        out.push_str(&e.doc_id);
        out.push('\t');
        out.push_str(&rendered.join(" "));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Loads a registry against `vocab`. When `expected_dim` is given, a learnable
/// registry recorded for a different embedding width is rejected.
pub fn load_registry(path: &Path, vocab: &Vocabulary, expected_dim: Option<usize>) -> Result<DocIdRegistry> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let fields = header_fields(path, lines.next().unwrap_or_default(), "#registry")?;
    let kind = match field(path, &fields, "kind")? {
        "learnable" => {
            let sizes = parse_sizes(path, field(path, &fields, "k")?)?;
            let dim: usize = parse_num(path, field(path, &fields, "d")?)?;
            if let Some(expected) = expected_dim.filter(|&e| e != dim) {
                return Err(Error::DimensionMismatch { path: path.into(), expected, got: dim });
            }
            if sizes != vocab.code_sizes() {
                return Err(Error::format(
                    path,
                    format!("code sizes {:?} do not match vocabulary {:?}", sizes, vocab.code_sizes()),
                ));
            }
            DocIdKind::Learnable { sizes, dim }
        }
        "linguistic" => DocIdKind::Linguistic { max_tokens: parse_num(path, field(path, &fields, "max_tokens")?)? },
        other => return Err(Error::format(path, format!("unknown identifier kind {other:?}"))),
    };
    let n: usize = parse_num(path, field(path, &fields, "n")?)?;
    let mut entries = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let bad = |msg: String| Error::Parse { path: path.into(), line: lineno, msg };
        let (doc_id, rest) = line.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
        let tokens = rest
            .split(' ')
            .enumerate()
            .map(|(level, item)| match &kind {
                DocIdKind::Learnable { .. } => item
                    .parse::<usize>()
                    .ok()
                    .and_then(|c| vocab.code_id(level, c))
                    .ok_or_else(|| bad(format!("bad code {item:?} at level {level}"))),
                DocIdKind::Linguistic { .. } => {
                    vocab.word_id(item).ok_or_else(|| bad(format!("word {item:?} not in vocabulary")))
                }
            })
            .collect::<Result<Vec<TokenId>>>()?;
        entries.push(RegistryEntry { doc_id: doc_id.to_string(), tokens });
    }
    if entries.len() != n {
        return Err(Error::format(path, format!("truncated: header promises {n} entries, found {}", entries.len())));
    }
    DocIdRegistry::from_entries(kind, entries).map_err(|e| Error::format(path, e.to_string()))
}

// ---- binary helpers -------------------------------------------------------

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        xs.iter().for_each(|&x| self.f64(x));
    }
    fn hash(&mut self, hash: &str) {
        self.u64(hash.len() as u64);
        self.0.extend_from_slice(hash.as_bytes());
    }
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(self.path, "truncated file"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x).map_err(|_| Error::format(self.path, format!("value {x} out of range")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if self.buf.len() / 8 < n {
            return Err(Error::format(self.path, "truncated file"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn hash(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "bad config hash"))
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, "bad magic"));
        }
        let v = self.u8()?;
        if v != VERSION {
            return Err(Error::format(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::format(self.path, format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

// ---- codebook -------------------------------------------------------------

/// Little-endian layout: magic, version, hash, `d`, `l`, each `K_i`, then
/// every level's `K_i x d` centroids row-major.
pub fn save_codebook(path: &Path, codebook: &Codebook, hash: &str) -> Result<()> {
    let mut w = Writer(CODEBOOK_MAGIC.to_vec());
    w.u8(VERSION);
    w.hash(hash);
    w.u64(codebook.dim() as u64);
    w.u64(codebook.num_levels() as u64);
    codebook.sizes().iter().for_each(|&k| w.u64(k as u64));
    for i in 0..codebook.num_levels() {
        codebook.level(i).iter().for_each(|&x| w.f64(x));
    }
    write_file(path, &w.0)
}

/// Returns the codebook and its recorded config hash.
pub fn load_codebook(path: &Path) -> Result<(Codebook, String)> {
    let bytes = read_bytes(path)?;
    let mut r = Reader { path, buf: &bytes };
    r.header(CODEBOOK_MAGIC)?;
    let hash = r.hash()?;
    let dim = r.usize()?;
    let levels = r.usize()?;
    if levels > 64 {
        return Err(Error::format(path, format!("implausible level count {levels}")));
    }
    let sizes = (0..levels).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(levels);
    for k in sizes {
        let n = k.checked_mul(dim).filter(|&n| n / 8 <= r.buf.len()).ok_or_else(|| Error::format(path, "truncated file"))?;
        data.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    r.finish()?;
    Ok((Codebook::new(dim, data)?, hash))
}

// ---- checkpoint -----------------------------------------------------------

/// Training state plus the config hash it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub state: TrainState,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let s = &ckpt.state;
    let c = s.params.config();
    let mut w = Writer(CHECKPOINT_MAGIC.to_vec());
    w.u8(VERSION);
    w.hash(&ckpt.config_hash);
    for x in [c.layers, c.width, c.heads, c.ffn_width, c.max_query_len, c.docid_len, c.vocab_size] {
        w.u64(x as u64);
    }
    w.u64(s.epochs_done as u64);
    w.u8(s.initial_loss.is_some() as u8);
    w.f64(s.initial_loss.unwrap_or(0.0));
    w.f64s(&s.loss_trace);
    w.u64(s.optimizer.step);
    w.f64s(s.params.as_flat());
    w.f64s(&s.optimizer.m);
    w.f64s(&s.optimizer.v);
    // Write to a sibling file first so an interrupted save never leaves a
    // half-written checkpoint behind.
    let tmp = path.with_extension("tmp");
    write_file(&tmp, &w.0)?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

/// Loads a checkpoint; with `expected` set, any architecture difference is
/// reported as a dimension mismatch.
pub fn load_checkpoint(path: &Path, expected: Option<&DenoiserConfig>) -> Result<Checkpoint> {
    let bytes = read_bytes(path)?;
    let mut r = Reader { path, buf: &bytes };
    r.header(CHECKPOINT_MAGIC)?;
    let config_hash = r.hash()?;
    let mut f = [0usize; 7];
    for x in &mut f {
        *x = r.usize()?;
    }
    let config = DenoiserConfig {
        layers: f[0],
        width: f[1],
        heads: f[2],
        ffn_width: f[3],
        max_query_len: f[4],
        docid_len: f[5],
        vocab_size: f[6],
    };
    if let Some(exp) = expected {
        let pairs = [
            (exp.layers, config.layers),
            (exp.width, config.width),
            (exp.heads, config.heads),
            (exp.ffn_width, config.ffn_width),
            (exp.max_query_len, config.max_query_len),
            (exp.docid_len, config.docid_len),
            (exp.vocab_size, config.vocab_size),
        ];
        if let Some(&(expected, got)) = pairs.iter().find(|(a, b)| a != b) {
            return Err(Error::DimensionMismatch { path: path.into(), expected, got });
        }
    }
    let epochs_done = r.usize()?;
    let has_initial = r.u8()? != 0;
    let initial = r.f64()?;
    let loss_trace = r.f64s()?;
    let step = r.u64()?;
    let flat = r.f64s()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    r.finish()?;
    let params = DenoiserParameters::from_flat(config, flat).map_err(|e| Error::format(path, e.to_string()))?;
    if m.len() != params.len() || v.len() != params.len() {
        return Err(Error::format(path, "optimizer state does not match parameter count"));
    }
    let state = TrainState {
        params,
        optimizer: OptimizerState { step, m, v },
        epochs_done,
        loss_trace,
        initial_loss: has_initial.then_some(initial),
    };
    Ok(Checkpoint { config_hash, state })
}

/// Reads only the config hash of a binary artifact.
pub fn binary_config_hash(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    let mut r = Reader { path, buf: &bytes };
    r.take(4)?;
    r.u8()?;
    r.hash()
}
