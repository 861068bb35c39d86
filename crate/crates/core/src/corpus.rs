//! Documents, queries, the closed vocabulary and training-pair preparation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, TokenId};

/// Shortest pseudo-query span, in tokens.
pub const MIN_SPAN: usize = 4;
/// Longest pseudo-query span, in tokens.
pub const MAX_SPAN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: Option<Vec<String>>,
    pub body: Vec<String>,
}

impl Document {
    /// Normalizes `title` and `body` into word tokens. Fails on an empty body.
    pub fn new(doc_id: impl Into<String>, title: Option<&str>, body: &str) -> Result<Self> {
        let doc_id = doc_id.into();
        let body = words(body);
        if body.is_empty() {
            return Err(Error::EmptyBody(doc_id));
        }
        Ok(Self { doc_id, title: title.map(words), body })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub text: Vec<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: &str) -> Result<Self> {
        let query_id = query_id.into();
        let text = words(text);
        if text.is_empty() {
            return Err(Error::InvalidArgument(format!("query {query_id} has no tokens")));
        }
        Ok(Self { query_id, text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelevancePair {
    pub query_id: String,
    pub doc_id: String,
}

impl RelevancePair {
    pub fn new(query_id: impl Into<String>, doc_id: impl Into<String>) -> Self {
        Self { query_id: query_id.into(), doc_id: doc_id.into() }
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// What a token id stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token<'a> {
    Mask,
    Pad,
    Sep,
    Unk,
    Code { level: usize, code: usize },
    Word(&'a str),
}

/// Token <-> id bijection.
///
/// Layout: the four specials, then one contiguous range of code tokens per
/// codebook level, then word tokens. Words added after construction (e.g.
/// ordinal disambiguators) are appended, so existing ids never move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    code_sizes: Vec<usize>,
    words: Vec<String>,
    word_ids: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    pub const MASK: TokenId = 0;
    pub const PAD: TokenId = 1;
    pub const SEP: TokenId = 2;
    pub const UNK: TokenId = 3;
    const SPECIALS: usize = 4;

    /// Builds a vocabulary from an explicit word list (kept in the given order).
    pub fn from_words<I, S>(words: I, code_sizes: &[usize]) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self { code_sizes: code_sizes.to_vec(), words: Vec::new(), word_ids: BTreeMap::new() };
        for w in words {
            vocab.insert_word(&w.into());
        }
        vocab
    }

    pub fn len(&self) -> usize {
        Self::SPECIALS + self.num_codes() + self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn code_sizes(&self) -> &[usize] {
        &self.code_sizes
    }

    pub fn num_codes(&self) -> usize {
        self.code_sizes.iter().sum()
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn word_offset(&self) -> usize {
        Self::SPECIALS + self.num_codes()
    }

    /// Id of code `code` at codebook `level`, if both are in range.
    pub fn code_id(&self, level: usize, code: usize) -> Option<TokenId> {
        let size = *self.code_sizes.get(level)?;
        if code >= size {
            return None;
        }
        let offset: usize = Self::SPECIALS + self.code_sizes[..level].iter().sum::<usize>();
        Some((offset + code) as TokenId)
    }

    pub fn word_id(&self, word: &str) -> Option<TokenId> {
        self.word_ids.get(word).copied()
    }

    /// Adds `word` if absent and returns its id.
    pub fn insert_word(&mut self, word: &str) -> TokenId {
        if let Some(id) = self.word_ids.get(word) {
            return *id;
        }
        let id = (self.word_offset() + self.words.len()) as TokenId;
        self.words.push(word.to_string());
        self.word_ids.insert(word.to_string(), id);
        id
    }

    pub fn token(&self, id: TokenId) -> Option<Token<'_>> {
        let id = id as usize;
        match id {
            0 => Some(Token::Mask),
            1 => Some(Token::Pad),
            2 => Some(Token::Sep),
            3 => Some(Token::Unk),
            _ => {
                let mut offset = Self::SPECIALS;
                for (level, &size) in self.code_sizes.iter().enumerate() {
                    if id < offset + size {
                        return Some(Token::Code { level, code: id - offset });
                    }
                    offset += size;
                }
                self.words.get(id - offset).map(|w| Token::Word(w.as_str()))
            }
        }
    }

    pub fn is_word(&self, id: TokenId) -> bool {
        matches!(self.token(id), Some(Token::Word(_)))
    }

    /// Maps word tokens to ids, unknown words to UNK.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<TokenId> {
        words.iter().map(|w| self.word_id(w.as_ref()).unwrap_or(Self::UNK)).collect()
    }

    /// Renders ids back to text. UNK renders as U+FFFD, which the tokenizer
    /// discards; specials render in angle brackets; codes as `<c{level}_{code}>`.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match self.token(id) {
                Some(Token::Word(w)) => out.push_str(w),
                Some(Token::Unk) | None => out.push('\u{fffd}'),
                Some(Token::Mask) => out.push_str("<mask>"),
                Some(Token::Pad) => out.push_str("<pad>"),
                Some(Token::Sep) => out.push_str("<sep>"),
                Some(Token::Code { level, code }) => out.push_str(&format!("<c{level}_{code}>")),
            }
        }
        out
    }
}

/// Builds the closed vocabulary over every title, body and query token.
///
/// Words are numbered in lexicographic order. An empty `codebook_sizes` gives a
/// vocabulary with no code range.
pub fn build_vocabulary(docs: &[Document], queries: &[Query], codebook_sizes: &[usize]) -> Vocabulary {
    let mut seen = BTreeSet::new();
    for doc in docs {
        if let Some(title) = &doc.title {
            seen.extend(title.iter().map(String::as_str));
        }
        seen.extend(doc.body.iter().map(String::as_str));
    }
    for q in queries {
        seen.extend(q.text.iter().map(String::as_str));
    }
    Vocabulary::from_words(seen, codebook_sizes)
}

/// Lowercase/punctuation split, then vocabulary lookup.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    vocab.encode_words(&words(text))
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Samples `n` training queries as contiguous body spans of 4 to 12 tokens.
///
/// The span start is drawn with weight `1 / (start + 1)`, so openings are
/// favored. Bodies shorter than [`MIN_SPAN`] yield a single query holding the
/// whole body.
pub fn generate_pseudo_queries(doc: &Document, n: usize, rng_seed: u64) -> Vec<Query> {
    let len = doc.body.len();
    let make = |j: usize, span: &[String]| Query { query_id: format!("{}#pq{j}", doc.doc_id), text: span.to_vec() };
    if len < MIN_SPAN {
        return if n == 0 { Vec::new() } else { alloc::vec![make(0, &doc.body)] };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ fnv1a(doc.doc_id.as_bytes()));
    let max_span = MAX_SPAN.min(len);
    (0..n)
        .map(|j| {
            let span_len = rng.gen_range(MIN_SPAN..=max_span);
            let starts = len - span_len + 1;
            let total: f64 = (1..=starts).map(|s| 1.0 / s as f64).sum();
            let mut u = rng.gen::<f64>() * total;
            let mut start = starts - 1;
            for s in 0..starts {
                u -= 1.0 / (s + 1) as f64;
                if u < 0.0 {
                    start = s;
                    break;
                }
            }
            make(j, &doc.body[start..start + span_len])
        })
        .collect()
}

/// Splits pairs into (train, test) with about `holdout_fraction` of them held
/// out, keeping at least one training pair for every document.
///
/// Both halves preserve the input order.
pub fn split_dataset(
    pairs: &[RelevancePair],
    holdout_fraction: f64,
    rng_seed: u64,
) -> Result<(Vec<RelevancePair>, Vec<RelevancePair>)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {holdout_fraction} not in (0, 1)")));
    }
    let target = libm::round(pairs.len() as f64 * holdout_fraction) as usize;
    let mut remaining: BTreeMap<&str, usize> = BTreeMap::new();
    for p in pairs {
        *remaining.entry(p.doc_id.as_str()).or_default() += 1;
    }
    let spare: usize = remaining.values().map(|c| c - 1).sum();
    if spare < target {
        let uncovered = remaining.iter().filter(|(_, &c)| c == 1).map(|(d, _)| d.to_string()).collect();
        return Err(Error::CoverageImpossible { requested: target, uncovered });
    }

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut held = alloc::vec![false; pairs.len()];
    let mut taken = 0;
    for i in order {
        if taken == target {
            break;
        }
        let count = remaining.get_mut(pairs[i].doc_id.as_str()).expect("counted above");
        if *count > 1 {
            *count -= 1;
            held[i] = true;
            taken += 1;
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = pairs.iter().cloned().zip(held).partition(|(_, h)| *h);
    Ok((train.into_iter().map(|(p, _)| p).collect(), test.into_iter().map(|(p, _)| p).collect()))
}
