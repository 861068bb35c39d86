//! Deterministic synthetic corpus with topic structure.
//!
//! Every document owns a handful of invented keywords that appear nowhere
//! else, shares topic words with the other documents of its topic, and is
//! padded with stopwords.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::jsonl::DocRecord;

const CONSONANTS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const FILLER: &[&str] = &["the", "of", "and", "a", "in", "to", "is", "was", "for", "on", "with", "as", "by", "at"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub docs: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub keywords_per_doc: usize,
    pub min_body: usize,
    pub max_body: usize,
    pub untitled_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 200,
            topics: 20,
            words_per_topic: 15,
            keywords_per_doc: 6,
            min_body: 30,
            max_body: 40,
            untitled_fraction: 0.1,
            seed: 0,
        }
    }
}

fn invent<R: Rng>(rng: &mut R, taken: &mut BTreeSet<String>) -> String {
    loop {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", CONSONANTS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

/// Generates `cfg.docs` documents with ids `d000`, `d001`, ...
pub fn synth_corpus(cfg: &SynthConfig) -> Vec<DocRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken: BTreeSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
    let topics: Vec<Vec<String>> = (0..cfg.topics.max(1))
        .map(|_| (0..cfg.words_per_topic.max(1)).map(|_| invent(&mut rng, &mut taken)).collect())
        .collect();
    let width = cfg.docs.saturating_sub(1).to_string().len().max(3);
    (0..cfg.docs)
        .map(|i| {
            let topic = &topics[i % topics.len()];
            let keywords: Vec<String> = (0..cfg.keywords_per_doc.max(2)).map(|_| invent(&mut rng, &mut taken)).collect();
            let len = rng.gen_range(cfg.min_body..=cfg.max_body.max(cfg.min_body));
            let body: Vec<&str> = (0..len)
                .map(|_| {
                    let u: f64 = rng.gen();
                    if u < 0.7 {
                        keywords.choose(&mut rng).unwrap().as_str()
                    } else if u < 0.9 {
                        topic.choose(&mut rng).unwrap().as_str()
                    } else {
                        FILLER.choose(&mut rng).unwrap()
                    }
                })
                .collect();
            let title = if rng.gen::<f64>() < cfg.untitled_fraction {
                None
            } else {
                Some(format!("{} {} {}", keywords[0], keywords[1], topic.choose(&mut rng).unwrap()))
            };
            DocRecord { id: format!("d{i:0width$}"), title, body: body.join(" ") }
        })
        .collect()
}
