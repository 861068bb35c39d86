//! Parallel identifier generation by iterative denoising.
//!
//! Generation starts from an all-masked identifier and walks the uniform
//! time grid `t_k = 1 - k / T`. Every step predicts all slots, then commits
//! the scheduled number of masked slots chosen by a [`DenoisingStrategy`];
//! committed tokens are never revised.
//!
//! [`Retriever::pseudo_beam`] turns single decodes into ranked candidate
//! lists, either by decoding perturbed copies of the query or by keeping the
//! intermediate states of one decode.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;
use crate::denoiser::DenoiserParameters;
use crate::diffusion::{remask_count, time_grid, MaskedSequence};
use crate::docid::DocIdRegistry;
use crate::{Error, Result, TokenId};

/// Which masked slots get committed at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DenoisingStrategy {
    /// Uniformly random slots.
    Random,
    /// Highest top-1 probability first.
    MaskgitPlus,
    /// Largest gap between the top-1 and top-2 probabilities first.
    TopkMargin,
    /// Lowest entropy first.
    Entropy,
}

impl DenoisingStrategy {
    pub const ALL: [DenoisingStrategy; 4] = [Self::Random, Self::MaskgitPlus, Self::TopkMargin, Self::Entropy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::MaskgitPlus => "maskgit_plus",
            Self::TopkMargin => "topk_margin",
            Self::Entropy => "entropy",
        }
    }
}

impl fmt::Display for DenoisingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DenoisingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub docid_len: usize,
    pub strategy: DenoisingStrategy,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.docid_len == 0 {
            return Err(Error::InvalidArgument("steps and identifier length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything observed during one decode.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrajectory {
    /// State before the first step and after every step (`steps + 1` entries).
    pub snapshots: Vec<MaskedSequence>,
    /// Per step, the argmax token at every slot.
    pub step_argmax: Vec<Vec<TokenId>>,
    /// Per step, the log-probability of each slot's argmax.
    pub step_logprob: Vec<Vec<f64>>,
    /// Log-probability of each slot's token when it was committed.
    pub finalize_logprob: Vec<f64>,
    /// Step at which each slot was committed.
    pub finalize_step: Vec<usize>,
}

impl DecodeTrajectory {
    /// Identifier read at step `k`: committed tokens, with still-masked slots
    /// filled by that step's argmax.
    pub fn candidate_at(&self, k: usize) -> Vec<TokenId> {
        let snap = &self.snapshots[k + 1];
        (0..snap.len())
            .map(|i| if snap.is_masked(i) { self.step_argmax[k][i] } else { snap.tokens()[i] })
            .collect()
    }

    /// Sum of log-probabilities behind [`candidate_at`](Self::candidate_at).
    pub fn score_at(&self, k: usize) -> f64 {
        let snap = &self.snapshots[k + 1];
        (0..snap.len())
            .map(|i| if snap.is_masked(i) { self.step_logprob[k][i] } else { self.finalize_logprob[i] })
            .sum()
    }

    pub fn steps(&self) -> usize {
        self.step_argmax.len()
    }

    /// Score of the final identifier.
    pub fn final_score(&self) -> f64 {
        self.finalize_logprob.iter().sum()
    }
}

/// Most likely non-MASK token and its probability, plus the runner-up
/// probability.
fn top_two(row: &[f64]) -> (usize, f64, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    for (tok, &p) in row.iter().enumerate() {
        if tok == Vocabulary::MASK as usize {
            continue;
        }
        if p > best.1 {
            second = best.1;
            best = (tok, p);
        } else if p > second {
            second = p;
        }
    }
    (best.0, best.1, second.max(0.0))
}

fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * libm::log(p)).sum::<f64>()
}

/// Chooses `n` of the masked positions to commit. Returned positions are
/// ascending.
pub fn select_finalize<R: Rng + ?Sized>(
    distributions: &[Vec<f64>],
    masked: &[usize],
    n: usize,
    strategy: DenoisingStrategy,
    rng: &mut R,
) -> Vec<usize> {
    assert!(n <= masked.len(), "cannot finalize {n} of {} masked slots", masked.len());
    let mut chosen: Vec<usize> = match strategy {
        DenoisingStrategy::Random => index::sample(rng, masked.len(), n).into_iter().map(|i| masked[i]).collect(),
        _ => {
            let score = |pos: usize| {
                let row = &distributions[pos];
                match strategy {
                    DenoisingStrategy::MaskgitPlus => top_two(row).1,
                    DenoisingStrategy::TopkMargin => {
                        let (_, p1, p2) = top_two(row);
                        p1 - p2
                    }
                    DenoisingStrategy::Entropy => -entropy(row),
                    DenoisingStrategy::Random => unreachable!(),
                }
            };
            let mut ranked: Vec<(f64, usize)> = masked.iter().map(|&p| (score(p), p)).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            ranked.into_iter().take(n).map(|(_, p)| p).collect()
        }
    };
    chosen.sort_unstable();
    chosen
}

/// Decodes an identifier for `condition` in `cfg.steps` denoising steps.
pub fn generate(
    params: &DenoiserParameters,
    condition: &[TokenId],
    cfg: &SamplerConfig,
) -> Result<(Vec<TokenId>, DecodeTrajectory)> {
    cfg.validate()?;
    let l = cfg.docid_len;
    if l != params.config().docid_len {
        return Err(Error::DimensionMismatch { expected: params.config().docid_len, got: l });
    }
    let grid = time_grid(cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seq = MaskedSequence::all_masked(l);
    let mut traj = DecodeTrajectory {
        snapshots: alloc::vec![seq.clone()],
        step_argmax: Vec::with_capacity(cfg.steps),
        step_logprob: Vec::with_capacity(cfg.steps),
        finalize_logprob: alloc::vec![0.0; l],
        finalize_step: alloc::vec![0; l],
    };
    for k in 0..cfg.steps {
        let dists = params.predict(condition, &seq)?;
        let (argmax, logprob): (Vec<TokenId>, Vec<f64>) = dists
            .iter()
            .map(|row| {
                let (tok, p, _) = top_two(row);
                (tok as TokenId, libm::log(p))
            })
            .unzip();
        let masked = seq.masked_positions();
        let (n, _) = remask_count(l, grid[k], grid[k + 1]);
        for i in select_finalize(&dists, &masked, n.min(masked.len()), cfg.strategy, &mut rng) {
            seq.reveal(i, argmax[i]);
            traj.finalize_logprob[i] = logprob[i];
            traj.finalize_step[i] = k;
        }
        traj.step_argmax.push(argmax);
        traj.step_logprob.push(logprob);
        traj.snapshots.push(seq.clone());
    }
    debug_assert_eq!(seq.masked_count(), 0);
    Ok((seq.into_tokens(), traj))
}

/// `sum_i log p(z_i | condition, z with slot i masked)`: one extra model
/// input per slot, evaluated as a single batch.
pub fn pseudo_likelihood(params: &DenoiserParameters, condition: &[TokenId], docid: &[TokenId]) -> Result<f64> {
    let variants: Vec<MaskedSequence> = (0..docid.len())
        .map(|i| {
            let mut s = MaskedSequence::from_tokens(docid.to_vec());
            s.mask(i);
            s
        })
        .collect();
    let items: Vec<(&[TokenId], &MaskedSequence)> = variants.iter().map(|v| (condition, v)).collect();
    let out = params.predict_batch(&items)?;
    Ok(out.iter().enumerate().map(|(i, d)| libm::log(d[i][docid[i] as usize])).sum())
}

/// Function words never dropped by [`augment_query`].
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "he", "in", "is", "it", "its", "of", "on",
    "or", "that", "the", "to", "was", "were", "which", "who", "will", "with", "what", "when", "where", "how",
];

const DROP_PROB: f64 = 0.1;
const SWAP_PROB: f64 = 0.05;

/// Query variants for pseudo beam search. Variant 0 is the query itself;
/// the others drop non-stopwords (p = 0.1) and swap adjacent tokens
/// (p = 0.05). A variant that would come out empty keeps the original.
pub fn augment_query(query: &[String], n_variants: usize, rng_seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(n_variants);
    if n_variants == 0 {
        return out;
    }
    out.push(query.to_vec());
    for _ in 1..n_variants {
        let mut v: Vec<String> = query
            .iter()
            .filter(|w| STOPWORDS.contains(&w.as_str()) || rng.gen::<f64>() >= DROP_PROB)
            .cloned()
            .collect();
        let mut i = 0;
        while i + 1 < v.len() {
            if rng.gen::<f64>() < SWAP_PROB {
                v.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        out.push(if v.is_empty() { query.to_vec() } else { v });
    }
    out
}

/// How candidate lists are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeamMode {
    /// Final identifier of a single decode.
    Vanilla,
    /// Final identifiers of decodes of every query variant.
    QueryAug,
    /// Every intermediate state of a single decode.
    Intermediate,
    Both,
}

impl BeamMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::QueryAug => "query_aug",
            Self::Intermediate => "intermediate",
            Self::Both => "both",
        }
    }
}

impl FromStr for BeamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Vanilla, Self::QueryAug, Self::Intermediate, Self::Both]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown beam mode {s:?}")))
    }
}

/// How candidates are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scoring {
    /// Log-probabilities recorded during decoding; no extra model calls.
    Trajectory,
    /// Pseudo-likelihood under the original query; one extra input per slot.
    PseudoLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub mode: BeamMode,
    pub k: usize,
    pub n_variants: usize,
    pub scoring: Scoring,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { mode: BeamMode::Vanilla, k: 10, n_variants: 4, scoring: Scoring::PseudoLikelihood }
    }
}

/// A trained model bundled with what it needs to resolve identifiers.
#[derive(Debug, Clone, Copy)]
pub struct Retriever<'a> {
    pub params: &'a DenoiserParameters,
    pub vocab: &'a Vocabulary,
    pub registry: &'a DocIdRegistry,
}

impl<'a> Retriever<'a> {
    /// Query words to model input, truncated to the query budget.
    pub fn encode_query(&self, words: &[String]) -> Vec<TokenId> {
        let mut ids = self.vocab.encode_words(words);
        ids.truncate(self.params.config().max_query_len);
        ids
    }

    /// Decodes every query variant and collects the raw candidate pool in
    /// generation order. This is the only part that runs the sampler.
    pub fn candidate_pool(&self, query: &[String], sampler: &SamplerConfig, beam: &BeamConfig) -> Result<CandidatePool> {
        let variants = match beam.mode {
            BeamMode::QueryAug | BeamMode::Both => augment_query(query, beam.n_variants.max(1), sampler.seed),
            BeamMode::Vanilla | BeamMode::Intermediate => alloc::vec![query.to_vec()],
        };
        let keep_intermediate = matches!(beam.mode, BeamMode::Intermediate | BeamMode::Both);
        let mut entries = Vec::new();
        for words in &variants {
            let (tokens, traj) = generate(self.params, &self.encode_query(words), sampler)?;
            if keep_intermediate {
                for k in 0..traj.steps() {
                    entries.push((traj.candidate_at(k), traj.score_at(k)));
                }
            } else {
                entries.push((tokens, traj.final_score()));
            }
        }
        Ok(CandidatePool { entries })
    }

    /// Resolves, scores, deduplicates and truncates a candidate pool.
    /// Unresolvable identifiers are dropped; a document keeps its best
    /// score and ties go to whichever was generated first.
    pub fn rank(&self, query: &[String], pool: CandidatePool, beam: &BeamConfig) -> Result<Vec<(String, f64)>> {
        let original = self.encode_query(query);
        // doc_id -> (score, first-generated order)
        let mut best: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut scored: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
        for (order, (tokens, traj_score)) in pool.entries.into_iter().enumerate() {
            let Some(doc_id) = self.registry.lookup_padded(&tokens) else { continue };
            let score = match beam.scoring {
                Scoring::Trajectory => traj_score,
                Scoring::PseudoLikelihood => match scored.get(&tokens) {
                    Some(&s) => s,
                    None => {
                        let s = pseudo_likelihood(self.params, &original, &tokens)?;
                        scored.insert(tokens.clone(), s);
                        s
                    }
                },
            };
            best.entry(doc_id.to_string())
                .and_modify(|e| e.0 = e.0.max(score))
                .or_insert((score, order));
        }
        let mut ranked: Vec<(String, f64, usize)> = best.into_iter().map(|(d, (s, o))| (d, s, o)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(beam.k);
        Ok(ranked.into_iter().map(|(d, s, _)| (d, s)).collect())
    }

    /// Ranked `(doc_id, score)` candidates, at most `beam.k` of them,
    /// duplicate-free and all resolvable in the registry.
    pub fn pseudo_beam(&self, query: &[String], sampler: &SamplerConfig, beam: &BeamConfig) -> Result<Vec<(String, f64)>> {
        let pool = self.candidate_pool(query, sampler, beam)?;
        self.rank(query, pool, beam)
    }
}

/// Generated identifiers with their trajectory scores, in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub entries: Vec<(Vec<TokenId>, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn onehot(v: usize, hot: usize) -> Vec<f64> {
        let mut r = vec![0.0; v];
        r[hot] = 1.0;
        r
    }

    #[test]
    fn maskgit_plus_commits_most_confident() {
        let mk = |p: f64| {
            let mut r = vec![(1.0 - p) / 3.0; 4];
            r[1] = p;
            r
        };
        let d = vec![mk(0.9), mk(0.2), mk(0.6)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_finalize(&d, &[0, 1, 2], 1, DenoisingStrategy::MaskgitPlus, &mut rng), [0]);
        assert_eq!(select_finalize(&d, &[1, 2], 1, DenoisingStrategy::MaskgitPlus, &mut rng), [2]);
    }

    #[test]
    fn margin_prefers_decisive_slots() {
        let d = vec![vec![0.0, 0.5, 0.4, 0.1], vec![0.0, 0.9, 0.05, 0.05]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_finalize(&d, &[0, 1], 1, DenoisingStrategy::TopkMargin, &mut rng), [1]);
    }

    #[test]
    fn entropy_prefers_peaked_slots() {
        let v = 6;
        let d = vec![vec![1.0 / v as f64; v], onehot(v, 3)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_finalize(&d, &[0, 1], 1, DenoisingStrategy::Entropy, &mut rng), [1]);
    }

    #[test]
    fn confidence_ties_break_by_position() {
        let d = vec![onehot(4, 1); 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in [DenoisingStrategy::MaskgitPlus, DenoisingStrategy::TopkMargin, DenoisingStrategy::Entropy] {
            assert_eq!(select_finalize(&d, &[0, 1, 2], 2, s, &mut rng), [0, 1]);
        }
    }

    #[test]
    fn random_selection_is_seeded_and_sized() {
        let d = vec![onehot(4, 1); 8];
        let masked: Vec<usize> = (0..8).collect();
        let a = select_finalize(&d, &masked, 3, DenoisingStrategy::Random, &mut ChaCha8Rng::seed_from_u64(5));
        let b = select_finalize(&d, &masked, 3, DenoisingStrategy::Random, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in DenoisingStrategy::ALL {
            assert_eq!(s.name().parse::<DenoisingStrategy>().unwrap(), s);
        }
        assert!("greedy".parse::<DenoisingStrategy>().is_err());
    }

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn augmentation_keeps_original_first() {
        let q = words("the history of the roman empire in europe");
        assert_eq!(augment_query(&q, 1, 3), vec![q.clone()]);
        let vs = augment_query(&q, 8, 3);
        assert_eq!(vs.len(), 8);
        assert_eq!(vs[0], q);
        assert_eq!(vs, augment_query(&q, 8, 3));
        for v in &vs {
            assert!(!v.is_empty());
            let mut pool = q.clone();
            for w in v {
                let at = pool.iter().position(|p| p == w).expect("token from original");
                pool.remove(at);
            }
        }
    }
}
