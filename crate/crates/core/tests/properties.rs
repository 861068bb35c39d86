use std::collections::{BTreeMap, BTreeSet};

use difret_core::corpus::{build_vocabulary, generate_pseudo_queries, split_dataset, tokenize, Document, RelevancePair, Vocabulary};
use difret_core::denoiser::{DenoiserConfig, DenoiserParameters};
use difret_core::diffusion::{forward_mask, remask_count, time_grid};
use difret_core::docid::{quantize, reconstruct, Codebook, DocIdKind, DocIdRegistry, RegistryEntry};
use difret_core::metrics::{mrr_at_k, recall_at_k, Qrels, RankedResults};
use difret_core::sampler::{augment_query, generate, DenoisingStrategy, SamplerConfig};
use difret_core::TokenId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn word() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,6}"
}

fn body() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), 1..40)
}

proptest! {
    #[test]
    fn tokenize_is_idempotent_modulo_unk(known in body(), text in "[A-Za-z0-9 .,;!?'-]{0,60}") {
        let doc = Document::new("d", None, &known.join(" ")).unwrap();
        let vocab = build_vocabulary(&[doc], &[], &[2, 3]);
        let once = tokenize(&text, &vocab);
        let twice = tokenize(&vocab.detokenize(&once), &vocab);
        let strip = |ids: &[TokenId]| ids.iter().copied().filter(|&t| t != Vocabulary::UNK).collect::<Vec<_>>();
        prop_assert_eq!(strip(&twice), strip(&once));
    }

    #[test]
    fn pseudo_queries_are_verbatim_spans(words in body(), n in 0usize..15, seed in any::<u64>()) {
        let doc = Document::new("d", None, &words.join(" ")).unwrap();
        let qs = generate_pseudo_queries(&doc, n, seed);
        if doc.body.len() >= 4 {
            prop_assert_eq!(qs.len(), n);
        } else {
            prop_assert_eq!(qs.len(), n.min(1));
        }
        for q in &qs {
            let len = q.text.len();
            prop_assert!(doc.body.len() < 4 || (4..=12).contains(&len));
            prop_assert!(doc.body.windows(len).any(|w| w == q.text.as_slice()));
        }
        prop_assert_eq!(qs, generate_pseudo_queries(&doc, n, seed));
    }

    #[test]
    fn split_is_a_covering_partition(
        counts in prop::collection::vec(1usize..6, 1..20),
        frac in 0.05f64..0.6,
        seed in any::<u64>(),
    ) {
        let pairs: Vec<RelevancePair> = counts
            .iter()
            .enumerate()
            .flat_map(|(d, &c)| (0..c).map(move |j| RelevancePair::new(format!("q{d}_{j}"), format!("d{d}"))))
            .collect();
        match split_dataset(&pairs, frac, seed) {
            Ok((train, test)) => {
                let target = (pairs.len() as f64 * frac).round() as usize;
                prop_assert_eq!(test.len(), target);
                let mut all: Vec<_> = train.iter().chain(&test).cloned().collect();
                all.sort();
                let mut input = pairs.clone();
                input.sort();
                prop_assert_eq!(all, input);
                let tr: BTreeSet<_> = train.iter().collect();
                prop_assert!(test.iter().all(|p| !tr.contains(p)));
                let covered: BTreeSet<_> = train.iter().map(|p| &p.doc_id).collect();
                prop_assert_eq!(covered.len(), counts.len());
            }
            Err(_) => {
                let spare: usize = counts.iter().map(|c| c - 1).sum();
                prop_assert!(spare < (pairs.len() as f64 * frac).round() as usize);
            }
        }
    }

    #[test]
    fn remask_counts_telescope_on_any_grid(l in 1usize..40, mut cuts in prop::collection::vec(0.0f64..1.0, 0..12)) {
        cuts.retain(|&c| c > 0.0);
        cuts.sort_by(|a, b| b.total_cmp(a));
        cuts.dedup();
        let grid: Vec<f64> = std::iter::once(1.0).chain(cuts).chain(std::iter::once(0.0)).collect();
        let mut total = 0;
        for w in grid.windows(2) {
            let (fin, remain) = remask_count(l, w[0], w[1]);
            prop_assert_eq!(remain, (l as f64 * w[1]).round() as usize);
            total += fin;
        }
        prop_assert_eq!(total, l);
    }

    #[test]
    fn forward_mask_only_masks(x0 in prop::collection::vec(1u32..50, 1..30), t in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = forward_mask(&x0, t, &mut rng);
        for (i, (&a, &b)) in x0.iter().zip(noisy.tokens()).enumerate() {
            prop_assert!(b == a || b == Vocabulary::MASK);
            prop_assert_eq!(noisy.is_masked(i), b == Vocabulary::MASK);
        }
        let again = forward_mask(noisy.tokens(), 0.0, &mut rng);
        prop_assert_eq!(again.tokens(), noisy.tokens());
    }

    #[test]
    fn registry_is_a_bijection(codes in prop::collection::btree_set(prop::collection::vec(0usize..5, 3), 1..40)) {
        let vocab = Vocabulary::from_words(["w"], &[5, 5, 5]);
        let entries: Vec<RegistryEntry> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| RegistryEntry {
                doc_id: format!("d{i}"),
                tokens: c.iter().enumerate().map(|(lvl, &k)| vocab.code_id(lvl, k).unwrap()).collect(),
            })
            .collect();
        let reg = DocIdRegistry::from_entries(DocIdKind::Learnable { sizes: vec![5, 5, 5], dim: 4 }, entries.clone()).unwrap();
        prop_assert_eq!(reg.len(), entries.len());
        for e in &entries {
            prop_assert_eq!(reg.lookup(&e.tokens), Some(e.doc_id.as_str()));
            prop_assert_eq!(reg.tokens_of(&e.doc_id), Some(e.tokens.as_slice()));
            prop_assert_eq!(reg.lookup(&e.tokens[..2]), None);
            let mut masked = e.tokens.clone();
            masked[1] = Vocabulary::MASK;
            prop_assert_eq!(reg.lookup(&masked), None);
        }
    }

    #[test]
    fn quantize_reconstruct_identity(seed in any::<u64>(), dim in 1usize..6, sizes in prop::collection::vec(2usize..6, 1..4)) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels: Vec<Vec<f64>> = sizes.iter().map(|&k| (0..k * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let cb = Codebook::new(dim, levels).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (id, res) = quantize(&x, &cb).unwrap();
        prop_assert_eq!(&quantize(&x, &cb).unwrap().0, &id);
        let rec = reconstruct(&id, &cb).unwrap();
        let err: f64 = x.iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!((err - res).abs() < 1e-9);
    }

    #[test]
    fn augmented_variants_only_drop_and_swap(words in body(), n in 1usize..6, seed in any::<u64>()) {
        let vs = augment_query(&words, n, seed);
        prop_assert_eq!(vs.len(), n);
        prop_assert_eq!(&vs[0], &words);
        fn count(ws: &[String]) -> BTreeMap<&str, usize> {
            let mut m = BTreeMap::new();
            for w in ws {
                *m.entry(w.as_str()).or_default() += 1;
            }
            m
        }
        let orig = count(&words);
        for v in &vs {
            prop_assert!(!v.is_empty());
            for (w, c) in count(v) {
                prop_assert!(orig.get(w).is_some_and(|&o| c <= o));
            }
        }
        prop_assert_eq!(vs, augment_query(&words, n, seed));
    }

    #[test]
    fn metric_ordering_invariants(
        lists in prop::collection::vec((prop::collection::vec(0u8..12, 0..12), 0u8..12), 1..20),
    ) {
        let mut results = RankedResults::new();
        let mut qrels = Qrels::new();
        for (i, (ranked, rel)) in lists.iter().enumerate() {
            let mut seen = BTreeSet::new();
            let dedup: Vec<String> = ranked.iter().filter(|d| seen.insert(**d)).map(|d| format!("d{d}")).collect();
            results.insert(format!("q{i}"), dedup);
            qrels.insert(format!("q{i}"), [format!("d{rel}")].into());
        }
        let r = |k| recall_at_k(&results, &qrels, k).unwrap();
        let mrr = mrr_at_k(&results, &qrels, 10).unwrap();
        prop_assert!(0.0 <= mrr && mrr <= r(10) && r(10) <= 1.0);
        for k in 1..12 {
            prop_assert!(r(k) <= r(k + 1));
        }
        // Rebuilding the maps in reverse insertion order changes nothing.
        let rev: RankedResults = results.iter().rev().map(|(k, v)| (k.clone(), v.clone())).collect();
        prop_assert_eq!(recall_at_k(&rev, &qrels, 5).unwrap(), r(5));
    }
}

fn tiny_model(l: usize, seed: u64) -> DenoiserParameters {
    let cfg = DenoiserConfig { layers: 1, width: 16, heads: 2, ffn_width: 32, max_query_len: 4, docid_len: l, vocab_size: 14 };
    DenoiserParameters::init(cfg, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoding_schedule_invariants(
        l in 1usize..7,
        steps in 1usize..9,
        strategy in prop::sample::select(DenoisingStrategy::ALL.to_vec()),
        seed in any::<u64>(),
    ) {
        let params = tiny_model(l, seed % 7);
        let cfg = SamplerConfig { steps, docid_len: l, strategy, seed };
        let (tokens, traj) = generate(&params, &[5, 6], &cfg).unwrap();
        prop_assert!(tokens.iter().all(|&t| t != Vocabulary::MASK));
        prop_assert_eq!(traj.snapshots.len(), steps + 1);
        let grid = time_grid(steps);
        for k in 0..steps {
            let after = &traj.snapshots[k + 1];
            prop_assert_eq!(after.masked_count(), (l as f64 * grid[k + 1]).round() as usize);
            let before = &traj.snapshots[k];
            for i in 0..l {
                if !before.is_masked(i) {
                    prop_assert_eq!(after.tokens()[i], before.tokens()[i]);
                }
            }
        }
        prop_assert_eq!(traj.candidate_at(steps - 1), tokens.clone());
        prop_assert_eq!((tokens, traj), generate(&params, &[5, 6], &cfg).unwrap());
    }
}
