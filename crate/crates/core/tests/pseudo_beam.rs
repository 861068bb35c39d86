use std::collections::BTreeSet;
use std::ops::ControlFlow;

use difret_core::corpus::Vocabulary;
use difret_core::denoiser::{train, DenoiserConfig, DenoiserParameters, TrainConfig, TrainState, TrainingExample};
use difret_core::docid::{DocIdKind, DocIdRegistry, RegistryEntry};
use difret_core::sampler::{generate, BeamConfig, BeamMode, DenoisingStrategy, Retriever, SamplerConfig, Scoring};

// Words 4..16, two code levels of size 3 after them.
fn vocab() -> Vocabulary {
    Vocabulary::from_words((0..12).map(|i| format!("w{i:02}")), &[3, 3])
}

fn code(v: &Vocabulary, a: usize, b: usize) -> Vec<u32> {
    vec![v.code_id(0, a).unwrap(), v.code_id(1, b).unwrap()]
}

fn registry(v: &Vocabulary) -> DocIdRegistry {
    let entries = (0..3)
        .flat_map(|a| (0..3).map(move |b| (a, b)))
        .map(|(a, b)| RegistryEntry { doc_id: format!("doc{a}{b}"), tokens: code(v, a, b) })
        .collect();
    DocIdRegistry::from_entries(DocIdKind::Learnable { sizes: vec![3, 3], dim: 2 }, entries).unwrap()
}

fn trained(v: &Vocabulary) -> DenoiserParameters {
    let cfg = DenoiserConfig { layers: 1, width: 16, heads: 2, ffn_width: 32, max_query_len: 4, docid_len: 2, vocab_size: v.len() };
    let examples: Vec<TrainingExample> = (0..9)
        .map(|i| TrainingExample {
            condition: v.encode_words(&[format!("w{i:02}")]),
            target: code(v, i / 3, i % 3),
        })
        .collect();
    let tc = TrainConfig { learning_rate: 1e-2, batch_size: 9, epochs: 300, seed: 0, ..TrainConfig::default() };
    let mut st = TrainState::new(DenoiserParameters::init(cfg, 1).unwrap());
    train(&mut st, &examples, &tc, |_, _| ControlFlow::Continue(())).unwrap();
    st.params
}

fn sampler(steps: usize, seed: u64) -> SamplerConfig {
    SamplerConfig { steps, docid_len: 2, strategy: DenoisingStrategy::MaskgitPlus, seed }
}

#[test]
fn results_are_valid_unique_and_bounded() {
    let v = vocab();
    let reg = registry(&v);
    let params = trained(&v);
    let r = Retriever { params: &params, vocab: &v, registry: &reg };
    for mode in [BeamMode::Vanilla, BeamMode::QueryAug, BeamMode::Intermediate, BeamMode::Both] {
        for scoring in [Scoring::Trajectory, Scoring::PseudoLikelihood] {
            for k in [1, 2, 10] {
                for i in 0..9 {
                    let q = vec![format!("w{i:02}"), "w11".into(), "w10".into()];
                    let beam = BeamConfig { mode, k, n_variants: 4, scoring };
                    let out = r.pseudo_beam(&q, &sampler(2, i), &beam).unwrap();
                    assert!(!out.is_empty() && out.len() <= k);
                    let ids: BTreeSet<_> = out.iter().map(|(d, _)| d).collect();
                    assert_eq!(ids.len(), out.len());
                    assert!(out.iter().all(|(d, _)| reg.tokens_of(d).is_some()));
                    assert!(out.windows(2).all(|w| w[0].1 >= w[1].1));
                }
            }
        }
    }
}

#[test]
fn vanilla_list_contains_the_decoded_identifier() {
    let v = vocab();
    let reg = registry(&v);
    let params = trained(&v);
    let r = Retriever { params: &params, vocab: &v, registry: &reg };
    for i in 0..9 {
        let q = vec![format!("w{i:02}")];
        let s = sampler(2, 0);
        let (tokens, _) = generate(&params, &r.encode_query(&q), &s).unwrap();
        let out = r.pseudo_beam(&q, &s, &BeamConfig { mode: BeamMode::Vanilla, ..BeamConfig::default() }).unwrap();
        assert_eq!(out.first().map(|(d, _)| d.as_str()), reg.lookup(&tokens));
        assert_eq!(out[0].0, format!("doc{}{}", i / 3, i % 3));
    }
}

#[test]
fn intermediate_pool_keeps_the_final_identifier() {
    let v = vocab();
    let reg = registry(&v);
    let params = trained(&v);
    let r = Retriever { params: &params, vocab: &v, registry: &reg };
    for steps in 1..=4 {
        let q = vec!["w04".to_string()];
        let s = sampler(steps, 3);
        let (tokens, _) = generate(&params, &r.encode_query(&q), &s).unwrap();
        let beam = BeamConfig { mode: BeamMode::Intermediate, ..BeamConfig::default() };
        let pool = r.candidate_pool(&q, &s, &beam).unwrap();
        assert_eq!(pool.entries.len(), steps);
        assert!(pool.entries.iter().any(|(t, _)| *t == tokens));
    }
}

#[test]
fn invalid_candidates_are_dropped() {
    let v = vocab();
    // A registry that knows none of what the model was trained to emit.
    let entries = vec![RegistryEntry { doc_id: "only".into(), tokens: vec![v.word_id("w00").unwrap(), v.word_id("w01").unwrap()] }];
    let reg = DocIdRegistry::from_entries(DocIdKind::Linguistic { max_tokens: 2 }, entries).unwrap();
    let params = trained(&v);
    let r = Retriever { params: &params, vocab: &v, registry: &reg };
    let out = r.pseudo_beam(&["w03".to_string()], &sampler(2, 0), &BeamConfig::default()).unwrap();
    assert!(out.is_empty());
}

#[test]
fn duplicates_keep_their_best_score_and_first_position() {
    let v = vocab();
    let reg = registry(&v);
    let params = trained(&v);
    let r = Retriever { params: &params, vocab: &v, registry: &reg };
    let q = vec!["w05".to_string()];
    let pool = difret_core::sampler::CandidatePool {
        entries: vec![(code(&v, 0, 1), -3.0), (code(&v, 2, 2), -1.0), (code(&v, 0, 1), -0.5), (code(&v, 1, 1), -1.0)],
    };
    let beam = BeamConfig { scoring: Scoring::Trajectory, ..BeamConfig::default() };
    let out = r.rank(&q, pool, &beam).unwrap();
    let ids: Vec<_> = out.iter().map(|(d, s)| (d.as_str(), *s)).collect();
    assert_eq!(ids, [("doc01", -0.5), ("doc22", -1.0), ("doc11", -1.0)]);
}
