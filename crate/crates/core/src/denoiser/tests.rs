use super::*;
use crate::diffusion::forward_mask;
use alloc::vec;

fn tiny_config() -> DenoiserConfig {
    DenoiserConfig { layers: 1, width: 16, heads: 2, ffn_width: 32, max_query_len: 4, docid_len: 3, vocab_size: 12 }
}

fn variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64
}

#[test]
fn init_is_deterministic_and_finite() {
    let cfg = DenoiserConfig::small(50, 3);
    let a = DenoiserParameters::init(cfg, 7).unwrap();
    let b = DenoiserParameters::init(cfg, 7).unwrap();
    assert_eq!(a.as_flat(), b.as_flat());
    assert!(a.as_flat().iter().all(|x| x.is_finite()));
    let emb = a.group("tok_emb").unwrap();
    assert!(emb.chunks_exact(cfg.width).all(|row| row.iter().any(|&x| x != 0.0)));
    assert_ne!(a.as_flat(), DenoiserParameters::init(cfg, 8).unwrap().as_flat());
}

#[test]
fn init_variance_halves_when_width_doubles() {
    let narrow = DenoiserParameters::init(DenoiserConfig { width: 64, ffn_width: 128, ..DenoiserConfig::small(50, 3) }, 1).unwrap();
    let wide = DenoiserParameters::init(DenoiserConfig { width: 128, ffn_width: 256, ..DenoiserConfig::small(50, 3) }, 1).unwrap();
    let ratio = variance(narrow.group("layer0.wq").unwrap()) / variance(wide.group("layer0.wq").unwrap());
    assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    assert!((variance(wide.group("layer0.wq").unwrap()) * 128.0 - 1.0).abs() < 0.05);
}

#[test]
fn invalid_configs_are_rejected() {
    let cfg = DenoiserConfig { heads: 3, ..tiny_config() };
    assert!(DenoiserParameters::init(cfg, 0).is_err());
    let cfg = DenoiserConfig { docid_len: 0, ..tiny_config() };
    assert!(DenoiserParameters::init(cfg, 0).is_err());
}

#[test]
fn predictions_are_normalized_and_repeatable() {
    let params = DenoiserParameters::init(tiny_config(), 3).unwrap();
    let seq = MaskedSequence::from_tokens(vec![Vocabulary::MASK, 7, Vocabulary::MASK]);
    let out = params.predict(&[5, 6], &seq).unwrap();
    assert_eq!(out.len(), 3);
    for row in &out {
        assert_eq!(row.len(), 12);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(out, params.predict(&[5, 6], &seq).unwrap());
    let batched = params.predict_batch(&[(&[5, 6], &seq), (&[4], &seq)]).unwrap();
    assert_eq!(batched[0], out);
}

#[test]
fn prediction_ignores_how_the_mask_was_drawn() {
    // Same visible tokens reached from different noise levels must give the
    // same prediction: the model has no time input.
    let params = DenoiserParameters::init(tiny_config(), 3).unwrap();
    let x0 = [8u32, 9, 10];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut by_pattern: alloc::collections::BTreeMap<Vec<TokenId>, Vec<Vec<f64>>> = Default::default();
    for &t in &[0.2, 0.5, 0.8, 0.2, 0.5, 0.8, 0.35, 0.65] {
        for _ in 0..20 {
            let noisy = forward_mask(&x0, t, &mut rng);
            let pred = params.predict(&[5], &noisy).unwrap();
            if let Some(prev) = by_pattern.get(noisy.tokens()) {
                assert_eq!(prev, &pred);
            } else {
                by_pattern.insert(noisy.tokens().to_vec(), pred);
            }
        }
    }
    assert!(by_pattern.len() > 1);
}

#[test]
fn overlong_query_is_rejected() {
    let params = DenoiserParameters::init(tiny_config(), 3).unwrap();
    let err = params.predict(&[5; 5], &MaskedSequence::all_masked(3)).unwrap_err();
    assert_eq!(err, Error::SequenceTooLong { len: 5, max: 4 });
}

fn masked_batch() -> Vec<MaskedExample> {
    let mk = |cond: Vec<TokenId>, target: Vec<TokenId>, positions: Vec<usize>, t: f64| MaskedExample {
        condition: cond,
        target,
        mask: TrainingMask { t, positions, weight: 1.0 / t },
    };
    vec![
        mk(vec![5, 6, 7], vec![8, 9, 10], vec![0, 2], 0.7),
        mk(vec![11], vec![9, 1, 1], vec![0, 1, 2], 1.0),
        mk(vec![4, 4, 5, 6], vec![10, 8, 11], vec![1], 0.3),
    ]
}

#[test]
fn gradients_match_finite_differences() {
    let mut params = DenoiserParameters::init(tiny_config(), 5).unwrap();
    let batch = masked_batch();
    let (_, grads) = loss_and_gradients_masked(&params, &batch).unwrap();
    let h = 1e-4;
    for (name, range) in params.layout().groups() {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in range {
            let orig = params.as_flat()[i];
            params.as_flat_mut()[i] = orig + h;
            let plus = loss_and_gradients_masked(&params, &batch).unwrap().0;
            params.as_flat_mut()[i] = orig - h;
            let minus = loss_and_gradients_masked(&params, &batch).unwrap().0;
            params.as_flat_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            num += (fd - grads.as_flat()[i]).powi(2);
            den += fd * fd;
        }
        let rel = libm::sqrt(num) / libm::sqrt(den).max(1e-12);
        assert!(rel < 1e-3, "{name}: relative error {rel}");
    }
}

#[test]
fn duplicated_batch_has_same_loss() {
    let params = DenoiserParameters::init(tiny_config(), 5).unwrap();
    let batch = masked_batch();
    let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
    let (a, ga) = loss_and_gradients_masked(&params, &batch).unwrap();
    let (b, gb) = loss_and_gradients_masked(&params, &doubled).unwrap();
    assert!((a - b).abs() < 1e-12);
    for (x, y) in ga.as_flat().iter().zip(gb.as_flat()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn untrained_loss_is_positive() {
    let params = DenoiserParameters::init(tiny_config(), 5).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let batch = vec![TrainingExample { condition: vec![5, 6], target: vec![8, 9, 10] }];
    for _ in 0..50 {
        let (loss, _) = loss_and_gradients(&params, &batch, &mut rng).unwrap();
        assert!(loss > 0.0);
    }
}

#[test]
fn memorizes_a_single_pair() {
    let params = DenoiserParameters::init(tiny_config(), 9).unwrap();
    let examples = vec![TrainingExample { condition: vec![5, 6], target: vec![8, 11, 9] }];
    let cfg = TrainConfig { learning_rate: 1e-2, batch_size: 1, epochs: 200, seed: 1, ..TrainConfig::default() };
    let mut state = TrainState::new(params);
    train(&mut state, &examples, &cfg, |_, _| core::ops::ControlFlow::Continue(())).unwrap();
    assert_eq!(state.loss_trace.len(), 200);
    let probs = state.params.predict(&[5, 6], &MaskedSequence::all_masked(3)).unwrap();
    let argmax: Vec<usize> = probs
        .iter()
        .map(|row| row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0)
        .collect();
    assert_eq!(argmax, [8, 11, 9]);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let examples: Vec<_> = (0..6)
        .map(|i| TrainingExample { condition: vec![4 + i as u32 % 3, 7], target: vec![8 + i as u32 % 4, 9, 10] })
        .collect();
    let cfg = TrainConfig { learning_rate: 3e-3, batch_size: 4, epochs: 4, seed: 2, ..TrainConfig::default() };
    let run = || {
        let mut s = TrainState::new(DenoiserParameters::init(tiny_config(), 1).unwrap());
        train(&mut s, &examples, &cfg, |_, _| core::ops::ControlFlow::Continue(())).unwrap();
        s
    };
    let full = run();
    assert_eq!(full, run());

    let mut partial = TrainState::new(DenoiserParameters::init(tiny_config(), 1).unwrap());
    train(&mut partial, &examples, &cfg, |r, _| {
        if r.epoch == 1 {
            core::ops::ControlFlow::Break(())
        } else {
            core::ops::ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(partial.epochs_done, 2);
    let mut resumed = partial.clone();
    train(&mut resumed, &examples, &cfg, |_, _| core::ops::ControlFlow::Continue(())).unwrap();
    assert_eq!(resumed, full);
}

#[test]
fn divergence_aborts() {
    let examples = vec![TrainingExample { condition: vec![5], target: vec![8, 9, 10] }];
    let cfg = TrainConfig { learning_rate: 50.0, batch_size: 1, epochs: 50, seed: 0, grad_clip: 0.0, weight_decay: 0.0, ..TrainConfig::default() };
    let mut s = TrainState::new(DenoiserParameters::init(tiny_config(), 1).unwrap());
    let err = train(&mut s, &examples, &cfg, |_, _| core::ops::ControlFlow::Continue(())).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. } | Error::NonFiniteLoss(_)), "{err:?}");
}
