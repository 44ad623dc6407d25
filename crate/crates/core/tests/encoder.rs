use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;
use rank_denoise::corpus::{Dialog, Role, Turn};
use rank_denoise::encoder::{
    encode, hash_ngrams, init_state, load_checkpoint, save_checkpoint, score, EncoderConfig,
    ModelState,
};
use rank_denoise::rng::seeded;

fn dialog(texts: &[&str]) -> Dialog {
    let turns = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Turn::new(if i % 2 == 0 { Role::System } else { Role::User }, *t))
        .collect();
    Dialog::new("x".to_string(), turns, None)
}

fn small_state(seed: u64) -> ModelState {
    let mut state = init_state(&EncoderConfig {
        hash_dim: 64,
        hidden_dim: 7,
        feature_dim: 5,
        ngram_orders: BTreeSet::from([1, 2]),
        init_seed: seed,
    })
    .unwrap();
    let mut rng = seeded(seed + 100);
    for v in state.params.data.iter_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
    state
}

#[test]
fn feature_jacobian_matches_central_differences() {
    let d = dialog(&[
        "have you seen it",
        "the plot was fun",
        "the ending was sad and long",
    ]);
    for seed in [1, 2, 3] {
        let state = small_state(seed);
        let fwd = state.forward(&d);
        let mut rng = seeded(seed);
        let upstream: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut analytic = vec![0.0; state.params.data.len()];
        state
            .params
            .backward_features(&fwd, &upstream, &mut analytic);

        let project = |s: &ModelState| -> f64 {
            encode(&d, s)
                .unwrap()
                .values
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-6;
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..state.params.data.len() {
            let mut plus = state.clone();
            plus.params.data[i] += h;
            let mut minus = state.clone();
            minus.params.data[i] -= h;
            let numeric = (project(&plus) - project(&minus)) / (2.0 * h);
            diff2 += (numeric - analytic[i]).powi(2);
            norm2 += numeric.powi(2);
        }
        let rel = (diff2 / norm2).sqrt();
        assert!(rel < 1e-6, "seed {seed}: {rel:e}");
        // Head parameters never enter the features.
        let l = state.params.layout;
        assert!(analytic[l.head_w()].iter().all(|&g| g == 0.0));
        assert_eq!(analytic[l.head_b()], 0.0);
    }
}

#[test]
fn score_gradient_matches_central_differences() {
    let d = dialog(&["whatever the music", "the actor was great"]);
    let state = small_state(9);
    let mut analytic = vec![0.0; state.params.data.len()];
    state
        .params
        .backward_score(&state.forward(&d), 1.0, &mut analytic);
    let h = 1e-6;
    for i in 0..state.params.data.len() {
        let mut plus = state.clone();
        plus.params.data[i] += h;
        let mut minus = state.clone();
        minus.params.data[i] -= h;
        let numeric = (score(&d, &plus).unwrap() - score(&d, &minus).unwrap()) / (2.0 * h);
        assert!(
            (numeric - analytic[i]).abs() < 1e-7,
            "param {i}: {numeric} vs {}",
            analytic[i]
        );
    }
}

#[test]
fn checkpoints_round_trip_exactly() {
    let state = small_state(4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, state);
    let d = dialog(&["a b c", "d e"]);
    assert_eq!(
        score(&d, &loaded).unwrap().to_bits(),
        score(&d, &state).unwrap().to_bits()
    );
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let state = small_state(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

proptest! {
    #[test]
    fn hashed_vectors_are_unit_length(words in prop::collection::vec("[a-z]{1,6}", 1..30), dim in 1usize..300) {
        let d = dialog(&[&words.join(" ")]);
        let v = hash_ngrams(&d, dim, &[1, 2]);
        prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        prop_assert!(v.entries.iter().all(|&(j, _)| (j as usize) < dim));
    }

    #[test]
    fn encoding_is_deterministic(words in prop::collection::vec("[a-z]{1,6}", 1..20), seed in 0u64..50) {
        let d = dialog(&[&words.join(" "), "ok"]);
        let a = small_state(seed);
        let b = small_state(seed);
        prop_assert_eq!(encode(&d, &a).unwrap(), encode(&d, &b).unwrap());
    }
}
