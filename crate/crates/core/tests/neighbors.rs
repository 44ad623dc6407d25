use std::collections::HashMap;

use proptest::prelude::*;
use rand::Rng;
use rank_denoise::encoder::FeatureVector;
use rank_denoise::neighbors::{
    knn, make_stage2_pairs, regress_features, smooth_labels, NeighborIndex, Normalization,
    SmoothedRating,
};
use rank_denoise::rng::seeded;

/// A coarse grid makes distance ties common.
fn coord<R: Rng>(rng: &mut R, grid: bool) -> f64 {
    if grid {
        rng.gen_range(0..4) as f64 * 0.5
    } else {
        rng.gen_range(-1.0..1.0)
    }
}

fn random_index(seed: u64, n: usize, dim: usize, grid: bool) -> NeighborIndex {
    let mut rng = seeded(seed);
    let features = (0..n)
        .map(|_| FeatureVector {
            values: (0..dim).map(|_| coord(&mut rng, grid)).collect(),
        })
        .collect();
    let ratings = (0..n).map(|_| rng.gen_range(1..=5)).collect();
    NeighborIndex::new(
        (0..n).map(|i| format!("t{i:03}")).collect(),
        features,
        ratings,
    )
    .unwrap()
}

/// Full sort of every stored point by (distance, insertion index).
fn brute_force(
    index: &NeighborIndex,
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Vec<(String, f64)> {
    let mut all: Vec<(f64, usize)> = (0..index.len())
        .filter(|&i| Some(i) != exclude)
        .map(|i| {
            let d2: f64 = index
                .row(i)
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter()
        .take(k)
        .map(|(d2, i)| (index.ids()[i].clone(), d2.sqrt()))
        .collect()
}

#[test]
fn knn_matches_a_brute_force_sort() {
    let mut rng = seeded(42);
    for q in 0..200 {
        let grid = q % 2 == 0;
        let dim = [1, 3, 64][q % 3];
        let index = random_index(q as u64, 40, dim, grid);
        let query: Vec<f64> = if q % 5 == 0 {
            index.row(q % 40).to_vec()
        } else {
            (0..dim).map(|_| coord(&mut rng, grid)).collect()
        };
        let k = rng.gen_range(1..=45);
        let exclude = (q % 7 == 0).then(|| format!("t{:03}", q % 40));
        let got = knn(
            &index,
            &FeatureVector {
                values: query.clone(),
            },
            k,
            exclude.as_deref(),
        )
        .unwrap();
        let want = brute_force(&index, &query, k, exclude.as_ref().map(|_| q % 40));
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0, "query {q}");
            assert!((g.1 - w.1).abs() <= 1e-12);
        }
        let ranking = index.ranking(&query);
        let ids: Vec<&String> = ranking.iter().map(|&i| &index.ids()[i]).collect();
        let full = brute_force(&index, &query, usize::MAX, None);
        assert!(ids.iter().zip(&full).all(|(a, b)| **a == b.0));
    }
}

#[test]
fn regression_normalizations() {
    let index = NeighborIndex::new(
        vec!["a".into(), "b".into(), "c".into()],
        [0.0, 1.0, 2.0]
            .iter()
            .map(|&x| FeatureVector { values: vec![x] })
            .collect(),
        vec![5, 3, 1],
    )
    .unwrap();
    assert_eq!(
        regress_features(&index, &[0.1], 2, Normalization::FixedK).unwrap(),
        4.0
    );
    assert_eq!(
        regress_features(&index, &[0.1], 5, Normalization::Available).unwrap(),
        3.0
    );
    assert_eq!(
        regress_features(&index, &[0.1], 5, Normalization::FixedK).unwrap(),
        9.0 / 5.0
    );
}

fn stdev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[test]
fn smoothing_shrinks_the_spread_on_random_corpora() {
    for seed in 0..100 {
        let index = random_index(1000 + seed, 60, 2 + seed as usize % 5, seed % 3 == 0);
        let k = 5 + seed as usize % 20;
        let smoothed = smooth_labels(&index, k).unwrap();
        let raw: Vec<f64> = index.ratings().iter().map(|&r| r as f64).collect();
        let values: Vec<f64> = smoothed.iter().map(|s| s.value).collect();
        assert!(stdev(&values) <= stdev(&raw), "corpus {seed}, k {k}");
    }
}

#[test]
fn smoothing_with_k1_can_widen_the_spread() {
    // Each 3-rated point sits next to the 1 or the 5, and those two are each
    // other's nearest neighbors, so every smoothed value is an extreme.
    let xs = [0.0, 0.1, -1.0, 1.1];
    let ratings = vec![1, 5, 3, 3];
    let index = NeighborIndex::new(
        (0..4).map(|i| format!("t{i}")).collect(),
        xs.iter()
            .map(|&x| FeatureVector { values: vec![x] })
            .collect(),
        ratings.clone(),
    )
    .unwrap();
    let values: Vec<f64> = smooth_labels(&index, 1)
        .unwrap()
        .iter()
        .map(|s| s.value)
        .collect();
    assert_eq!(values, vec![5.0, 1.0, 1.0, 5.0]);
    let raw: Vec<f64> = ratings.iter().map(|&r| r as f64).collect();
    assert!(stdev(&values) > stdev(&raw));
}

#[test]
fn smoothed_values_are_neighbor_means_and_exclude_self() {
    let index = random_index(7, 80, 4, true);
    for s in smooth_labels(&index, 9).unwrap() {
        assert_eq!(s.neighbor_ids.len(), 9);
        assert!(!s.neighbor_ids.contains(&s.dialog_id));
        let ratings: HashMap<&str, u8> = index
            .ids()
            .iter()
            .map(String::as_str)
            .zip(index.ratings().iter().copied())
            .collect();
        let mean = s
            .neighbor_ids
            .iter()
            .map(|id| ratings[id.as_str()] as f64)
            .sum::<f64>()
            / 9.0;
        assert_eq!(s.value, mean);
        assert!((1.0..=5.0).contains(&s.value));
    }
}

#[test]
fn smoothing_is_permutation_invariant() {
    let index = random_index(11, 50, 3, false);
    let base = smooth_labels(&index, 6).unwrap();
    let mut order: Vec<usize> = (0..50).collect();
    order.reverse();
    let permuted = index.select(&order);
    let again = smooth_labels(&permuted, 6).unwrap();
    let by_id: HashMap<&str, &SmoothedRating> =
        again.iter().map(|s| (s.dialog_id.as_str(), s)).collect();
    for s in &base {
        let t = by_id[s.dialog_id.as_str()];
        assert_eq!(s.value, t.value);
        assert_eq!(s.neighbor_ids, t.neighbor_ids);
    }
}

fn smoothed(values: &[f64]) -> Vec<SmoothedRating> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| SmoothedRating {
            dialog_id: format!("s{i}"),
            value: v,
            neighbor_ids: Vec::new(),
        })
        .collect()
}

#[test]
fn stage2_pairs_are_near_uniform() {
    let values = [1.0, 2.0, 2.0, 3.5, 4.0, 5.0];
    let s = smoothed(&values);
    let mut counts: HashMap<(String, String), usize> = HashMap::new();
    let rounds = 10_000;
    for seed in 0..rounds {
        for p in make_stage2_pairs(&s, 1, seed).unwrap().pairs {
            *counts.entry((p.first_id, p.second_id)).or_default() += 1;
        }
    }
    // 15 unordered pairs, one of them tied.
    assert_eq!(counts.len(), 14);
    let expected = rounds as f64 / 14.0;
    for (pair, &c) in &counts {
        // Binomial sd ≈ 26 here; 5 sd keeps the test stable.
        assert!(
            (c as f64 - expected).abs() < 130.0,
            "{pair:?}: {c} vs {expected}"
        );
    }
}

proptest! {
    #[test]
    fn stage2_pairs_point_up(values in prop::collection::vec(1.0f64..5.0, 2..30), n in 1usize..50, seed: u64) {
        let s = smoothed(&values);
        let out = make_stage2_pairs(&s, n, seed).unwrap();
        let lookup: HashMap<&str, f64> = s.iter().map(|x| (x.dialog_id.as_str(), x.value)).collect();
        let mut seen = std::collections::HashSet::new();
        for p in &out.pairs {
            prop_assert!(lookup[p.first_id.as_str()] > lookup[p.second_id.as_str()]);
            prop_assert!(seen.insert((p.first_id.clone(), p.second_id.clone())));
        }
        prop_assert_eq!(out.pairs.len() + out.shortfall, n);
    }

    #[test]
    fn nearest_is_a_prefix_of_ranking(seed in 0u64..500, k in 1usize..30) {
        let index = random_index(seed, 25, 2, true);
        let q = index.row(seed as usize % 25).to_vec();
        let ranking = index.ranking(&q);
        let near: Vec<usize> = index.nearest(&q, k, None).into_iter().map(|(i, _)| i).collect();
        prop_assert_eq!(&near[..], &ranking[..k.min(25)]);
    }
}
