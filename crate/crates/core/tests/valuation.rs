use rand::Rng;
use rank_denoise::encoder::FeatureVector;
use rank_denoise::neighbors::NeighborIndex;
use rank_denoise::rng::seeded;
use rank_denoise::valuation::{
    plan_removal, shapley_exact, shapley_knn, shapley_montecarlo, utility, DevPairFeatures,
    RemovalRule, ShapleyReport,
};

struct Instance {
    index: NeighborIndex,
    dev: Vec<DevPairFeatures>,
    k: usize,
}

fn point<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    // A coarse grid makes distance ties common.
    (0..dim)
        .map(|_| rng.gen_range(0..5) as f64 * 0.25)
        .collect()
}

fn instance(seed: u64, n: usize, dim: usize, k: usize, n_dev: usize) -> Instance {
    let mut rng = seeded(seed);
    let features: Vec<FeatureVector> = (0..n)
        .map(|_| FeatureVector {
            values: point(&mut rng, dim),
        })
        .collect();
    let ratings: Vec<u8> = (0..n).map(|_| rng.gen_range(1..=5)).collect();
    let ids = (0..n).map(|i| format!("t{i}")).collect();
    let dev = (0..n_dev)
        .map(|_| DevPairFeatures {
            first: point(&mut rng, dim),
            second: point(&mut rng, dim),
            first_better: rng.gen(),
        })
        .collect();
    Instance {
        index: NeighborIndex::new(ids, features, ratings).unwrap(),
        dev,
        k,
    }
}

fn instances() -> Vec<Instance> {
    let mut out = Vec::new();
    let mut seed = 0;
    for dim in [1, 64] {
        for n in 2..=8 {
            for k in 1..=3 {
                for _ in 0..2 {
                    let n_dev = 1 + (seed as usize % 3);
                    out.push(instance(seed, n, dim, k, n_dev));
                    seed += 1;
                }
            }
        }
    }
    out
}

fn grand_utility(inst: &Instance) -> f64 {
    let all: Vec<usize> = (0..inst.index.len()).collect();
    inst.dev
        .iter()
        .map(|d| utility(&inst.index, &all, d, inst.k))
        .sum::<f64>()
        / inst.dev.len() as f64
}

#[test]
fn recursion_matches_enumeration() {
    let all = instances();
    assert!(all.len() >= 50);
    for (i, inst) in all.iter().enumerate() {
        let exact = shapley_exact(&inst.index, &inst.dev, inst.k).unwrap();
        let fast = shapley_knn(&inst.index, &inst.dev, inst.k).unwrap();
        for (a, b) in exact.values.iter().zip(&fast.values) {
            assert!((a - b).abs() <= 1e-9, "instance {i}: {a} vs {b}");
        }
        for (te, tf) in exact.terms.iter().zip(&fast.terms) {
            for (a, b) in te
                .first
                .iter()
                .zip(&tf.first)
                .chain(te.second.iter().zip(&tf.second))
            {
                assert!((a - b).abs() <= 1e-9, "instance {i}: component {a} vs {b}");
            }
        }
    }
}

#[test]
fn values_sum_to_the_grand_coalition_utility() {
    for inst in instances() {
        let all: Vec<usize> = (0..inst.index.len()).collect();
        let fast = shapley_knn(&inst.index, &inst.dev, inst.k).unwrap();
        let exact = shapley_exact(&inst.index, &inst.dev, inst.k).unwrap();
        let v = grand_utility(&inst);
        assert!((fast.total() - v).abs() <= 1e-9);
        assert!((exact.total() - v).abs() <= 1e-9);
        for (terms, d) in fast.terms.iter().zip(&inst.dev) {
            let per_pair: f64 = terms.combined().iter().sum();
            let u = utility(&inst.index, &all, d, inst.k);
            assert!(
                (per_pair - u).abs() <= 1e-9,
                "{per_pair} vs {u}, n {} k {} terms {:?}",
                inst.index.len(),
                inst.k,
                terms
            );
        }
    }
}

#[test]
fn multi_pair_values_are_the_mean_of_single_pair_values() {
    for inst in instances().into_iter().filter(|i| i.dev.len() > 1) {
        let joint = shapley_knn(&inst.index, &inst.dev, inst.k).unwrap();
        let singles: Vec<ShapleyReport> = inst
            .dev
            .iter()
            .map(|d| shapley_knn(&inst.index, std::slice::from_ref(d), inst.k).unwrap())
            .collect();
        for (p, &v) in joint.values.iter().enumerate() {
            let mut sum = 0.0;
            for s in &singles {
                sum += s.values[p];
            }
            assert_eq!(v, sum / singles.len() as f64);
        }
    }
}

#[test]
fn duplicated_points_share_value() {
    // Continuous coordinates: the copy is the only point tied with the
    // original, so index tie-breaking cannot tell the two apart.
    for seed in 0..20 {
        let mut rng = seeded(500 + seed);
        let mut features: Vec<FeatureVector> = (0..5)
            .map(|_| FeatureVector {
                values: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            })
            .collect();
        let mut ratings: Vec<u8> = (0..5).map(|_| rng.gen_range(1..=5)).collect();
        features.push(features[1].clone());
        ratings.push(ratings[1]);
        let dev: Vec<DevPairFeatures> = (0..2)
            .map(|_| DevPairFeatures {
                first: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                second: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                first_better: rng.gen(),
            })
            .collect();
        let dup = Instance {
            index: NeighborIndex::new((0..6).map(|i| format!("t{i}")).collect(), features, ratings)
                .unwrap(),
            dev,
            k: 1 + seed as usize % 3,
        };
        let exact = shapley_exact(&dup.index, &dup.dev, dup.k).unwrap();
        let fast = shapley_knn(&dup.index, &dup.dev, dup.k).unwrap();
        assert!(
            (exact.values[1] - exact.values[5]).abs() <= 1e-12,
            "seed {seed}"
        );
        assert!(
            (fast.values[1] - fast.values[5]).abs() <= 1e-12,
            "seed {seed}"
        );
        assert!((exact.total() - grand_utility(&dup)).abs() <= 1e-9);
    }
}

#[test]
fn montecarlo_converges_to_the_exact_values() {
    for seed in 0..5 {
        let inst = instance(500 + seed, 6, 2, 2, 2);
        let exact = shapley_exact(&inst.index, &inst.dev, inst.k).unwrap();
        let mc = shapley_montecarlo(&inst.index, &inst.dev, inst.k, 4000, seed).unwrap();
        let se = mc.std_errors.as_ref().unwrap();
        for i in 0..6 {
            let tolerance = 3.0 * se[i] + 1e-12;
            assert!(
                (mc.values[i] - exact.values[i]).abs() <= tolerance,
                "seed {seed} point {i}: {} vs {} (se {})",
                mc.values[i],
                exact.values[i],
                se[i]
            );
        }
    }
}

#[test]
fn removal_order_matches_an_independent_sort() {
    let inst = instance(9, 400, 3, 5, 20);
    let report = shapley_knn(&inst.index, &inst.dev, inst.k).unwrap();
    let plan = plan_removal(&report, RemovalRule::BottomFraction(0.25)).unwrap();
    let mut expected: Vec<(f64, &str)> = report
        .values
        .iter()
        .copied()
        .zip(report.ids.iter().map(String::as_str))
        .collect();
    expected.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
    let expected: Vec<&str> = expected.into_iter().map(|(_, id)| id).collect();
    assert_eq!(plan.ordered_ids, expected);
    assert_eq!(plan.removed.len(), 100);
    assert_eq!(plan.removed[..], plan.ordered_ids[..100]);

    let negative = plan_removal(&report, RemovalRule::NegativeValues).unwrap();
    let expected_negative = report.values.iter().filter(|&&v| v < 0.0).count();
    assert_eq!(negative.removed.len(), expected_negative);
}
