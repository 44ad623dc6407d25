use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::NeighborIndex;
use crate::rng::seeded;
use crate::valuation::{DevPairFeatures, ShapleyReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub ks: Vec<usize>,
    /// Points removed between evaluations; 0 picks `N / 50`.
    pub step: usize,
    /// Stop once this fraction of the training set is gone.
    pub max_fraction: f64,
    pub seed: u64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            ks: vec![1, 5, 25, 50, 100],
            step: 0,
            max_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesOrder {
    Shapley,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub name: String,
    pub order: SeriesOrder,
    /// `"dev"` or `"test"`.
    pub split: String,
    pub k: usize,
    /// Accuracy after each entry of `RemovalCurve::removed`.
    pub accuracy: Vec<f64>,
}

impl CurveSeries {
    /// Mean accuracy over the removal counts not exceeding `limit`.
    pub fn mean_up_to(&self, removed: &[usize], limit: usize) -> f64 {
        let vals: Vec<f64> = removed
            .iter()
            .zip(&self.accuracy)
            .filter(|(&r, _)| r <= limit)
            .map(|(_, &a)| a)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub removed_count: usize,
    pub series: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalCurve {
    pub n_train: usize,
    pub removed: Vec<usize>,
    pub series: Vec<CurveSeries>,
}

impl RemovalCurve {
    pub fn get(&self, order: SeriesOrder, split: &str, k: usize) -> Option<&CurveSeries> {
        self.series
            .iter()
            .find(|s| s.order == order && s.split == split && s.k == k)
    }

    pub fn points(&self) -> Vec<CurvePoint> {
        self.series
            .iter()
            .flat_map(|s| {
                self.removed
                    .iter()
                    .zip(&s.accuracy)
                    .map(|(&r, &a)| CurvePoint {
                        removed_count: r,
                        series: s.name.clone(),
                        accuracy: a,
                    })
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("removed_count,series,accuracy\n");
        for p in self.points() {
            out.push_str(&format!(
                "{},{},{}\n",
                p.removed_count, p.series, p.accuracy
            ));
        }
        out
    }
}

/// Neighbor order of every dev/test dialog, computed once.
struct Queries<'a> {
    pairs: &'a [DevPairFeatures],
    rankings: Vec<(Vec<usize>, Vec<usize>)>,
}

impl<'a> Queries<'a> {
    fn new(index: &NeighborIndex, pairs: &'a [DevPairFeatures]) -> Self {
        let rankings = pairs
            .par_iter()
            .map(|p| (index.ranking(&p.first), index.ranking(&p.second)))
            .collect();
        Queries { pairs, rankings }
    }

    /// Comparison accuracy of the KNN regressor over points whose removal
    /// rank is at least `removed`.
    fn accuracy(&self, ratings: &[u8], removal_rank: &[usize], removed: usize, k: usize) -> f64 {
        let regress = |ranking: &[usize]| -> f64 {
            let mut sum = 0.0;
            let mut taken = 0;
            for &i in ranking {
                if removal_rank[i] >= removed {
                    sum += ratings[i] as f64;
                    taken += 1;
                    if taken == k {
                        break;
                    }
                }
            }
            if taken == 0 {
                0.0
            } else {
                sum / taken as f64
            }
        };
        let correct: f64 = self
            .pairs
            .par_iter()
            .zip(&self.rankings)
            .map(|(p, (rp, rq))| {
                let (yp, yq) = (regress(rp), regress(rq));
                if yp == yq {
                    0.5
                } else if (yp > yq) == p.first_better {
                    1.0
                } else {
                    0.0
                }
            })
            .sum();
        correct / self.pairs.len() as f64
    }
}

/// KNN comparison accuracy on dev and test pairs as training points are
/// removed lowest-value first, alongside a seeded random-removal control.
pub fn removal_curve(
    index: &NeighborIndex,
    report: &ShapleyReport,
    dev: &[DevPairFeatures],
    test: &[DevPairFeatures],
    config: &CurveConfig,
) -> Result<RemovalCurve> {
    let n = index.len();
    if n == 0 {
        return Err(Error::EmptyIndex);
    }
    if report.ids.as_slice() != index.ids() {
        return Err(Error::Shape(
            "report ids do not match the index rows".into(),
        ));
    }
    if config.ks.is_empty() || config.ks.contains(&0) {
        return Err(Error::Config(
            "curve ks must be non-empty and positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.max_fraction) {
        return Err(Error::InvalidFraction(config.max_fraction));
    }
    let step = if config.step == 0 {
        (n / 50).max(1)
    } else {
        config.step
    };
    let limit = (config.max_fraction * n as f64).floor() as usize;
    let removed: Vec<usize> = (0..)
        .map(|i| i * step)
        .take_while(|&r| r <= limit && r < n)
        .collect();

    let mut random: Vec<usize> = (0..n).collect();
    random.shuffle(&mut seeded(config.seed));
    let orders = [
        (SeriesOrder::Shapley, report.ascending()),
        (SeriesOrder::Random, random),
    ];

    let splits: Vec<(&str, Queries)> = [("dev", dev), ("test", test)]
        .into_iter()
        .filter(|(_, pairs)| !pairs.is_empty())
        .map(|(name, pairs)| (name, Queries::new(index, pairs)))
        .collect();

    let mut series = Vec::new();
    for (order, sequence) in &orders {
        let mut removal_rank = vec![0; n];
        for (rank, &i) in sequence.iter().enumerate() {
            removal_rank[i] = rank;
        }
        for (split, queries) in &splits {
            for &k in &config.ks {
                let accuracy = removed
                    .iter()
                    .map(|&r| queries.accuracy(index.ratings(), &removal_rank, r, k))
                    .collect();
                let tag = match order {
                    SeriesOrder::Shapley => "shapley",
                    SeriesOrder::Random => "random",
                };
                series.push(CurveSeries {
                    name: format!("{tag}_k{k}_{split}"),
                    order: *order,
                    split: split.to_string(),
                    k,
                    accuracy,
                });
            }
        }
    }
    Ok(RemovalCurve {
        n_train: n,
        removed,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::FeatureVector;
    use crate::valuation::shapley_knn;

    fn index(xs: &[f64], ratings: &[u8]) -> NeighborIndex {
        NeighborIndex::new(
            (0..xs.len()).map(|i| format!("t{i}")).collect(),
            xs.iter()
                .map(|&x| FeatureVector { values: vec![x] })
                .collect(),
            ratings.to_vec(),
        )
        .unwrap()
    }

    fn pair(p: f64, q: f64, first_better: bool) -> DevPairFeatures {
        DevPairFeatures {
            first: vec![p],
            second: vec![q],
            first_better,
        }
    }

    fn config() -> CurveConfig {
        CurveConfig {
            ks: vec![1, 3],
            step: 1,
            max_fraction: 0.8,
            seed: 4,
        }
    }

    #[test]
    fn series_agree_before_any_removal() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let ratings = [1, 2, 5, 3, 4, 1, 5, 2, 3, 4];
        let idx = index(&xs, &ratings);
        let dev = vec![pair(0.05, 0.85, false), pair(0.6, 0.2, true)];
        let test = vec![pair(0.3, 0.5, true)];
        let report = shapley_knn(&idx, &dev, 3).unwrap();
        let curve = removal_curve(&idx, &report, &dev, &test, &config()).unwrap();
        assert_eq!(curve.removed, (0..=8).collect::<Vec<_>>());
        for split in ["dev", "test"] {
            for k in [1, 3] {
                let s = curve.get(SeriesOrder::Shapley, split, k).unwrap();
                let r = curve.get(SeriesOrder::Random, split, k).unwrap();
                assert_eq!(s.accuracy[0], r.accuracy[0]);
                assert_eq!(s.accuracy.len(), curve.removed.len());
            }
        }
        assert_eq!(
            curve,
            removal_curve(&idx, &report, &dev, &test, &config()).unwrap()
        );
        let csv = curve.to_csv();
        assert!(csv.starts_with("removed_count,series,accuracy\n0,shapley_k1_dev,"));
        assert_eq!(csv.lines().count(), 1 + 8 * 9);
    }

    #[test]
    fn equal_ratings_stay_at_chance() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let idx = index(&xs, &[3; 8]);
        let dev = vec![pair(0.0, 7.0, true), pair(2.0, 5.0, false)];
        let report = shapley_knn(&idx, &dev, 2).unwrap();
        let curve = removal_curve(&idx, &report, &dev, &[], &config()).unwrap();
        assert!(curve
            .series
            .iter()
            .all(|s| s.accuracy.iter().all(|&a| a == 0.5)));
    }
}
