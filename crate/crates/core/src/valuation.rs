//! Data Shapley values of training dialogs under a KNN comparison utility.
//!
//! For one expert pair `(p, q, z)` and a coalition `S` of training points,
//! a KNN regressor rates both dialogs from the ratings of their nearest
//! members of `S`:
//!
//! ```text
//! ŷ_p(S) = (1/K) Σ_{k ≤ min(K, |S|)} y_{α_k(p)}
//! v(S)   = ŷ_p(S) − ŷ_q(S)   if z = 1
//!          ŷ_q(S) − ŷ_p(S)   if z = 0
//! v(∅)   = 0
//! ```
//!
//! `v` is linear in `ŷ_p` and `ŷ_q`, so the Shapley value splits into one
//! term per dev dialog and each term follows the closed-form KNN recursion
//! over the training points sorted by distance to that dialog:
//!
//! ```text
//! s(α_N) = y(α_N) · min(K, N) / (N K)
//! s(α_m) = s(α_{m+1}) + (y(α_m) − y(α_{m+1})) / K · min(K, m) / m
//! ```
//!
//! With several dev pairs the utility is their mean, and so are the values.
//! Distance ties are broken by ascending training index in every routine,
//! so the recursion, the utility and the enumeration oracle all see the same
//! neighbor order.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogLookup, DialogPair};
use crate::encoder::{encode_all, squared_distance, ModelState};
use crate::error::{Error, Result};
use crate::neighbors::NeighborIndex;
use crate::rng::seeded;

/// Largest training set [`shapley_exact`] will enumerate.
pub const EXACT_MAX_POINTS: usize = 12;

/// Feature-space coordinates of one expert-labelled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DevPairFeatures {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub first_better: bool,
}

pub fn encode_dev_pairs(
    pairs: &[DialogPair],
    lookup: &DialogLookup<'_>,
    state: &ModelState,
) -> Result<Vec<DevPairFeatures>> {
    let mut dialogs = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        dialogs.push(lookup.get(&p.first_id)?);
        dialogs.push(lookup.get(&p.second_id)?);
    }
    let features = encode_all(dialogs, state)?;
    Ok(pairs
        .iter()
        .zip(features.chunks_exact(2))
        .map(|(p, f)| DevPairFeatures {
            first: f[0].values.clone(),
            second: f[1].values.clone(),
            first_better: p.label,
        })
        .collect())
}

/// Per-dev-pair Shapley terms of the two single-dialog games `ŷ_p` and `ŷ_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTerms {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub first_better: bool,
}

impl PairTerms {
    /// Value of each training point for this pair's utility.
    pub fn combined(&self) -> Vec<f64> {
        self.first
            .iter()
            .zip(&self.second)
            .map(|(p, q)| if self.first_better { p - q } else { q - p })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub ids: Vec<String>,
    /// Mean Shapley value over dev pairs, aligned with `ids`.
    pub values: Vec<f64>,
    /// Per-dev-pair decomposition.
    pub terms: Vec<PairTerms>,
    /// Standard error per point, for sampling estimators.
    pub std_errors: Option<Vec<f64>>,
    pub n_dev_pairs: usize,
    pub k: usize,
}

impl ShapleyReport {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Indices ordered by ascending value, ties by ascending id.
    pub fn ascending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.values[a]
                .total_cmp(&self.values[b])
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        order
    }

    /// `{"dialog_id", "value"}` records sorted ascending.
    pub fn records(&self) -> Vec<ValueRecord> {
        self.ascending()
            .into_iter()
            .map(|i| ValueRecord {
                dialog_id: self.ids[i].clone(),
                value: self.values[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRecord {
    pub dialog_id: String,
    pub value: f64,
}

fn validate_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Config("k must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn check_dims(index: &NeighborIndex, dev: &[DevPairFeatures]) -> Result<()> {
    for d in dev {
        if d.first.len() != index.dim() || d.second.len() != index.dim() {
            return Err(Error::Shape(format!(
                "dev features have dimension {}/{}, index has {}",
                d.first.len(),
                d.second.len(),
                index.dim()
            )));
        }
    }
    Ok(())
}

/// `ŷ(S)` with the fixed `1/K` normalisation; 0 for an empty subset.
fn subset_regression(index: &NeighborIndex, subset: &[usize], query: &[f64], k: usize) -> f64 {
    let mut members: Vec<(f64, usize)> = subset
        .iter()
        .map(|&i| (squared_distance(index.row(i), query), i))
        .collect();
    members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let take = k.min(members.len());
    members[..take]
        .iter()
        .map(|&(_, i)| index.ratings()[i] as f64)
        .sum::<f64>()
        / k as f64
}

/// Signed KNN rating gap of one dev pair using only the rows in `subset`.
pub fn utility(index: &NeighborIndex, subset: &[usize], dev: &DevPairFeatures, k: usize) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let p = subset_regression(index, subset, &dev.first, k);
    let q = subset_regression(index, subset, &dev.second, k);
    if dev.first_better {
        p - q
    } else {
        q - p
    }
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley values of a set function over `n` players, by enumerating all
/// `2^n` coalitions.
fn enumerate_shapley(n: usize, value: impl Fn(&[usize]) -> f64) -> Vec<f64> {
    let coalitions = 1usize << n;
    let mut v = vec![0.0; coalitions];
    let mut members = Vec::with_capacity(n);
    for (mask, slot) in v.iter_mut().enumerate() {
        members.clear();
        members.extend((0..n).filter(|&i| mask >> i & 1 == 1));
        *slot = value(&members);
    }
    let weights: Vec<f64> = (0..n)
        .map(|s| 1.0 / (n as f64 * binomial(n - 1, s)))
        .collect();
    (0..n)
        .map(|i| {
            let bit = 1usize << i;
            (0..coalitions)
                .filter(|mask| mask & bit == 0)
                .map(|mask| weights[mask.count_ones() as usize] * (v[mask | bit] - v[mask]))
                .sum()
        })
        .collect()
}

/// Brute-force Shapley values from the definition (at most 12 points).
pub fn shapley_exact(
    index: &NeighborIndex,
    dev: &[DevPairFeatures],
    k: usize,
) -> Result<ShapleyReport> {
    validate_k(k)?;
    check_dims(index, dev)?;
    let n = index.len();
    if n > EXACT_MAX_POINTS {
        return Err(Error::TooManyPoints {
            n,
            max: EXACT_MAX_POINTS,
        });
    }
    let terms: Vec<PairTerms> = dev
        .iter()
        .map(|d| PairTerms {
            first: enumerate_shapley(n, |s| {
                if s.is_empty() {
                    0.0
                } else {
                    subset_regression(index, s, &d.first, k)
                }
            }),
            second: enumerate_shapley(n, |s| {
                if s.is_empty() {
                    0.0
                } else {
                    subset_regression(index, s, &d.second, k)
                }
            }),
            first_better: d.first_better,
        })
        .collect();
    let per_pair: Vec<Vec<f64>> = dev
        .iter()
        .map(|d| enumerate_shapley(n, |s| utility(index, s, d, k)))
        .collect();
    Ok(report(index, mean_rows(n, &per_pair), terms, None, k))
}

/// Closed-form recursion for one dev dialog: Shapley values of `ŷ(S)`.
fn knn_recursion(index: &NeighborIndex, query: &[f64], k: usize) -> Vec<f64> {
    let n = index.len();
    let order = index.ranking(query);
    let y = |m: usize| index.ratings()[order[m]] as f64;
    let kf = k as f64;
    let mut values = vec![0.0; n];
    // The farthest point adds y/K to every coalition smaller than K, which is
    // y/N once N ≥ K.
    let mut current = y(n - 1) * k.min(n) as f64 / (n as f64 * kf);
    values[order[n - 1]] = current;
    // `m` is the 1-based rank of the point being filled in.
    for m in (1..n).rev() {
        let mf = m as f64;
        current += (y(m - 1) - y(m)) / kf * (k.min(m) as f64) / mf;
        values[order[m - 1]] = current;
    }
    values
}

/// `O(N log N)` Shapley values per dev pair, averaged over pairs.
pub fn shapley_knn(
    index: &NeighborIndex,
    dev: &[DevPairFeatures],
    k: usize,
) -> Result<ShapleyReport> {
    validate_k(k)?;
    check_dims(index, dev)?;
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let terms: Vec<PairTerms> = dev
        .par_iter()
        .map(|d| PairTerms {
            first: knn_recursion(index, &d.first, k),
            second: knn_recursion(index, &d.second, k),
            first_better: d.first_better,
        })
        .collect();
    let per_pair: Vec<Vec<f64>> = terms.iter().map(PairTerms::combined).collect();
    Ok(report(
        index,
        mean_rows(index.len(), &per_pair),
        terms,
        None,
        k,
    ))
}

fn mean_rows(n: usize, rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if rows.is_empty() {
        return out;
    }
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let m = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= m);
    out
}

fn report(
    index: &NeighborIndex,
    values: Vec<f64>,
    terms: Vec<PairTerms>,
    std_errors: Option<Vec<f64>>,
    k: usize,
) -> ShapleyReport {
    ShapleyReport {
        ids: index.ids().to_vec(),
        values,
        n_dev_pairs: terms.len(),
        terms,
        std_errors,
        k,
    }
}

/// Running top-K sum for one dev dialog as points join a coalition.
struct PrefixKnn<'a> {
    distances: &'a [f64],
    members: Vec<usize>,
}

impl<'a> PrefixKnn<'a> {
    fn insert(&mut self, i: usize) {
        let d = self.distances;
        let pos = self
            .members
            .partition_point(|&j| d[j].total_cmp(&d[i]).then(j.cmp(&i)).is_lt());
        self.members.insert(pos, i);
    }

    fn value(&self, ratings: &[u8], k: usize) -> f64 {
        self.members
            .iter()
            .take(k)
            .map(|&i| ratings[i] as f64)
            .sum::<f64>()
            / k as f64
    }
}

/// Permutation-sampling estimate of the same values, with per-point
/// standard errors.
pub fn shapley_montecarlo(
    index: &NeighborIndex,
    dev: &[DevPairFeatures],
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<ShapleyReport> {
    validate_k(k)?;
    check_dims(index, dev)?;
    if samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    let n = index.len();
    let ratings = index.ratings();
    let distances: Vec<(Vec<f64>, Vec<f64>)> = dev
        .iter()
        .map(|d| {
            (
                index.squared_distances(&d.first),
                index.squared_distances(&d.second),
            )
        })
        .collect();

    let mut rng = seeded(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut marginal = vec![0.0; n];
    for t in 1..=samples {
        perm.shuffle(&mut rng);
        marginal.iter_mut().for_each(|m| *m = 0.0);
        for (d, (dp, dq)) in dev.iter().zip(&distances) {
            let mut p = PrefixKnn {
                distances: dp,
                members: Vec::with_capacity(n),
            };
            let mut q = PrefixKnn {
                distances: dq,
                members: Vec::with_capacity(n),
            };
            let mut prev = 0.0;
            for &i in &perm {
                p.insert(i);
                q.insert(i);
                let gap = p.value(ratings, k) - q.value(ratings, k);
                let v = if d.first_better { gap } else { -gap };
                marginal[i] += v - prev;
                prev = v;
            }
        }
        let m = dev.len().max(1) as f64;
        for i in 0..n {
            let x = marginal[i] / m;
            let delta = x - mean[i];
            mean[i] += delta / t as f64;
            m2[i] += delta * (x - mean[i]);
        }
    }
    let std_errors = m2
        .iter()
        .map(|&s| {
            if samples > 1 {
                (s / (samples - 1) as f64 / samples as f64).sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let terms = Vec::new();
    let mut r = report(index, mean, terms, Some(std_errors), k);
    r.n_dev_pairs = dev.len();
    Ok(r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalRule {
    /// Remove every point with a negative value.
    #[default]
    NegativeValues,
    /// Remove the lowest-valued `floor(f · N)` points.
    BottomFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalPlan {
    /// All ids, ascending by value (ties by id).
    pub ordered_ids: Vec<String>,
    pub rule: RemovalRule,
    /// Ids to drop, in the same order.
    pub removed: Vec<String>,
}

impl RemovalPlan {
    pub fn kept<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
        let removed: std::collections::HashSet<&str> =
            self.removed.iter().map(String::as_str).collect();
        ids.into_iter().filter(|id| !removed.contains(id)).collect()
    }
}

pub fn plan_removal(report: &ShapleyReport, rule: RemovalRule) -> Result<RemovalPlan> {
    if report.is_empty() {
        return Err(Error::Config(
            "cannot plan removal from an empty report".into(),
        ));
    }
    let order = report.ascending();
    let n_remove = match rule {
        RemovalRule::NegativeValues => order
            .iter()
            .take_while(|&&i| report.values[i] < 0.0)
            .count(),
        RemovalRule::BottomFraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidFraction(f));
            }
            (f * report.len() as f64).floor() as usize
        }
    };
    let ordered_ids: Vec<String> = order.iter().map(|&i| report.ids[i].clone()).collect();
    Ok(RemovalPlan {
        removed: ordered_ids[..n_remove].to_vec(),
        ordered_ids,
        rule,
    })
}

/// Map from id to value, for joins against other per-dialog data.
pub fn values_by_id(report: &ShapleyReport) -> HashMap<&str, f64> {
    report
        .ids
        .iter()
        .map(String::as_str)
        .zip(report.values.iter().copied())
        .collect()
}
