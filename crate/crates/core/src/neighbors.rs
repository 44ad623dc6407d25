//! Exact nearest-neighbor search in encoder feature space, KNN rating
//! regression, and neighbor-based smoothing of noisy ratings.
//!
//! Distances are Euclidean. Equal distances are ordered by the row's
//! insertion index, so every query has one well-defined neighbor ranking.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, DialogPair, PairSource};
use crate::encoder::{encode, encode_all, squared_distance, FeatureVector, ModelState};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Immutable feature matrix with aligned ids and ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    ids: Vec<String>,
    dim: usize,
    features: Vec<f64>,
    ratings: Vec<u8>,
}

impl NeighborIndex {
    pub fn new(ids: Vec<String>, features: Vec<FeatureVector>, ratings: Vec<u8>) -> Result<Self> {
        if ids.len() != features.len() || ids.len() != ratings.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} feature rows and {} ratings",
                ids.len(),
                features.len(),
                ratings.len()
            )));
        }
        let dim = features.first().map_or(0, |f| f.dim());
        let mut flat = Vec::with_capacity(dim * features.len());
        for (id, f) in ids.iter().zip(&features) {
            if f.dim() != dim {
                return Err(Error::Shape(format!(
                    "row `{id}` has dimension {}",
                    f.dim()
                )));
            }
            if f.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("row `{id}` has non-finite features")));
            }
            flat.extend_from_slice(&f.values);
        }
        Ok(NeighborIndex {
            ids,
            dim,
            features: flat,
            ratings,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn ratings(&self) -> &[u8] {
        &self.ratings
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `keep`, in the given order.
    pub fn select(&self, keep: &[usize]) -> NeighborIndex {
        let mut features = Vec::with_capacity(keep.len() * self.dim);
        for &i in keep {
            features.extend_from_slice(self.row(i));
        }
        NeighborIndex {
            ids: keep.iter().map(|&i| self.ids[i].clone()).collect(),
            dim: self.dim,
            features,
            ratings: keep.iter().map(|&i| self.ratings[i]).collect(),
        }
    }

    /// Squared distances from `query` to every row.
    pub fn squared_distances(&self, query: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| squared_distance(self.row(i), query))
            .collect()
    }

    /// All rows ordered by (distance, insertion index).
    pub fn ranking(&self, query: &[f64]) -> Vec<usize> {
        let d = self.squared_distances(query);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by(|&a, &b| by_distance_then_index(&d, a, b));
        order
    }

    /// The `k` closest rows with their squared distances, skipping `exclude`.
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let d = self.squared_distances(query);
        let mut cand: Vec<usize> = (0..self.len()).filter(|&i| Some(i) != exclude).collect();
        let k = k.min(cand.len());
        if k == 0 {
            return Vec::new();
        }
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, |&a, &b| by_distance_then_index(&d, a, b));
            cand.truncate(k);
        }
        cand.sort_unstable_by(|&a, &b| by_distance_then_index(&d, a, b));
        cand.into_iter().map(|i| (i, d[i])).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

fn by_distance_then_index(d: &[f64], a: usize, b: usize) -> Ordering {
    d[a].total_cmp(&d[b]).then(a.cmp(&b))
}

/// Encodes every training dialog once, in input order.
pub fn build_index(train: &[Dialog], state: &ModelState) -> Result<NeighborIndex> {
    let ratings = train
        .iter()
        .map(|d| d.rating.ok_or_else(|| Error::MissingRating(d.id.clone())))
        .collect::<Result<Vec<u8>>>()?;
    let features = encode_all(train, state)?;
    NeighborIndex::new(
        train.iter().map(|d| d.id.clone()).collect(),
        features,
        ratings,
    )
}

/// Up to `k` `(id, distance)` entries, nearest first.
pub fn knn(
    index: &NeighborIndex,
    query: &FeatureVector,
    k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<(String, f64)>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if query.dim() != index.dim() {
        return Err(Error::Shape(format!(
            "query has dimension {}, index has {}",
            query.dim(),
            index.dim()
        )));
    }
    let exclude = exclude_id.and_then(|id| index.position(id));
    Ok(index
        .nearest(&query.values, k, exclude)
        .into_iter()
        .map(|(i, d2)| (index.ids[i].clone(), d2.sqrt()))
        .collect())
}

/// Denominator of the KNN rating average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Always divide by `k`, even when fewer than `k` neighbors exist.
    /// This is the form the closed-form Shapley recursion assumes.
    FixedK,
    /// Divide by the number of neighbors actually used.
    Available,
}

/// KNN rating estimate for a point in feature space.
pub fn regress_features(
    index: &NeighborIndex,
    query: &[f64],
    k: usize,
    normalization: Normalization,
) -> Result<f64> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let hits = index.nearest(query, k, None);
    let sum: f64 = hits.iter().map(|&(i, _)| index.ratings[i] as f64).sum();
    let denom = match normalization {
        Normalization::FixedK => k,
        Normalization::Available => hits.len(),
    };
    Ok(sum / denom as f64)
}

pub fn knn_regress(
    index: &NeighborIndex,
    query: &Dialog,
    state: &ModelState,
    k: usize,
    normalization: Normalization,
) -> Result<f64> {
    let phi = encode(query, state)?;
    regress_features(index, &phi.values, k, normalization)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedRating {
    pub dialog_id: String,
    pub value: f64,
    pub neighbor_ids: Vec<String>,
}

/// Replaces each rating by the mean rating of its `k` nearest other dialogs.
pub fn smooth_labels(index: &NeighborIndex, k: usize) -> Result<Vec<SmoothedRating>> {
    if index.len() < 2 {
        return Err(Error::Config("smoothing needs at least two dialogs".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok((0..index.len())
        .into_par_iter()
        .map(|i| {
            let hits = index.nearest(index.row(i), k, Some(i));
            let sum: f64 = hits.iter().map(|&(j, _)| index.ratings[j] as f64).sum();
            SmoothedRating {
                dialog_id: index.ids[i].clone(),
                value: sum / hits.len() as f64,
                neighbor_ids: hits.iter().map(|&(j, _)| index.ids[j].clone()).collect(),
            }
        })
        .collect())
}

/// Pairs sampled from smoothed ratings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stage2Pairs {
    pub pairs: Vec<DialogPair>,
    /// How many requested pairs could not be produced because too few
    /// non-tied pairs exist.
    pub shortfall: usize,
}

/// Samples up to `n_pairs` distinct unordered pairs with unequal smoothed
/// ratings, uniformly without replacement, each oriented higher-first.
pub fn make_stage2_pairs(
    smoothed: &[SmoothedRating],
    n_pairs: usize,
    seed: u64,
) -> Result<Stage2Pairs> {
    let n = smoothed.len();
    if n < 2 {
        return Err(Error::Config("need at least two smoothed ratings".into()));
    }
    let mut rng = seeded(seed);
    let total = n * (n - 1) / 2;
    let chosen: Vec<(usize, usize)> = if n_pairs.saturating_mul(4) >= total || total <= 200_000 {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| smoothed[i].value != smoothed[j].value)
            .collect();
        let take = n_pairs.min(all.len());
        let (head, _) = all.partial_shuffle(&mut rng, take);
        head.to_vec()
    } else {
        // Sparse regime: rejection sampling over the full pair space.
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(n_pairs);
        let mut attempts = 0usize;
        while out.len() < n_pairs && attempts < n_pairs.saturating_mul(200) {
            attempts += 1;
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j || smoothed[i].value == smoothed[j].value {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                out.push(key);
            }
        }
        out
    };

    let pairs: Vec<DialogPair> = chosen
        .into_iter()
        .map(|(i, j)| {
            let (hi, lo) = if smoothed[i].value > smoothed[j].value {
                (i, j)
            } else {
                (j, i)
            };
            DialogPair::new(
                smoothed[hi].dialog_id.clone(),
                smoothed[lo].dialog_id.clone(),
                true,
                PairSource::SmoothedDerived,
            )
        })
        .collect();
    Ok(Stage2Pairs {
        shortfall: n_pairs - pairs.len(),
        pairs,
    })
}
