//! Dialog encoder φ and the linear scoring head f.
//!
//! The encoder hashes role-tagged token n-grams into a sparse unit vector
//! `x`, then applies a two-layer network:
//!
//! ```text
//! h = relu(W1 · x + b1)        hidden_dim
//! φ = W2 · h + b2              feature_dim
//! o = w_f · φ + b_f            scalar score
//! ```
//!
//! All parameters live in one flat buffer ([`Params`]) so optimizers,
//! gradient clipping and finite-difference checks can treat them uniformly.
//! Gradients are exact; the ReLU subgradient at 0 is taken as 0.

mod checkpoint;
mod features;
mod network;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dialog;
use crate::error::{Error, Result};
use crate::rng::seeded;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use features::{fnv1a64, hash_ngrams, role_tagged_tokens, SparseVec};
pub use network::{Forward, Layout, Params};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hash_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub ngram_orders: BTreeSet<usize>,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hash_dim: 4096,
            hidden_dim: 128,
            feature_dim: 64,
            ngram_orders: BTreeSet::from([1, 2]),
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_dim == 0 || self.hidden_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "encoder dimensions must be at least 1".into(),
            ));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config(
                "ngram_orders must be a non-empty set of positive integers".into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.hash_dim, self.hidden_dim, self.feature_dim)
    }

    fn orders(&self) -> Vec<usize> {
        self.ngram_orders.iter().copied().collect()
    }
}

/// φ(x): the dialog's position in feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        squared_distance(&self.values, &other.values)
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Encoder + head parameters, Adam moments and the optimizer step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: EncoderConfig,
    pub params: Params,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl ModelState {
    /// Checks that every buffer matches the configured layout and that all
    /// parameters are finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = self.config.layout();
        if self.params.layout != layout || self.params.data.len() != layout.len() {
            return Err(Error::Shape(format!(
                "parameter buffer has {} values, layout needs {}",
                self.params.data.len(),
                layout.len()
            )));
        }
        for (name, buf) in [
            ("first moment", &self.first_moment),
            ("second moment", &self.second_moment),
        ] {
            if buf.len() != layout.len() {
                return Err(Error::Shape(format!(
                    "{name} has {} values, layout needs {}",
                    buf.len(),
                    layout.len()
                )));
            }
        }
        if let Some(i) = self.params.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("parameter {i} is not finite")));
        }
        Ok(())
    }

    pub fn featurize(&self, dialog: &Dialog) -> SparseVec {
        featurize_raw(dialog, &self.config)
    }

    pub fn forward(&self, dialog: &Dialog) -> Forward {
        self.params.forward(self.featurize(dialog))
    }
}

/// Hashed, L2-normalised n-gram vector of length `hash_dim`.
pub fn featurize_raw(dialog: &Dialog, config: &EncoderConfig) -> SparseVec {
    hash_ngrams(dialog, config.hash_dim, &config.orders())
}

/// Draws weights uniformly from `±sqrt(6 / (fan_in + fan_out))` per layer;
/// biases start at zero.
pub fn init_state(config: &EncoderConfig) -> Result<ModelState> {
    config.validate()?;
    let layout = config.layout();
    let mut rng = seeded(config.init_seed);
    let params = Params::glorot_uniform(layout, &mut rng);
    Ok(ModelState {
        config: config.clone(),
        first_moment: vec![0.0; layout.len()],
        second_moment: vec![0.0; layout.len()],
        params,
        step: 0,
    })
}

fn check_forward_shape(state: &ModelState) -> Result<()> {
    let layout = state.config.layout();
    if state.params.layout != layout || state.params.data.len() != layout.len() {
        return Err(Error::Shape(format!(
            "state parameters do not match encoder config ({} vs {} values)",
            state.params.data.len(),
            layout.len()
        )));
    }
    Ok(())
}

pub fn encode(dialog: &Dialog, state: &ModelState) -> Result<FeatureVector> {
    check_forward_shape(state)?;
    Ok(FeatureVector {
        values: state.forward(dialog).features,
    })
}

/// `o = f(φ(x))`.
pub fn score(dialog: &Dialog, state: &ModelState) -> Result<f64> {
    check_forward_shape(state)?;
    Ok(state.forward(dialog).score)
}

/// Encodes dialogs in parallel; output order follows input order.
pub fn encode_all<'a, I>(dialogs: I, state: &ModelState) -> Result<Vec<FeatureVector>>
where
    I: IntoParallelIterator<Item = &'a Dialog>,
    I::Iter: IndexedParallelIterator,
{
    check_forward_shape(state)?;
    Ok(dialogs
        .into_par_iter()
        .map(|d| FeatureVector {
            values: state.forward(d).features,
        })
        .collect())
}

pub fn score_all<'a, I>(dialogs: I, state: &ModelState) -> Result<Vec<f64>>
where
    I: IntoParallelIterator<Item = &'a Dialog>,
    I::Iter: IndexedParallelIterator,
{
    check_forward_shape(state)?;
    Ok(dialogs
        .into_par_iter()
        .map(|d| state.forward(d).score)
        .collect())
}
