use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{apply_update, batch_gradient, clip_norm, OptimizerKind};
use crate::corpus::{Dialog, DialogLookup, DialogPair};
use crate::encoder::ModelState;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Dialogs per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Maximum gradient L2 norm; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0 && self.clip_norm >= 0.0) {
            return Err(Error::Config(
                "epsilon must be positive and clip_norm non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// What a training stage learns from.
#[derive(Debug, Clone)]
pub enum StageData<'a> {
    /// Oriented `(better, worse)` dialog pairs; batches are chunks of pairs.
    Pairs(Vec<(&'a Dialog, &'a Dialog)>),
    /// Dialogs with a real-valued grade; within each batch every pair with
    /// distinct grades is used, higher grade first. Equal grades are skipped.
    Graded(Vec<(&'a Dialog, f64)>),
}

impl<'a> StageData<'a> {
    pub fn from_pairs(pairs: &[DialogPair], lookup: &DialogLookup<'a>) -> Result<Self> {
        let resolved = pairs
            .iter()
            .map(|p| {
                let (better, worse) = p.oriented();
                Ok((lookup.get(better)?, lookup.get(worse)?))
            })
            .collect::<Result<_>>()?;
        Ok(StageData::Pairs(resolved))
    }

    /// Grades each dialog by its self-reported rating.
    pub fn from_ratings(dialogs: impl IntoIterator<Item = &'a Dialog>) -> Result<Self> {
        let graded = dialogs
            .into_iter()
            .map(|d| {
                let r = d.rating.ok_or_else(|| Error::MissingRating(d.id.clone()))?;
                Ok((d, r as f64))
            })
            .collect::<Result<_>>()?;
        Ok(StageData::Graded(graded))
    }

    pub fn len(&self) -> usize {
        match self {
            StageData::Pairs(p) => p.len(),
            StageData::Graded(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: String,
    pub epoch: usize,
    pub batch: usize,
    /// Mean pairwise loss over the batch.
    pub loss: f64,
    pub pair_accuracy: f64,
}

struct Batch<'a> {
    dialogs: Vec<&'a Dialog>,
    pairs: Vec<(usize, usize)>,
}

fn pair_batches<'a>(
    pairs: &[(&'a Dialog, &'a Dialog)],
    order: &[usize],
    pairs_per_batch: usize,
) -> Vec<Batch<'a>> {
    order
        .chunks(pairs_per_batch)
        .map(|chunk| {
            let mut slot: HashMap<*const Dialog, usize> = HashMap::new();
            let mut dialogs = Vec::new();
            let mut index_of = |d: &'a Dialog| {
                *slot.entry(d as *const Dialog).or_insert_with(|| {
                    dialogs.push(d);
                    dialogs.len() - 1
                })
            };
            let idx: Vec<(usize, usize)> = chunk
                .iter()
                .map(|&k| {
                    let (b, w) = pairs[k];
                    (index_of(b), index_of(w))
                })
                .collect();
            Batch {
                dialogs,
                pairs: idx,
            }
        })
        .collect()
}

fn graded_batches<'a>(
    graded: &[(&'a Dialog, f64)],
    order: &[usize],
    size: usize,
) -> Vec<Batch<'a>> {
    order
        .chunks(size)
        .filter(|chunk| chunk.len() >= 2)
        .map(|chunk| {
            let dialogs: Vec<&Dialog> = chunk.iter().map(|&k| graded[k].0).collect();
            let grades: Vec<f64> = chunk.iter().map(|&k| graded[k].1).collect();
            let mut pairs = Vec::new();
            for i in 0..grades.len() {
                for j in (i + 1)..grades.len() {
                    if grades[i] > grades[j] {
                        pairs.push((i, j));
                    } else if grades[j] > grades[i] {
                        pairs.push((j, i));
                    }
                }
            }
            Batch { dialogs, pairs }
        })
        .collect()
}

/// Mini-batch training of the pairwise model; continues from `state`.
///
/// Each step minimises the mean pairwise loss of one batch, with the gradient
/// computed through λ-weights and clipped to `clip_norm`. Batch order is
/// reshuffled every epoch from `config.seed`.
pub fn train_stage(
    data: &StageData<'_>,
    mut state: ModelState,
    config: &TrainConfig,
    stage: &str,
) -> Result<(ModelState, Vec<LogRecord>)> {
    config.validate()?;
    state.validate()?;
    if data.is_empty() {
        return Err(Error::Config(format!("{stage}: no training data")));
    }
    let mut rng = seeded(config.seed);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let batches = match data {
            StageData::Pairs(pairs) => pair_batches(pairs, &order, (config.batch_size / 2).max(1)),
            StageData::Graded(graded) => graded_batches(graded, &order, config.batch_size),
        };
        for (b, batch) in batches.iter().enumerate() {
            if batch.pairs.is_empty() {
                continue;
            }
            let mut g = batch_gradient(&batch.dialogs, &batch.pairs, &state)?;
            let n = g.n_pairs as f64;
            let loss = g.loss / n;
            if !loss.is_finite() || g.grad.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence(format!(
                    "{stage}: non-finite loss {loss} at epoch {epoch}, batch {b}"
                )));
            }
            for x in &mut g.grad {
                *x /= n;
            }
            clip_norm(&mut g.grad, config.clip_norm);
            apply_update(&mut state, &g.grad, config);
            log.push(LogRecord {
                stage: stage.to_string(),
                epoch,
                batch: b,
                loss,
                pair_accuracy: g.correct / n,
            });
        }
    }
    Ok((state, log))
}
