//! Pairwise comparison model on top of the encoder.
//!
//! For a dialog pair with scores `o_i`, `o_j` the model's belief that the
//! first dialog is better is the logistic of the score gap, and training
//! minimises the binary cross-entropy against the comparison label. The
//! gradient of a sum of pairwise losses factors into one scalar weight per
//! dialog ([`lambda_weights`]), so a batch costs one forward and one backward
//! pass per dialog no matter how many pairs it contains ([`batch_gradient`]).

mod gradient;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialog;
use crate::encoder::ModelState;
use crate::error::{Error, Result};

pub use gradient::{batch_gradient, BatchGradient};
pub use optim::{apply_update, clip_norm, OptimizerKind};
pub use train::{train_stage, LogRecord, StageData, TrainConfig};

/// `P(first ⊳ second) = 1 / (1 + exp(-(o_first - o_second)))`.
///
/// The smaller of the two complementary probabilities is computed directly,
/// which keeps it accurate to a few ulps, and the larger as its complement.
/// `1 - q` is exact-rounded for `q ≤ 0.5`, so `posterior(a, b) + posterior(b, a)`
/// is exactly 1.
pub fn posterior(o_first: f64, o_second: f64) -> f64 {
    let gap = o_first - o_second;
    let e = (-gap.abs()).exp();
    let smaller = e / (1.0 + e);
    if gap >= 0.0 {
        1.0 - smaller
    } else {
        smaller
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(-x))`, evaluated on the side that does not overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of the pair posterior against label `first_better`.
pub fn pair_loss(o_first: f64, o_second: f64, first_better: bool) -> f64 {
    let gap = if first_better {
        o_first - o_second
    } else {
        o_second - o_first
    };
    softplus(-gap)
}

/// Per-dialog derivative `∂L/∂o_i` of `L = Σ pair_loss(o_b, o_w, true)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights {
    pub values: Vec<f64>,
}

/// One pass over oriented `(better, worse)` index pairs.
///
/// For each pair the better item's weight drops by `1 / (1 + e^{o_b - o_w})`
/// and the worse item's weight rises by the same amount.
pub fn lambda_weights(scores: &[f64], pairs: &[(usize, usize)]) -> Result<LambdaWeights> {
    let n = scores.len();
    let mut values = vec![0.0; n];
    for &(better, worse) in pairs {
        for index in [better, worse] {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, len: n });
            }
        }
        let push = logistic(scores[worse] - scores[better]);
        values[better] -= push;
        values[worse] += push;
    }
    Ok(LambdaWeights { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    /// `P(first ⊳ second)`.
    pub probability: f64,
    /// `true` iff the first dialog scores strictly higher.
    pub first_better: bool,
    /// Scores were exactly equal; `probability` is then 0.5.
    pub tie: bool,
}

pub fn predict_from_scores(o_first: f64, o_second: f64) -> PairPrediction {
    let tie = o_first == o_second;
    PairPrediction {
        probability: if tie {
            0.5
        } else {
            posterior(o_first, o_second)
        },
        first_better: o_first > o_second,
        tie,
    }
}

pub fn predict_pair(first: &Dialog, second: &Dialog, state: &ModelState) -> Result<PairPrediction> {
    let a = crate::encoder::score(first, state)?;
    let b = crate::encoder::score(second, state)?;
    Ok(predict_from_scores(a, b))
}
