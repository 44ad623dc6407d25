//! Agreement metrics against expert comparison labels, removal curves and the
//! ablation harness.

mod baselines;
mod curve;

pub use baselines::{run_baselines, BaselineReport, BaselineRow, BASELINE_NAMES};
pub use curve::{removal_curve, CurveConfig, CurvePoint, CurveSeries, RemovalCurve, SeriesOrder};

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogLookup, DialogPair};
use crate::encoder::{score_all, ModelState};
use crate::error::{Error, Result};
use crate::ranker::{predict_from_scores, PairPrediction};

/// 2×2 table of (predicted, expert) comparison labels.
///
/// `a`: both say first is better, `b`: predicted first / expert second,
/// `c`: predicted second / expert first, `d`: both say second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl Confusion {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Confusion { a, b, c, d }
    }

    pub fn add(&mut self, predicted_first: bool, expert_first: bool) {
        match (predicted_first, expert_first) {
            (true, true) => self.a += 1,
            (true, false) => self.b += 1,
            (false, true) => self.c += 1,
            (false, false) => self.d += 1,
        }
    }

    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn observed_agreement(&self) -> f64 {
        (self.a + self.d) as f64 / self.n() as f64
    }

    pub fn chance_agreement(&self) -> f64 {
        let (a, b, c, d) = (self.a as f64, self.b as f64, self.c as f64, self.d as f64);
        let n = self.n() as f64;
        ((a + b) * (a + c) + (c + d) * (b + d)) / (n * n)
    }

    /// Cohen's κ. A table with every count in one cell has no chance
    /// correction and scores 1.
    pub fn kappa(&self) -> f64 {
        let po = self.observed_agreement();
        let pe = self.chance_agreement();
        if pe >= 1.0 {
            return if po >= 1.0 { 1.0 } else { 0.0 };
        }
        (po - pe) / (1.0 - pe)
    }

    /// Large-sample standard error `sqrt(p_o (1 − p_o) / (n (1 − p_e)²))`.
    pub fn kappa_standard_error(&self) -> f64 {
        let po = self.observed_agreement();
        let pe = self.chance_agreement();
        if pe >= 1.0 {
            return 0.0;
        }
        (po * (1.0 - po) / (self.n() as f64 * (1.0 - pe).powi(2))).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_pairs: usize,
    /// Fraction of pairs predicted correctly, exact score ties counting half.
    pub accuracy: f64,
    pub kappa: f64,
    pub kappa_se: f64,
    pub confusion: Confusion,
    /// Pairs with exactly equal scores; tabulated as "second is better".
    pub ties: usize,
}

impl EvalReport {
    /// Scores `(expert label, prediction)` pairs.
    pub fn from_predictions(
        items: impl IntoIterator<Item = (bool, PairPrediction)>,
    ) -> Result<Self> {
        let mut confusion = Confusion::default();
        let mut correct = 0.0;
        let mut ties = 0;
        for (label, pred) in items {
            if pred.tie {
                ties += 1;
                correct += 0.5;
            } else if pred.first_better == label {
                correct += 1.0;
            }
            confusion.add(pred.first_better && !pred.tie, label);
        }
        let n = confusion.n() as usize;
        if n == 0 {
            return Err(Error::Config("no pairs to evaluate".into()));
        }
        Ok(EvalReport {
            n_pairs: n,
            accuracy: correct / n as f64,
            kappa: confusion.kappa(),
            kappa_se: confusion.kappa_standard_error(),
            confusion,
            ties,
        })
    }
}

/// Compares the model's ranking of each pair against its expert label.
pub fn evaluate_pairs(
    pairs: &[DialogPair],
    lookup: &DialogLookup<'_>,
    state: &ModelState,
) -> Result<EvalReport> {
    let mut dialogs = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        dialogs.push(lookup.get(&p.first_id)?);
        dialogs.push(lookup.get(&p.second_id)?);
    }
    let scores = score_all(dialogs, state)?;
    EvalReport::from_predictions(
        pairs
            .iter()
            .zip(scores.chunks_exact(2))
            .map(|(p, s)| (p.label, predict_from_scores(s[0], s[1]))),
    )
}
