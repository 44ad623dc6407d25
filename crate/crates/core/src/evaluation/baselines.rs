use serde::{Deserialize, Serialize};

use super::{evaluate_pairs, EvalReport};
use crate::corpus::CorpusSplit;
use crate::encoder::ModelState;
use crate::error::Result;
use crate::pipeline::{initial_state, run_raw, run_stage1, run_stage2, run_stage3, PipelineConfig};

pub const BASELINE_NAMES: [&str; 8] = [
    "RawPairwise",
    "Stage1Only",
    "Stage2Only",
    "Stage3Only",
    "Stage1+2",
    "Stage1+3",
    "Stage2+3",
    "CMADE",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    pub test: EvalReport,
    pub dev: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub rows: Vec<BaselineRow>,
}

impl BaselineReport {
    pub fn get(&self, name: &str) -> Option<&BaselineRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Aligned plain-text table of test metrics.
    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>7}  {:>6}  {:>7}\n",
            "model", "accuracy", "kappa", "se", "dev_acc"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>8.3}  {:>7.3}  {:>6.3}  {:>7.3}\n",
                r.name, r.test.accuracy, r.test.kappa, r.test.kappa_se, r.dev.accuracy
            ));
        }
        out
    }
}

/// Trains every stage combination from the same initial state and scores
/// each on the dev and test pairs.
///
/// Shared prefixes are trained once: `Stage1+2` continues into `CMADE`, and
/// `Stage2Only` into `Stage2+3`. The raw-rating baseline trains for
/// `config.raw.epochs`.
pub fn run_baselines(corpus: &CorpusSplit, config: &PipelineConfig) -> Result<BaselineReport> {
    config.validate()?;
    corpus.validate()?;
    let lookup = corpus.lookup();
    let train = &corpus.train;
    let init = initial_state(config)?;
    let stage3 =
        |s: ModelState| run_stage3(train, &corpus.dev, &lookup, s, config).map(|o| o.state);

    let raw = run_raw(train, init.clone(), config)?.state;
    let s1 = run_stage1(train, init.clone(), config)?.state;
    let s2 = run_stage2(train, init.clone(), config)?.state;
    let s3 = stage3(init)?;
    let s12 = run_stage2(train, s1.clone(), config)?.state;
    let s13 = stage3(s1.clone())?;
    let s23 = stage3(s2.clone())?;
    let full = stage3(s12.clone())?;

    let states = [raw, s1, s2, s3, s12, s13, s23, full];
    let rows = BASELINE_NAMES
        .iter()
        .zip(&states)
        .map(|(name, state)| {
            Ok(BaselineRow {
                name: name.to_string(),
                test: evaluate_pairs(&corpus.test, &lookup, state)?,
                dev: evaluate_pairs(&corpus.dev, &lookup, state)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BaselineReport { rows })
}
