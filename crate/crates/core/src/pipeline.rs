//! The three training stages and their configuration.
//!
//! 1. Self-supervised: real dialogs should outrank copies with one utterance
//!    swapped for an utterance from another dialog.
//! 2. Label smoothing: each training rating is replaced by the mean rating of
//!    its nearest neighbors in the stage-1 feature space, and the model is
//!    fine-tuned on the smoothed grades.
//! 3. Data valuation: training dialogs with negative KNN-Shapley value on the
//!    expert dev pairs are dropped and the model is fine-tuned on the raw
//!    ratings of the rest.
//!
//! Every stage continues from the state it is given.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    make_stage1_pairs, synthesize, CorpusSplit, Dialog, DialogLookup, DialogPair, SynthConfig,
};
use crate::encoder::{init_state, EncoderConfig, ModelState};
use crate::error::{Error, Result};
use crate::evaluation::CurveConfig;
use crate::neighbors::{build_index, smooth_labels, SmoothedRating};
use crate::ranker::{train_stage, LogRecord, StageData, TrainConfig};
use crate::rng::derive;
use crate::valuation::{
    encode_dev_pairs, plan_removal, shapley_knn, RemovalPlan, RemovalRule, ShapleyReport,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "RANK_DENOISE_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus: "corpus".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

/// Everything one experiment depends on.
///
/// `seed` is the only seed: corpus generation, encoder initialisation,
/// perturbation sampling, batch shuffling and the random-removal control all
/// draw from streams derived from it, so the `seed` fields inside `encoder`,
/// the stage configs and `curve` are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub k_smooth: usize,
    pub k_shapley: usize,
    /// Rounds of smooth-then-fine-tune in stage 2.
    pub smoothing_iterations: usize,
    pub removal: RemovalRule,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub stage3: TrainConfig,
    /// Training on raw ratings alone, the no-denoising baseline.
    pub raw: TrainConfig,
    pub curve: CurveConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            k_smooth: 50,
            k_shapley: 50,
            smoothing_iterations: 1,
            removal: RemovalRule::NegativeValues,
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            encoder: EncoderConfig::default(),
            stage1: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            stage2: TrainConfig::default(),
            stage3: TrainConfig {
                learning_rate: 3e-4,
                epochs: 1,
                ..TrainConfig::default()
            },
            raw: TrainConfig {
                epochs: 6,
                ..TrainConfig::default()
            },
            curve: CurveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Three,
    Raw,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::One => "stage1",
            Stage::Two => "stage2",
            Stage::Three => "stage3",
            Stage::Raw => "raw",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Stage::One => 11,
            Stage::Two => 12,
            Stage::Three => 13,
            Stage::Raw => 14,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_smooth == 0 || self.k_shapley == 0 {
            return Err(Error::Config(
                "k_smooth and k_shapley must be at least 1".into(),
            ));
        }
        if self.smoothing_iterations == 0 {
            return Err(Error::Config(
                "smoothing_iterations must be at least 1".into(),
            ));
        }
        if let RemovalRule::BottomFraction(f) = self.removal {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidFraction(f));
            }
        }
        let p = &self.paths;
        if p.corpus == p.checkpoints || p.corpus == p.reports || p.checkpoints == p.reports {
            return Err(Error::Config(
                "corpus, checkpoint and report paths must differ".into(),
            ));
        }
        self.synth.validate()?;
        for t in [&self.stage1, &self.stage2, &self.stage3, &self.raw] {
            t.validate()?;
        }
        Ok(())
    }

    /// Training settings of `stage` with its seed derived from the global one.
    pub fn train_config(&self, stage: Stage) -> TrainConfig {
        let base = match stage {
            Stage::One => &self.stage1,
            Stage::Two => &self.stage2,
            Stage::Three => &self.stage3,
            Stage::Raw => &self.raw,
        };
        TrainConfig {
            seed: derive(self.seed, stage.stream()),
            ..base.clone()
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            init_seed: derive(self.seed, 10),
            ..self.encoder.clone()
        }
    }

    pub fn curve_config(&self) -> CurveConfig {
        CurveConfig {
            seed: derive(self.seed, 30),
            ..self.curve.clone()
        }
    }

    pub fn perturbation_seed(&self) -> u64 {
        derive(self.seed, 20)
    }
}

pub fn generate_corpus(config: &PipelineConfig) -> Result<CorpusSplit> {
    synthesize(&config.synth, config.seed)
}

pub fn initial_state(config: &PipelineConfig) -> Result<ModelState> {
    init_state(&config.encoder_config())
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub state: ModelState,
    pub log: Vec<LogRecord>,
}

/// Real-versus-perturbed training on two fakes per training dialog.
pub fn run_stage1(
    train: &[Dialog],
    state: ModelState,
    config: &PipelineConfig,
) -> Result<StageOutcome> {
    let generated = make_stage1_pairs(train, config.perturbation_seed())?;
    let mut lookup = DialogLookup::new(train);
    lookup.extend(&generated.fakes);
    let data = StageData::from_pairs(&generated.pairs, &lookup)?;
    let (state, log) = train_stage(
        &data,
        state,
        &config.train_config(Stage::One),
        Stage::One.name(),
    )?;
    Ok(StageOutcome { state, log })
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome {
    pub state: ModelState,
    pub log: Vec<LogRecord>,
    /// Smoothed ratings from the last iteration.
    pub smoothed: Vec<SmoothedRating>,
}

/// Smooths ratings over feature-space neighbors and fine-tunes on them.
pub fn run_stage2(
    train: &[Dialog],
    mut state: ModelState,
    config: &PipelineConfig,
) -> Result<Stage2Outcome> {
    let mut log = Vec::new();
    let mut smoothed = Vec::new();
    let base = config.train_config(Stage::Two);
    for iteration in 0..config.smoothing_iterations {
        let index = build_index(train, &state)?;
        smoothed = smooth_labels(&index, config.k_smooth)?;
        let data = StageData::Graded(
            train
                .iter()
                .zip(&smoothed)
                .map(|(d, s)| (d, s.value))
                .collect(),
        );
        let train_config = TrainConfig {
            seed: derive(base.seed, iteration as u64),
            ..base.clone()
        };
        let (next, mut records) = train_stage(&data, state, &train_config, Stage::Two.name())?;
        state = next;
        log.append(&mut records);
    }
    Ok(Stage2Outcome {
        state,
        log,
        smoothed,
    })
}

#[derive(Debug, Clone)]
pub struct Stage3Outcome {
    pub state: ModelState,
    pub log: Vec<LogRecord>,
    pub report: ShapleyReport,
    pub plan: RemovalPlan,
}

/// Values every training dialog against the dev pairs, drops the ones the
/// removal rule selects and fine-tunes on the raw ratings of the rest.
pub fn run_stage3(
    train: &[Dialog],
    dev: &[DialogPair],
    lookup: &DialogLookup<'_>,
    state: ModelState,
    config: &PipelineConfig,
) -> Result<Stage3Outcome> {
    let index = build_index(train, &state)?;
    let dev_features = encode_dev_pairs(dev, lookup, &state)?;
    let report = shapley_knn(&index, &dev_features, config.k_shapley)?;
    let plan = plan_removal(&report, config.removal)?;
    let removed: std::collections::HashSet<&str> =
        plan.removed.iter().map(String::as_str).collect();
    let kept = train.iter().filter(|d| !removed.contains(d.id.as_str()));
    let data = StageData::from_ratings(kept)?;
    let (state, log) = train_stage(
        &data,
        state,
        &config.train_config(Stage::Three),
        Stage::Three.name(),
    )?;
    Ok(Stage3Outcome {
        state,
        log,
        report,
        plan,
    })
}

/// The no-denoising baseline: pairs ordered by raw ratings.
pub fn run_raw(
    train: &[Dialog],
    state: ModelState,
    config: &PipelineConfig,
) -> Result<StageOutcome> {
    let data = StageData::from_ratings(train)?;
    let (state, log) = train_stage(
        &data,
        state,
        &config.train_config(Stage::Raw),
        Stage::Raw.name(),
    )?;
    Ok(StageOutcome { state, log })
}

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`]. Only the first call in
/// a process has an effect.
pub fn init_thread_pool() -> Result<()> {
    if let Some(n) = thread_cap()? {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}
