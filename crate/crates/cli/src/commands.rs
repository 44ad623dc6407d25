use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rank_denoise::corpus::{
    load_corpus, rating_disagreement, rating_histogram, save_corpus, write_jsonl, CorpusSplit,
    DEV_FILE, HELDOUT_FILE, TARGET_RATING_FRACTIONS, TEST_FILE, TRAIN_FILE,
};
use rank_denoise::encoder::{load_checkpoint, save_checkpoint, ModelState};
use rank_denoise::evaluation::{
    evaluate_pairs, removal_curve, run_baselines, EvalReport, SeriesOrder,
};
use rank_denoise::neighbors::build_index;
use rank_denoise::pipeline::{
    generate_corpus, initial_state, run_stage1, run_stage2, run_stage3, PipelineConfig,
};
use rank_denoise::ranker::LogRecord;
use rank_denoise::valuation::{encode_dev_pairs, shapley_knn};

use crate::artifacts::{create_dir, file_hash, write_atomic, write_json, Manifest};
use crate::config::{config_hash, Layout};
use crate::exit::Failure;

pub struct Context {
    pub config: PipelineConfig,
    pub layout: Layout,
    pub config_hash: String,
}

impl Context {
    pub fn new(config: PipelineConfig, out: &Path) -> Result<Self, Failure> {
        config.validate()?;
        let layout = Layout::new(out, &config.paths);
        let config_hash = config_hash(&config);
        Ok(Context {
            config,
            layout,
            config_hash,
        })
    }

    fn corpus(&self) -> Result<CorpusSplit, Failure> {
        if !self.layout.corpus.join(TRAIN_FILE).exists() {
            return Err(Failure::Missing(format!(
                "no corpus at {} (run `generate` first)",
                self.layout.corpus.display()
            )));
        }
        Ok(load_corpus(&self.layout.corpus)?)
    }

    fn checkpoint(&self, n: u8) -> Result<ModelState, Failure> {
        let path = self.layout.checkpoint(n);
        if !path.exists() {
            return Err(Failure::Missing(format!(
                "{} (run `stage{n}` first)",
                path.display()
            )));
        }
        Ok(load_checkpoint(&path)?)
    }

    fn corpus_hash(&self, file: &str) -> Result<String, Failure> {
        let path = self.layout.corpus.join(file);
        if path.exists() {
            file_hash(&path)
        } else {
            Ok("absent".into())
        }
    }
}

fn write_log(path: &Path, log: &[LogRecord]) -> Result<(), Failure> {
    Ok(write_jsonl(path, log)?)
}

pub fn generate(ctx: &Context) -> Result<(), Failure> {
    let corpus = generate_corpus(&ctx.config)?;
    save_corpus(&corpus, &ctx.layout.corpus)?;
    let hist = rating_histogram(&corpus.train);
    println!(
        "wrote {} training dialogs to {}",
        corpus.train.len(),
        ctx.layout.corpus.display()
    );
    println!("rating  share   target");
    for (r, (got, want)) in hist.iter().zip(TARGET_RATING_FRACTIONS).enumerate() {
        println!(
            "{:>6}  {:>5.1}%  {:>5.1}%",
            r + 1,
            100.0 * got,
            100.0 * want
        );
    }
    let pairs: Vec<_> = corpus.dev.iter().chain(&corpus.test).cloned().collect();
    let (disagree, counted) = rating_disagreement(&corpus, &pairs)?;
    if counted > 0 {
        println!(
            "rating/expert disagreement {:.3} over {counted} dev+test pairs with unequal ratings",
            disagree as f64 / counted as f64
        );
    }
    Ok(())
}

/// Where a stage starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Previous,
    Scratch,
}

/// Whether a stage whose checkpoint is on record with identical inputs may be
/// skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reuse {
    Never,
    IfCurrent,
}

fn inputs(ctx: &Context, n: u8, start: Start) -> Result<BTreeMap<String, String>, Failure> {
    let mut inputs = BTreeMap::from([("train.jsonl".to_string(), ctx.corpus_hash(TRAIN_FILE)?)]);
    if n == 3 {
        inputs.insert(DEV_FILE.into(), ctx.corpus_hash(DEV_FILE)?);
        inputs.insert(HELDOUT_FILE.into(), ctx.corpus_hash(HELDOUT_FILE)?);
    }
    let parent = match (n, start) {
        (1, _) | (_, Start::Scratch) => "init".to_string(),
        _ => {
            let path = ctx.layout.checkpoint(n - 1);
            if !path.exists() {
                return Err(Failure::Missing(format!(
                    "{} (run `stage{}` first or pass --from-scratch)",
                    path.display(),
                    n - 1
                )));
            }
            file_hash(&path)?
        }
    };
    inputs.insert("parent".into(), parent);
    Ok(inputs)
}

/// Runs stage `n`, writing its checkpoint, log, stage reports and manifest
/// entry. Returns the trained state.
pub fn stage(ctx: &Context, n: u8, start: Start, reuse: Reuse) -> Result<ModelState, Failure> {
    let corpus = ctx.corpus()?;
    let inputs = inputs(ctx, n, start)?;
    let name = format!("stage{n}.ckpt");
    let dir = &ctx.layout.checkpoints;
    create_dir(dir)?;
    create_dir(&ctx.layout.reports)?;
    let mut manifest = Manifest::load(dir, &ctx.config_hash)?;
    if reuse == Reuse::IfCurrent && manifest.is_current(dir, &name, &inputs)? {
        eprintln!("stage{n}: up to date, skipped");
        return ctx.checkpoint(n);
    }

    let state = match (n, start) {
        (1, _) | (_, Start::Scratch) => initial_state(&ctx.config)?,
        _ => ctx.checkpoint(n - 1)?,
    };
    let lookup = corpus.lookup();
    let reports = &ctx.layout;
    let (state, log) = match n {
        1 => {
            let out = run_stage1(&corpus.train, state, &ctx.config)?;
            (out.state, out.log)
        }
        2 => {
            let out = run_stage2(&corpus.train, state, &ctx.config)?;
            write_jsonl(&reports.report("smoothed_ratings.jsonl"), &out.smoothed)?;
            (out.state, out.log)
        }
        _ => {
            if corpus.dev.is_empty() {
                return Err(Failure::Missing(format!(
                    "no dev pairs in {}",
                    ctx.layout.corpus.display()
                )));
            }
            let out = run_stage3(&corpus.train, &corpus.dev, &lookup, state, &ctx.config)?;
            write_jsonl(
                &reports.report("shapley_values.jsonl"),
                &out.report.records(),
            )?;
            let mut ids = out.plan.removed.join("\n");
            if !ids.is_empty() {
                ids.push('\n');
            }
            write_atomic(&reports.report("removed_ids.txt"), ids.as_bytes())?;
            eprintln!(
                "stage3: removed {} of {} training dialogs",
                out.plan.removed.len(),
                corpus.train.len()
            );
            (out.state, out.log)
        }
    };
    write_log(&reports.report(&format!("stage{n}_log.jsonl")), &log)?;
    save_checkpoint(&state, &ctx.layout.checkpoint(n))?;
    manifest.record(dir, &name, inputs)?;
    manifest.save(dir)?;
    if let Some(last) = log.last() {
        eprintln!(
            "stage{n}: {} batches, final loss {:.4}, wrote {}",
            log.len(),
            last.loss,
            ctx.layout.checkpoint(n).display()
        );
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Test,
    Dev,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Test => "test",
            Split::Dev => "dev",
        }
    }
}

pub fn evaluate_split(ctx: &Context, split: Split, checkpoint: u8) -> Result<EvalReport, Failure> {
    let corpus = ctx.corpus()?;
    let state = ctx.checkpoint(checkpoint)?;
    let pairs = match split {
        Split::Test => &corpus.test,
        Split::Dev => &corpus.dev,
    };
    if pairs.is_empty() {
        let file = if split == Split::Test {
            TEST_FILE
        } else {
            DEV_FILE
        };
        return Err(Failure::Missing(format!(
            "no pairs in {}",
            ctx.layout.corpus.join(file).display()
        )));
    }
    let report = evaluate_pairs(pairs, &corpus.lookup(), &state)?;
    create_dir(&ctx.layout.reports)?;
    write_json(
        &ctx.layout.report(&format!("eval_{}.json", split.name())),
        &report,
    )?;
    println!(
        "{} accuracy {:.3} kappa {:.3} (se {:.3}) on {} pairs, stage{checkpoint} checkpoint",
        split.name(),
        report.accuracy,
        report.kappa,
        report.kappa_se,
        report.n_pairs
    );
    Ok(report)
}

pub fn baselines(ctx: &Context) -> Result<(), Failure> {
    let corpus = ctx.corpus()?;
    let report = run_baselines(&corpus, &ctx.config)?;
    create_dir(&ctx.layout.reports)?;
    write_json(&ctx.layout.report("baselines.json"), &report)?;
    let table = report.table();
    write_atomic(&ctx.layout.report("baselines.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// Removal curve in the feature space of checkpoint `checkpoint`.
pub fn curve(ctx: &Context, checkpoint: u8) -> Result<PathBuf, Failure> {
    let corpus = ctx.corpus()?;
    let state = ctx.checkpoint(checkpoint)?;
    let lookup = corpus.lookup();
    let index = build_index(&corpus.train, &state)?;
    let dev = encode_dev_pairs(&corpus.dev, &lookup, &state)?;
    let test = encode_dev_pairs(&corpus.test, &lookup, &state)?;
    if dev.is_empty() {
        return Err(Failure::Missing(format!(
            "no dev pairs in {}",
            ctx.layout.corpus.display()
        )));
    }
    let report = shapley_knn(&index, &dev, ctx.config.k_shapley)?;
    let config = ctx.config.curve_config();
    let curve = removal_curve(&index, &report, &dev, &test, &config)?;
    create_dir(&ctx.layout.reports)?;
    let path = ctx.layout.report("removal_curve.csv");
    write_atomic(&path, curve.to_csv().as_bytes())?;
    write_json(&ctx.layout.report("removal_curve.json"), &curve)?;
    let limit = (0.3 * curve.n_train as f64).floor() as usize;
    println!("mean dev accuracy over the first 30% of removals:");
    for &k in &config.ks {
        if let (Some(s), Some(r)) = (
            curve.get(SeriesOrder::Shapley, "dev", k),
            curve.get(SeriesOrder::Random, "dev", k),
        ) {
            println!(
                "  k={k:<4} shapley {:.3}  random {:.3}",
                s.mean_up_to(&curve.removed, limit),
                r.mean_up_to(&curve.removed, limit)
            );
        }
    }
    Ok(path)
}

pub struct PipelineOptions {
    pub generate: bool,
    pub baselines: bool,
}

pub fn pipeline(ctx: &Context, options: &PipelineOptions) -> Result<(), Failure> {
    if options.generate {
        generate(ctx)?;
    }
    for n in 1..=3 {
        stage(ctx, n, Start::Previous, Reuse::IfCurrent)?;
    }
    evaluate_split(ctx, Split::Test, 3)?;
    evaluate_split(ctx, Split::Dev, 3)?;
    curve(ctx, 2)?;
    if options.baselines {
        baselines(ctx)?;
    }
    Ok(())
}
