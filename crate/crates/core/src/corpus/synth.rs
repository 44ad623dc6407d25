//! Synthetic rated-dialog corpora with a known latent quality.
//!
//! Every dialog gets a hidden quality `q ∈ [0, 1]` that sets how often a turn
//! connects to the one before it: a coherent system turn picks up the aspect
//! the user just mentioned, and a coherent user turn answers the aspect the
//! system asked about. Incoherent turns open with a different aspect. Each
//! aspect word is equally likely either way, so this part of quality shows
//! only in how adjacent turns relate. Quality also sets the system's register:
//! some system turns carry a polite or a curt word. Swapping one utterance
//! barely moves the register, so self-supervision cannot see it while ratings
//! can.
//!
//! The self-reported rating is `clamp(round(1 + 4q + ε), 1, 5)`. The rater is
//! typical (`ε` Gaussian), lenient (`ε` a large positive shift) or careless
//! (rating uniform on 1..=5). Lenient raters also leave verbal tics in their
//! utterances, which carry no quality signal.
//!
//! Expert dev/test labels come from `q` directly.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CorpusSplit, Dialog, DialogPair, PairSource, Role, Turn, LATENT_QUALITY_KEY};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};

/// Rating fractions for scores 1..=5 that the default noise model targets.
pub const TARGET_RATING_FRACTIONS: [f64; 5] = [0.107, 0.112, 0.157, 0.184, 0.440];

/// Metadata key naming the rater type that produced a synthetic rating.
pub const RATER_KEY: &str = "rater";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_dev_pairs: usize,
    pub n_test_pairs: usize,
    pub turns_per_dialog: usize,
    /// Number of distinct movie titles.
    pub vocab_size: usize,
    /// Scale applied to the rating noise; 0 gives ratings monotone in quality.
    pub noise: f64,
    /// Beta(a, b) shape of the latent quality.
    pub quality_alpha: f64,
    pub quality_beta: f64,
    pub lenient_prob: f64,
    /// Share of raters who pick a rating uniformly at random.
    pub careless_prob: f64,
    pub lenient_shift_min: f64,
    pub lenient_shift_width: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Probability that a turn connects to the previous one, at q = 0 and q = 1.
    pub coherence_min: f64,
    pub coherence_max: f64,
    /// Probability that a system turn carries a register word; the word is
    /// polite with probability q and curt otherwise.
    pub register_rate: f64,
    /// Per-user-turn probability of a verbal tic for lenient and other raters.
    pub tic_rate_lenient: f64,
    pub tic_rate_other: f64,
    /// Minimum |Δq| for an expert pair (experts drop "cannot tell" pairs).
    pub expert_min_gap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 3000,
            n_dev_pairs: 200,
            n_test_pairs: 200,
            turns_per_dialog: 24,
            vocab_size: 40,
            noise: 1.0,
            quality_alpha: 0.3812,
            quality_beta: 0.7388,
            lenient_prob: 0.5942,
            careless_prob: 0.2264,
            lenient_shift_min: 1.0406,
            lenient_shift_width: 3.5744,
            noise_mean: 0.0,
            noise_std: 0.5,
            coherence_min: 0.7,
            coherence_max: 1.0,
            register_rate: 1.0,
            tic_rate_lenient: 0.5,
            tic_rate_other: 0.05,
            expert_min_gap: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_train < 2 {
            return bad("n_train must be at least 2");
        }
        if self.turns_per_dialog < 2 {
            return bad("turns_per_dialog must be at least 2");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite non-negative number");
        }
        if !(self.quality_alpha > 0.0 && self.quality_beta > 0.0) {
            return bad("quality Beta shapes must be positive");
        }
        for (name, p) in [
            ("lenient_prob", self.lenient_prob),
            ("careless_prob", self.careless_prob),
            ("coherence_min", self.coherence_min),
            ("coherence_max", self.coherence_max),
            ("register_rate", self.register_rate),
            ("tic_rate_lenient", self.tic_rate_lenient),
            ("tic_rate_other", self.tic_rate_other),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "{name} must be a fraction in [0, 1]"
                )));
            }
        }
        if self.lenient_prob + self.careless_prob > 1.0 {
            return bad("lenient_prob + careless_prob must not exceed 1");
        }
        if !(self.noise_std >= 0.0 && self.lenient_shift_width >= 0.0) {
            return bad("noise widths must be non-negative");
        }
        if !(0.0..1.0).contains(&self.expert_min_gap) {
            return bad("expert_min_gap must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rater {
    Typical,
    Lenient,
    Careless,
}

impl Rater {
    fn name(self) -> &'static str {
        match self {
            Rater::Typical => "typical",
            Rater::Lenient => "lenient",
            Rater::Careless => "careless",
        }
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "te", "su", "no", "vi", "da", "pe", "zu", "xo", "be", "ri", "fa", "gu",
];

/// Deterministic pseudo-word for title `i`, always three syllables.
fn topic_word(i: usize) -> String {
    let n = SYLLABLES.len();
    format!(
        "{}{}{}",
        SYLLABLES[i % n],
        SYLLABLES[(i / n) % n],
        SYLLABLES[(i / (n * n) + i) % n]
    )
}

const ASPECTS: &[&str] = &[
    "acting", "music", "ending", "villain", "visuals", "plot", "dialogue", "pacing",
];

// `{a}`: aspect picked up from the previous turn, `{b}`: aspect handed to the
// next turn, `{t}`: movie title. Every template starts with `{a}` and ends
// with `{b}`.
const SYSTEM_OPEN: &[&str] = &[
    "have you seen {t} what did you think of the {b}",
    "i watched {t} yesterday how was the {b}",
];
const SYSTEM_TURN: &[&str] = &[
    "{a} right {t} handled that well what about the {b}",
    "{a} good point so in {t} how was the {b}",
    "{a} i agree tell me about the {b}",
    "{a} interesting and did you like the {b}",
];
const USER_TURN: &[&str] = &[
    "{a} was great in my opinion but the {b}",
    "{a} i liked it and also the {b}",
    "{a} hmm not sure maybe the {b}",
    "{a} in {t} was fine i guess the {b}",
];
const POLITE: &[&str] = &["certainly", "gladly", "absolutely", "indeed"];
const CURT: &[&str] = &["whatever", "meh", "anyway", "dunno"];
const TICS: &[&str] = &["haha", "wow", "thanks", "please", "lol", "awesome"];

/// Inserts `word` after the first word of `text`, keeping both ends intact.
fn insert_inside(text: &str, word: &str) -> String {
    match text.split_once(' ') {
        Some((head, tail)) => format!("{head} {word} {tail}"),
        None => format!("{text} {word}"),
    }
}

struct Generator<'a> {
    config: &'a SynthConfig,
    topics: Vec<String>,
    quality: Beta<f64>,
}

impl<'a> Generator<'a> {
    fn new(config: &'a SynthConfig) -> Result<Self> {
        let quality = Beta::new(config.quality_alpha, config.quality_beta)
            .map_err(|e| Error::Config(format!("quality distribution: {e}")))?;
        Ok(Generator {
            config,
            topics: (0..config.vocab_size).map(topic_word).collect(),
            quality,
        })
    }

    fn draw_quality<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quality.sample(rng)
    }

    fn rater<R: Rng>(&self, rng: &mut R) -> Rater {
        let u = rng.gen::<f64>();
        if u < self.config.lenient_prob {
            Rater::Lenient
        } else if u < self.config.lenient_prob + self.config.careless_prob {
            Rater::Careless
        } else {
            Rater::Typical
        }
    }

    fn rating<R: Rng>(&self, rng: &mut R, q: f64, rater: Rater) -> u8 {
        let c = self.config;
        let shift = match rater {
            Rater::Lenient => c.lenient_shift_min + c.lenient_shift_width * rng.gen::<f64>(),
            Rater::Typical => {
                let z: f64 = StandardNormal.sample(rng);
                c.noise_mean + c.noise_std * z
            }
            Rater::Careless => {
                let r = rng.gen_range(1..=5u8);
                return if c.noise > 0.0 {
                    r
                } else {
                    self.rating(rng, q, Rater::Typical)
                };
            }
        };
        let raw = (1.0 + 4.0 * q + c.noise * shift).round();
        raw.clamp(1.0, 5.0) as u8
    }

    /// Aspect that opens a turn: the previous turn's closing aspect when the
    /// turn is coherent, any other aspect otherwise.
    fn opening_aspect<R: Rng>(&self, rng: &mut R, previous: usize, coherence: f64) -> usize {
        if rng.gen::<f64>() < coherence {
            previous
        } else {
            (previous + rng.gen_range(1..ASPECTS.len())) % ASPECTS.len()
        }
    }

    fn dialog<R: Rng>(&self, rng: &mut R, id: String, q: f64) -> Dialog {
        let c = self.config;
        let coherence = c.coherence_min + (c.coherence_max - c.coherence_min) * q;
        let rater = self.rater(rng);
        let tic_rate = if rater == Rater::Lenient {
            c.tic_rate_lenient
        } else {
            c.tic_rate_other
        };
        let title = &self.topics[rng.gen_range(0..self.topics.len())];

        let mut handed = rng.gen_range(0..ASPECTS.len());
        let mut turns = Vec::with_capacity(c.turns_per_dialog);
        for k in 0..c.turns_per_dialog {
            let role = if k % 2 == 0 { Role::System } else { Role::User };
            let next = rng.gen_range(0..ASPECTS.len());
            let (templates, opening) = match (role, k) {
                (Role::System, 0) => (SYSTEM_OPEN, handed),
                (Role::System, _) => (SYSTEM_TURN, self.opening_aspect(rng, handed, coherence)),
                (Role::User, _) => (USER_TURN, self.opening_aspect(rng, handed, coherence)),
            };
            let mut text = templates[rng.gen_range(0..templates.len())]
                .replace("{a}", ASPECTS[opening])
                .replace("{b}", ASPECTS[next])
                .replace("{t}", title);
            if role == Role::System && rng.gen::<f64>() < c.register_rate {
                let words = if rng.gen::<f64>() < q { POLITE } else { CURT };
                text = insert_inside(&text, words[rng.gen_range(0..words.len())]);
            }
            if role == Role::User && rng.gen::<f64>() < tic_rate {
                text = insert_inside(&text, TICS[rng.gen_range(0..TICS.len())]);
            }
            handed = next;
            turns.push(Turn::new(role, text));
        }
        let rating = self.rating(rng, q, rater);
        let mut dialog = Dialog::new(id, turns, Some(rating));
        dialog
            .meta
            .insert(LATENT_QUALITY_KEY.into(), format!("{q:.17}"));
        dialog.meta.insert(RATER_KEY.into(), rater.name().into());
        dialog
    }

    fn expert_pairs<R: Rng>(
        &self,
        rng: &mut R,
        prefix: &str,
        n: usize,
        heldout: &mut Vec<Dialog>,
    ) -> Vec<DialogPair> {
        let mut pairs = Vec::with_capacity(n);
        for i in 0..n {
            let (qa, qb) = loop {
                let qa = self.draw_quality(rng);
                let qb = self.draw_quality(rng);
                if (qa - qb).abs() >= self.config.expert_min_gap && qa != qb {
                    break (qa, qb);
                }
            };
            let a = self.dialog(rng, format!("{prefix}-{i:05}-a"), qa);
            let b = self.dialog(rng, format!("{prefix}-{i:05}-b"), qb);
            pairs.push(DialogPair::new(
                a.id.clone(),
                b.id.clone(),
                qa > qb,
                PairSource::Expert,
            ));
            heldout.push(a);
            heldout.push(b);
        }
        pairs
    }
}

/// Generates a reproducible corpus. Dev/test pairs use fresh held-out dialogs
/// and are labelled from latent quality.
pub fn synthesize(config: &SynthConfig, seed: u64) -> Result<CorpusSplit> {
    config.validate()?;
    let generator = Generator::new(config)?;

    let mut rng = seeded(derive(seed, 1));
    let train = (0..config.n_train)
        .map(|i| {
            let q = generator.draw_quality(&mut rng);
            generator.dialog(&mut rng, format!("train-{i:06}"), q)
        })
        .collect();

    let mut heldout = Vec::new();
    let mut rng = seeded(derive(seed, 2));
    let dev = generator.expert_pairs(&mut rng, "dev", config.n_dev_pairs, &mut heldout);
    let mut rng = seeded(derive(seed, 3));
    let test = generator.expert_pairs(&mut rng, "test", config.n_test_pairs, &mut heldout);

    Ok(CorpusSplit {
        train,
        heldout,
        dev,
        test,
    })
}

/// Fraction of each rating 1..=5 among rated dialogs.
pub fn rating_histogram(dialogs: &[Dialog]) -> [f64; 5] {
    let mut counts = [0usize; 5];
    let mut total = 0usize;
    for r in dialogs.iter().filter_map(|d| d.rating) {
        counts[(r - 1) as usize] += 1;
        total += 1;
    }
    let mut out = [0.0; 5];
    if total > 0 {
        for (o, c) in out.iter_mut().zip(counts) {
            *o = c as f64 / total as f64;
        }
    }
    out
}

/// Fraction of rated pairs whose rating order contradicts their label.
///
/// Pairs with equal ratings are skipped; returns `(disagreeing, compared)`.
pub fn rating_disagreement(corpus: &CorpusSplit, pairs: &[DialogPair]) -> Result<(usize, usize)> {
    let lookup = corpus.lookup();
    let mut disagree = 0;
    let mut compared = 0;
    for pair in pairs {
        let a = lookup.get(&pair.first_id)?;
        let b = lookup.get(&pair.second_id)?;
        let (Some(ra), Some(rb)) = (a.rating, b.rating) else {
            continue;
        };
        if ra == rb {
            continue;
        }
        compared += 1;
        if (ra > rb) != pair.label {
            disagree += 1;
        }
    }
    Ok((disagree, compared))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 200,
            n_dev_pairs: 30,
            n_test_pairs: 30,
            ..Default::default()
        }
    }

    #[test]
    fn corpus_is_valid_and_reproducible() {
        let a = synthesize(&small(), 5).unwrap();
        a.validate().unwrap();
        assert_eq!(a, synthesize(&small(), 5).unwrap());
        assert_ne!(a.train, synthesize(&small(), 6).unwrap().train);
        assert_eq!(a.train.len(), 200);
        assert_eq!(a.dev.len(), 30);
        assert_eq!(a.test.len(), 30);
        assert!(a.train.iter().all(|d| d.turns.len() == 24));
    }

    #[test]
    fn evaluation_dialogs_are_disjoint_from_training() {
        let c = synthesize(&small(), 1).unwrap();
        let train: HashSet<&str> = c.train.iter().map(|d| d.id.as_str()).collect();
        let mut dev_ids = HashSet::new();
        for p in &c.dev {
            assert!(!train.contains(p.first_id.as_str()));
            assert!(!train.contains(p.second_id.as_str()));
            dev_ids.insert(p.first_id.as_str());
            dev_ids.insert(p.second_id.as_str());
        }
        for p in &c.test {
            assert!(!dev_ids.contains(p.first_id.as_str()));
            assert!(!dev_ids.contains(p.second_id.as_str()));
        }
    }

    #[test]
    fn expert_labels_follow_latent_quality() {
        let c = synthesize(&small(), 2).unwrap();
        let lookup = c.lookup();
        for p in c.dev.iter().chain(&c.test) {
            let qa = lookup.get(&p.first_id).unwrap().latent_quality().unwrap();
            let qb = lookup.get(&p.second_id).unwrap().latent_quality().unwrap();
            assert_eq!(p.label, qa > qb);
        }
    }

    #[test]
    fn noiseless_ratings_are_monotone_in_quality() {
        let config = SynthConfig {
            noise: 0.0,
            ..small()
        };
        let c = synthesize(&config, 3).unwrap();
        let lookup = c.lookup();
        for p in c.dev.iter().chain(&c.test) {
            let (better, worse) = p.oriented();
            let better = lookup.get(better).unwrap();
            let worse = lookup.get(worse).unwrap();
            assert!(better.rating >= worse.rating);
        }
        let mut by_q: Vec<&Dialog> = c.train.iter().collect();
        by_q.sort_by(|a, b| a.latent_quality().partial_cmp(&b.latent_quality()).unwrap());
        assert!(by_q.windows(2).all(|w| w[0].rating <= w[1].rating));
    }

    #[test]
    fn rejects_degenerate_configs() {
        for config in [
            SynthConfig {
                n_train: 1,
                ..Default::default()
            },
            SynthConfig {
                lenient_prob: 1.5,
                ..Default::default()
            },
            SynthConfig {
                turns_per_dialog: 1,
                ..Default::default()
            },
        ] {
            assert!(matches!(synthesize(&config, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn topic_words_are_distinct() {
        let words: HashSet<String> = (0..200).map(topic_word).collect();
        assert_eq!(words.len(), 200);
    }
}
