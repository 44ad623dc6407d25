//! Rated dialogs, comparison pairs, and the train/dev/test split.
//!
//! A [`Dialog`] is an alternating sequence of system and user turns with an
//! optional self-reported 1..=5 rating. Expert judgements and derived
//! training signal are both stored as oriented [`DialogPair`]s.

mod io;
mod perturb;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_corpus, read_jsonl, save_corpus, write_jsonl, DEV_FILE, HELDOUT_FILE, TEST_FILE,
    TRAIN_FILE,
};
pub use perturb::{make_stage1_pairs, perturb, Stage1Pairs};
pub use synth::{
    rating_disagreement, rating_histogram, synthesize, SynthConfig, TARGET_RATING_FRACTIONS,
};

/// Meta key under which synthetic dialogs record their hidden quality.
pub const LATENT_QUALITY_KEY: &str = "latent_quality";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::System => Role::User,
            Role::User => Role::System,
        }
    }

    /// Prefix used when hashing tokens, so the same word spoken by different
    /// roles lands in different buckets.
    pub fn tag(self) -> &'static str {
        match self {
            Role::System => "System",
            Role::User => "User",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Turn {
            role,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    pub turns: Vec<Turn>,
    pub rating: Option<u8>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Dialog {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>, rating: Option<u8>) -> Self {
        Dialog {
            id: id.into(),
            turns,
            rating,
            meta: BTreeMap::new(),
        }
    }

    /// Checks non-empty alternating turns with non-blank text and a rating in 1..=5.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidDialog {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.turns.is_empty() {
            return Err(invalid("no turns"));
        }
        for (i, pair) in self.turns.windows(2).enumerate() {
            if pair[0].role == pair[1].role {
                return Err(invalid(&format!("turns {} and {} share a role", i, i + 1)));
            }
        }
        if let Some(i) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(invalid(&format!("turn {i} has blank text")));
        }
        if let Some(r) = self.rating {
            if !(1..=5).contains(&r) {
                return Err(Error::InvalidRating {
                    id: self.id.clone(),
                    rating: r as i64,
                });
            }
        }
        Ok(())
    }

    /// Hidden quality recorded by [`synthesize`], if any.
    pub fn latent_quality(&self) -> Option<f64> {
        self.meta.get(LATENT_QUALITY_KEY)?.parse().ok()
    }

    pub fn turn_indices(&self, role: Role) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.role == role)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Expert,
    SmoothedDerived,
    RawDerived,
    Perturbation,
}

/// Binary comparison: `label == true` means the first dialog is better.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogPair {
    pub first_id: String,
    pub second_id: String,
    #[serde(with = "label_as_int")]
    pub label: bool,
    pub source: PairSource,
}

impl DialogPair {
    pub fn new(
        first_id: impl Into<String>,
        second_id: impl Into<String>,
        label: bool,
        source: PairSource,
    ) -> Self {
        DialogPair {
            first_id: first_id.into(),
            second_id: second_id.into(),
            label,
            source,
        }
    }

    /// `(better, worse)` ids.
    pub fn oriented(&self) -> (&str, &str) {
        if self.label {
            (&self.first_id, &self.second_id)
        } else {
            (&self.second_id, &self.first_id)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_id == self.second_id {
            return Err(Error::InvalidPair {
                first: self.first_id.clone(),
                second: self.second_id.clone(),
                reason: "a dialog cannot be compared with itself".into(),
            });
        }
        Ok(())
    }
}

mod label_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(label: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*label))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!(
                "label must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// Rated training dialogs plus expert-labelled dev and test pairs.
///
/// `heldout` holds the dialogs referenced by dev/test pairs that are not part
/// of the training set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusSplit {
    pub train: Vec<Dialog>,
    pub heldout: Vec<Dialog>,
    pub dev: Vec<DialogPair>,
    pub test: Vec<DialogPair>,
}

impl CorpusSplit {
    /// Validates dialogs, unique ids, and that every pair resolves.
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for dialog in self.train.iter().chain(&self.heldout) {
            dialog.validate()?;
            if !seen.insert(dialog.id.as_str()) {
                return Err(Error::InvalidDialog {
                    id: dialog.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
        }
        for pair in self.dev.iter().chain(&self.test) {
            pair.validate()?;
            for id in [&pair.first_id, &pair.second_id] {
                if !seen.contains(id.as_str()) {
                    return Err(Error::DanglingReference(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn lookup(&self) -> DialogLookup<'_> {
        DialogLookup::new(self.train.iter().chain(&self.heldout))
    }
}

/// Borrowed id → dialog map.
#[derive(Debug, Clone, Default)]
pub struct DialogLookup<'a> {
    by_id: HashMap<&'a str, &'a Dialog>,
}

impl<'a> DialogLookup<'a> {
    pub fn new(dialogs: impl IntoIterator<Item = &'a Dialog>) -> Self {
        DialogLookup {
            by_id: dialogs.into_iter().map(|d| (d.id.as_str(), d)).collect(),
        }
    }

    pub fn extend(&mut self, dialogs: impl IntoIterator<Item = &'a Dialog>) {
        self.by_id
            .extend(dialogs.into_iter().map(|d| (d.id.as_str(), d)));
    }

    pub fn get(&self, id: &str) -> Result<&'a Dialog> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::DanglingReference(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialog(roles: &[Role]) -> Dialog {
        let turns = roles.iter().map(|&r| Turn::new(r, "hello there")).collect();
        Dialog::new("d", turns, Some(3))
    }

    #[test]
    fn alternation_is_enforced() {
        assert!(dialog(&[Role::User, Role::System, Role::User])
            .validate()
            .is_ok());
        assert!(dialog(&[Role::System, Role::System]).validate().is_err());
        assert!(dialog(&[]).validate().is_err());
    }

    #[test]
    fn blank_text_and_bad_ratings_are_rejected() {
        let mut d = dialog(&[Role::System, Role::User]);
        d.turns[1].text = "  \t".into();
        assert!(d.validate().is_err());

        let mut d = dialog(&[Role::System]);
        d.rating = Some(6);
        assert!(matches!(d.validate(), Err(Error::InvalidRating { .. })));
        d.rating = Some(0);
        assert!(d.validate().is_err());
    }

    #[test]
    fn self_pairs_are_rejected() {
        let p = DialogPair::new("a", "a", true, PairSource::Expert);
        assert!(p.validate().is_err());
    }

    #[test]
    fn oriented_puts_the_better_dialog_first() {
        let p = DialogPair::new("a", "b", false, PairSource::Expert);
        assert_eq!(p.oriented(), ("b", "a"));
    }

    #[test]
    fn label_serializes_as_integer() {
        let p = DialogPair::new("a", "b", true, PairSource::SmoothedDerived);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(
            json,
            r#"{"first_id":"a","second_id":"b","label":1,"source":"smoothed_derived"}"#
        );
        let bad = r#"{"first_id":"a","second_id":"b","label":2,"source":"expert"}"#;
        assert!(serde_json::from_str::<DialogPair>(bad).is_err());
    }
}
