use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CorpusSplit, Dialog, DialogPair, Turn};
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const HELDOUT_FILE: &str = "heldout.jsonl";
pub const DEV_FILE: &str = "dev_pairs.jsonl";
pub const TEST_FILE: &str = "test_pairs.jsonl";

// Ratings are read as wide integers so that out-of-range values surface as
// `InvalidRating` rather than as a parse failure.
#[derive(Deserialize)]
struct DialogRecord {
    id: String,
    turns: Vec<Turn>,
    rating: Option<i64>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

impl TryFrom<DialogRecord> for Dialog {
    type Error = Error;

    fn try_from(rec: DialogRecord) -> Result<Dialog> {
        let rating = match rec.rating {
            None => None,
            Some(r @ 1..=5) => Some(r as u8),
            Some(r) => {
                return Err(Error::InvalidRating {
                    id: rec.id,
                    rating: r,
                })
            }
        };
        let dialog = Dialog {
            id: rec.id,
            turns: rec.turns,
            rating,
            meta: rec.meta,
        };
        dialog.validate()?;
        Ok(dialog)
    }
}

/// Reads one JSON value per non-blank line, reporting 1-based line numbers on failure.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Writes one compact JSON value per LF-terminated line, via a temporary
/// file renamed into place.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for item in items {
            serde_json::to_writer(&mut w, item).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_dialogs(path: &Path) -> Result<Vec<Dialog>> {
    let records: Vec<DialogRecord> = read_jsonl(path)?;
    records.into_iter().map(Dialog::try_from).collect()
}

fn read_optional<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

/// Loads `train.jsonl`, `heldout.jsonl`, `dev_pairs.jsonl` and
/// `test_pairs.jsonl` from `dir`. Only the training file is mandatory.
pub fn load_corpus(dir: &Path) -> Result<CorpusSplit> {
    let train = read_dialogs(&dir.join(TRAIN_FILE))?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let heldout_path = dir.join(HELDOUT_FILE);
    let heldout = if heldout_path.exists() {
        read_dialogs(&heldout_path)?
    } else {
        Vec::new()
    };
    let dev: Vec<DialogPair> = read_optional(&dir.join(DEV_FILE))?;
    let test: Vec<DialogPair> = read_optional(&dir.join(TEST_FILE))?;
    let corpus = CorpusSplit {
        train,
        heldout,
        dev,
        test,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Writes the four corpus files into `dir`, creating it if needed.
pub fn save_corpus(corpus: &CorpusSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(TRAIN_FILE), &corpus.train)?;
    write_jsonl(&dir.join(HELDOUT_FILE), &corpus.heldout)?;
    write_jsonl(&dir.join(DEV_FILE), &corpus.dev)?;
    write_jsonl(&dir.join(TEST_FILE), &corpus.test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PairSource, Role};

    fn ten_turn(id: &str, rating: u8) -> Dialog {
        let turns = (0..10)
            .map(|i| {
                let role = if i % 2 == 0 { Role::System } else { Role::User };
                Turn::new(role, format!("utterance {i}"))
            })
            .collect();
        Dialog::new(id, turns, Some(rating))
    }

    #[test]
    fn empty_train_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TRAIN_FILE), "").unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "empty training corpus");
    }

    #[test]
    fn single_dialog_corpus_loads() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = CorpusSplit {
            train: vec![ten_turn("a", 5)],
            ..Default::default()
        };
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.train.len(), 1);
        assert_eq!(loaded.train[0].turns.len(), 10);
        assert_eq!(loaded.train[0].rating, Some(5));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let good = serde_json::to_string(&ten_turn("a", 3)).unwrap();
        fs::write(
            dir.path().join(TRAIN_FILE),
            format!("{good}\n{{\"id\": \"b\", \"turns\": [\n"),
        )
        .unwrap();
        match load_corpus(dir.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn out_of_range_rating_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for bad in [0, 6, -1, 300] {
            let line = format!(
                r#"{{"id":"a","turns":[{{"role":"user","text":"hi"}}],"rating":{bad},"meta":{{}}}}"#
            );
            fs::write(dir.path().join(TRAIN_FILE), line).unwrap();
            assert!(matches!(
                load_corpus(dir.path()),
                Err(Error::InvalidRating { rating, .. }) if rating == bad
            ));
        }
    }

    #[test]
    fn dangling_pair_reference_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = CorpusSplit {
            train: vec![ten_turn("a", 5), ten_turn("b", 1)],
            heldout: vec![],
            dev: vec![DialogPair::new("a", "zzz", true, PairSource::Expert)],
            test: vec![],
        };
        save_corpus(&corpus, dir.path()).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(Error::DanglingReference(id)) if id == "zzz"
        ));
    }

    #[test]
    fn dialog_keys_follow_the_documented_order() {
        let line = serde_json::to_string(&ten_turn("a", 2)).unwrap();
        let id = line.find("\"id\"").unwrap();
        let turns = line.find("\"turns\"").unwrap();
        let rating = line.find("\"rating\"").unwrap();
        let meta = line.find("\"meta\"").unwrap();
        assert!(id < turns && turns < rating && rating < meta);
        assert!(line.contains(r#"{"role":"system","text":"utterance 0"}"#));
    }

    #[test]
    fn missing_rating_round_trips_as_null() {
        let mut d = ten_turn("a", 1);
        d.rating = None;
        let line = serde_json::to_string(&d).unwrap();
        assert!(line.contains("\"rating\":null"));
        let back: Dialog = serde_json::from_str(&line).unwrap();
        assert_eq!(back, d);
    }
}
