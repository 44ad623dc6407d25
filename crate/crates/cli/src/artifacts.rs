use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::exit::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha1_hex(bytes: &[u8]) -> String {
    let digest = Sha1::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git's object id for a blob: sha1 over `"blob <len>\0"` and the content.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha1::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_hash(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(blob_hash(&bytes))
}

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))
}

/// Writes `bytes` next to `path` and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", path.display()));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Provenance of one checkpoint: its own hash and the hashes of what it was
/// trained from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub sha1: String,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub checkpoints: BTreeMap<String, Entry>,
}

impl Manifest {
    /// The manifest in `dir`, or an empty one for `config_hash` if there is
    /// none or it was written under a different configuration.
    pub fn load(dir: &Path, config_hash: &str) -> Result<Manifest, Failure> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            let manifest: Manifest = read_json(&path)?;
            if manifest.config_hash == config_hash {
                return Ok(manifest);
            }
        }
        Ok(Manifest {
            config_hash: config_hash.to_string(),
            checkpoints: BTreeMap::new(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), Failure> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    /// Whether `name` in `dir` is on record with exactly these inputs and
    /// still has the recorded content.
    pub fn is_current(
        &self,
        dir: &Path,
        name: &str,
        inputs: &BTreeMap<String, String>,
    ) -> Result<bool, Failure> {
        let Some(entry) = self.checkpoints.get(name) else {
            return Ok(false);
        };
        let path = dir.join(name);
        if entry.inputs != *inputs || !path.exists() {
            return Ok(false);
        }
        Ok(file_hash(&path)? == entry.sha1)
    }

    pub fn record(
        &mut self,
        dir: &Path,
        name: &str,
        inputs: BTreeMap<String, String>,
    ) -> Result<(), Failure> {
        let sha1 = file_hash(&dir.join(name))?;
        self.checkpoints
            .insert(name.to_string(), Entry { sha1, inputs });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `git hash-object` of an empty file and of "hello\n".
        assert_eq!(blob_hash(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
        assert_eq!(
            blob_hash(b"hello\n"),
            "ce013625030ba8dba906f756967f9e9ca394464a"
        );
    }

    #[test]
    fn plain_sha1() {
        assert_eq!(sha1_hex(b"abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
    }

    #[test]
    fn manifest_tracks_content_and_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stage1.ckpt");
        fs::write(&path, b"one").unwrap();
        let inputs = BTreeMap::from([("train.jsonl".to_string(), "abc".to_string())]);
        let mut m = Manifest::load(dir.path(), "h").unwrap();
        assert!(!m.is_current(dir.path(), "stage1.ckpt", &inputs).unwrap());
        m.record(dir.path(), "stage1.ckpt", inputs.clone()).unwrap();
        m.save(dir.path()).unwrap();

        let m = Manifest::load(dir.path(), "h").unwrap();
        assert!(m.is_current(dir.path(), "stage1.ckpt", &inputs).unwrap());
        let other = BTreeMap::from([("train.jsonl".to_string(), "abd".to_string())]);
        assert!(!m.is_current(dir.path(), "stage1.ckpt", &other).unwrap());
        fs::write(&path, b"two").unwrap();
        assert!(!m.is_current(dir.path(), "stage1.ckpt", &inputs).unwrap());

        assert!(Manifest::load(dir.path(), "other")
            .unwrap()
            .checkpoints
            .is_empty());
    }
}
