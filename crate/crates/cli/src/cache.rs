//! Content-addressed stage cache.
//!
//! A stage's key is a SHA-256 over the tool version, the stage name, the
//! stage's configuration section and the bytes of every input file. After a
//! stage runs, `cache/<stage>.toml` records the key and a digest of every
//! output. A later run with the same key skips the stage if all recorded
//! outputs still exist with the same digests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CACHE_DIR: &str = "cache";

/// Incremental cache-key builder. Every field is length-prefixed.
pub struct KeyBuilder {
    hasher: Sha256,
}

impl Default for KeyBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl KeyBuilder {
    pub fn new() -> Self {
        let mut k = Self { hasher: Sha256::new() };
        k.text("version", env!("CARGO_PKG_VERSION"));
        k
    }

    fn field(&mut self, bytes: &[u8]) {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }

    pub fn text(&mut self, label: &str, value: &str) {
        self.field(label.as_bytes());
        self.field(value.as_bytes());
    }

    /// Hashes a file's project-relative name and content.
    pub fn file(&mut self, root: &Path, path: &Path) -> std::io::Result<()> {
        self.field(relative(root, path).as_bytes());
        self.field(file_digest(path)?.as_bytes());
        Ok(())
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `path` relative to `root` with `/` separators.
pub fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub stage: String,
    pub key: String,
    /// Project-relative output path to content digest.
    pub outputs: BTreeMap<String, String>,
}

fn record_path(root: &Path, stage: &str) -> PathBuf {
    root.join(CACHE_DIR).join(format!("{stage}.toml"))
}

/// True when the recorded key matches and every recorded output is intact.
pub fn is_fresh(root: &Path, stage: &str, key: &str) -> bool {
    let Ok(text) = fs::read_to_string(record_path(root, stage)) else {
        return false;
    };
    let Ok(record) = toml::from_str::<CacheRecord>(&text) else {
        return false;
    };
    record.stage == stage
        && record.key == key
        && record
            .outputs
            .iter()
            .all(|(rel, digest)| file_digest(&root.join(rel)).is_ok_and(|d| &d == digest))
}

pub fn store(root: &Path, stage: &str, key: &str, outputs: &[PathBuf]) -> std::io::Result<()> {
    let mut map = BTreeMap::new();
    for p in outputs {
        map.insert(relative(root, p), file_digest(p)?);
    }
    let record = CacheRecord {
        stage: stage.to_string(),
        key: key.to_string(),
        outputs: map,
    };
    fs::create_dir_all(root.join(CACHE_DIR))?;
    fs::write(record_path(root, stage), toml::to_string(&record).expect("record serializes"))
}

/// Drops the record so the stage reruns next time.
pub fn invalidate(root: &Path, stage: &str) {
    let _ = fs::remove_file(record_path(root, stage));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_depend_on_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let a = root.join("a.bin");
        fs::write(&a, b"one").unwrap();
        let key = |label: &str| {
            let mut k = KeyBuilder::new();
            k.text("stage", label);
            k.file(root, &a).unwrap();
            k.finish()
        };
        let k1 = key("mask");
        assert_eq!(k1, key("mask"));
        assert_ne!(k1, key("carve"));
        fs::write(&a, b"two").unwrap();
        assert_ne!(k1, key("mask"));
        // Length prefixes keep adjacent fields from sliding into each other.
        let mut x = KeyBuilder::new();
        x.text("ab", "c");
        let mut y = KeyBuilder::new();
        y.text("a", "bc");
        assert_ne!(x.finish(), y.finish());
    }

    #[test]
    fn freshness_tracks_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let out = root.join("work").join("o.txt");
        fs::create_dir_all(out.parent().unwrap()).unwrap();
        fs::write(&out, b"result").unwrap();
        assert!(!is_fresh(root, "mesh", "k"));
        store(root, "mesh", "k", std::slice::from_ref(&out)).unwrap();
        assert!(is_fresh(root, "mesh", "k"));
        assert!(!is_fresh(root, "mesh", "other"));
        fs::write(&out, b"tampered").unwrap();
        assert!(!is_fresh(root, "mesh", "k"));
        fs::write(&out, b"result").unwrap();
        assert!(is_fresh(root, "mesh", "k"));
        fs::remove_file(&out).unwrap();
        assert!(!is_fresh(root, "mesh", "k"));
        assert_eq!(relative(root, &out), "work/o.txt");
    }
}
