//! Per-stage manifests forming a hash chain over the run's artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::canonical_json;

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Logical name: a work-dir relative path, or `inputs.<key>` for run inputs.
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Digest of the manifest of every stage that produced one of the inputs.
    pub upstream: BTreeMap<String, String>,
    pub created_at: u64,
}

impl Manifest {
    /// Hash of everything except the timestamp.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        v.as_object_mut().expect("object").remove("created_at");
        sha256_hex(canonical_json(&v).as_bytes())
    }

    pub fn output(&self, name: &str) -> Option<&FileHash> {
        self.outputs.iter().find(|f| f.name == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Write to a temporary sibling, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let n = TMP_COUNTER.fetch_add(1, Ordering::SeqCst);
    let file_name = path.file_name().and_then(|s| s.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{file_name}.{}.{n}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)
}

pub fn manifest_path(work_dir: &Path, stage: &str) -> PathBuf {
    work_dir.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

pub fn load(work_dir: &Path, stage: &str) -> Option<Manifest> {
    let bytes = fs::read(manifest_path(work_dir, stage)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

pub fn store(work_dir: &Path, m: &Manifest) -> std::io::Result<()> {
    let mut json = serde_json::to_string_pretty(m).expect("manifest serializes");
    json.push('\n');
    write_atomic(&manifest_path(work_dir, &m.stage), json.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        Manifest {
            stage: "filter".into(),
            config_hash: "c".into(),
            inputs: vec![FileHash {
                name: "datagen/pairs.jsonl".into(),
                sha256: "a".into(),
            }],
            outputs: vec![],
            upstream: BTreeMap::from([("datagen".into(), "d".into())]),
            created_at: 1,
        }
    }

    #[test]
    fn digest_ignores_timestamp_only() {
        let a = sample();
        let mut b = sample();
        b.created_at = 99;
        assert_eq!(a.digest(), b.digest());
        b.inputs[0].sha256 = "b".into();
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn atomic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        store(dir.path(), &sample()).unwrap();
        assert_eq!(load(dir.path(), "filter").unwrap(), sample());
        let names: Vec<_> = fs::read_dir(dir.path().join(MANIFEST_DIR)).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        assert_eq!(sha256_file(&manifest_path(dir.path(), "filter")).unwrap().len(), 64);
    }
}
