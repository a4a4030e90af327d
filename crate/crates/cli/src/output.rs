//! Output tree handling: atomic writes, digests and dependency-checked reads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::PipelineError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial report.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// One stage's view of the output directory. Every read and write is
/// recorded with its digest for the run manifest.
pub struct StageIo<'a> {
    root: &'a Path,
    stage: &'static str,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl<'a> StageIo<'a> {
    pub fn new(root: &'a Path, stage: &'static str) -> Self {
        StageIo {
            root,
            stage,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Clears the stage's own directory so stale reports never survive a
    /// rerun.
    pub fn reset_dir(&self, rel: &str) -> Result<(), PipelineError> {
        let dir = self.root.join(rel);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| PipelineError::Io {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Reads a prior stage's output; absence is a dependency error.
    pub fn read(&mut self, rel: &str) -> Result<Vec<u8>, PipelineError> {
        let path = self.root.join(rel);
        let bytes = std::fs::read(&path).map_err(|_| PipelineError::StageDependencyMissing {
            stage: self.stage,
            missing: rel.to_string(),
        })?;
        self.inputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_string(&mut self, rel: &str) -> Result<String, PipelineError> {
        let bytes = self.read(rel)?;
        String::from_utf8(bytes).map_err(|e| PipelineError::Io {
            path: rel.to_string(),
            message: e.to_string(),
        })
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.root.join(rel).is_file()
    }

    /// Records an input that lives outside the output tree.
    pub fn record_external(&mut self, label: String, digest: String) {
        self.inputs.insert(label, digest);
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&mut self, rel: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::Io {
            path: rel.to_string(),
            message: e.to_string(),
        })?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }
}

/// Serializes rows with a header through the csv crate.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn csv_quotes_when_needed() {
        let b = csv_bytes(&["a", "b"], [vec!["x,y".to_string(), "z".to_string()]]);
        assert_eq!(String::from_utf8(b).unwrap(), "a,b\n\"x,y\",z\n");
    }
}
