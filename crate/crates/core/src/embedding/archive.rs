//! Embedding archive: a directory holding `manifest.json` and `payload.f32`.
//!
//! The payload is the `n_samples x dim` table in row-major order, each value
//! a little-endian IEEE-754 binary32, no header or padding. The manifest's
//! `checksum` is `sha256:` followed by the lowercase hex digest of the
//! payload bytes.
//!
//! Archives are written into a sibling `*.partial` directory and renamed
//! into place once complete, so a reader never observes a half-written one.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Aggregation, EmbeddingMatrix, Source};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "payload.f32";
const PENDING_FILE: &str = "pending.json";
const FORMAT: &str = "embedding-archive/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    #[serde(default = "format_tag")]
    pub format: String,
    pub dataset: String,
    pub n_samples: usize,
    pub dim: usize,
    pub model_id: String,
    #[serde(default)]
    pub layer: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Column blocks in order; may be omitted for single-source tables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<Source>,
    pub checksum: String,
}

fn format_tag() -> String {
    FORMAT.to_owned()
}

impl ArchiveManifest {
    fn for_matrix(m: &EmbeddingMatrix, checksum: String) -> Self {
        Self {
            format: format_tag(),
            dataset: m.dataset().to_owned(),
            n_samples: m.n_samples(),
            dim: m.dim(),
            model_id: m.model_id(),
            layer: m.layer(),
            aggregation: m.aggregation(),
            sources: m.sources().to_vec(),
            checksum,
        }
    }

    fn resolved_sources(&self) -> Vec<Source> {
        if self.sources.is_empty() {
            vec![Source {
                model_id: self.model_id.clone(),
                layer: self.layer,
                aggregation: self.aggregation,
                channels: 1,
                channel_dim: self.dim,
            }]
        } else {
            self.sources.clone()
        }
    }
}

pub(crate) fn checksum(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(7 + 64);
    out.push_str("sha256:");
    for b in digest.iter() {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn encode(values: &Array2<f32>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn partial_dir(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    dir.with_file_name(name)
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> Error {
    Error::io(format!("{what} {}", path.display()), e)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(format!("encoding {}", path.display()), e))?;
    let mut f = File::create(path).map_err(|e| io_err("creating", path, e))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .and_then(|_| f.sync_all())
        .map_err(|e| io_err("writing", path, e))
}

fn commit(partial: &Path, dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io_err("replacing", dir, e))?;
    }
    fs::rename(partial, dir).map_err(|e| io_err("finalizing", dir, e))
}

pub fn write_archive(m: &EmbeddingMatrix, dir: impl AsRef<Path>) -> Result<ArchiveManifest> {
    let dir = dir.as_ref();
    let partial = partial_dir(dir);
    if partial.exists() {
        fs::remove_dir_all(&partial).map_err(|e| io_err("clearing", &partial, e))?;
    }
    fs::create_dir_all(&partial).map_err(|e| io_err("creating", &partial, e))?;
    let bytes = encode(m.values());
    let manifest = ArchiveManifest::for_matrix(m, checksum(&bytes));
    let payload = partial.join(PAYLOAD_FILE);
    let mut f = File::create(&payload).map_err(|e| io_err("creating", &payload, e))?;
    f.write_all(&bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| io_err("writing", &payload, e))?;
    write_json(&partial.join(MANIFEST_FILE), &manifest)?;
    commit(&partial, dir)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<ArchiveManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err("reading", &path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))
}

pub fn read_archive(dir: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let path = dir.join(PAYLOAD_FILE);
    let mut bytes = Vec::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err("reading", &path, e))?;
    let expected_len = manifest.n_samples * manifest.dim * 4;
    if bytes.len() != expected_len {
        return Err(Error::Format {
            path,
            message: format!(
                "payload has {} bytes, manifest implies {expected_len}",
                bytes.len()
            ),
        });
    }
    let found = checksum(&bytes);
    if found != manifest.checksum {
        return Err(Error::Integrity {
            path: dir.to_path_buf(),
            expected: manifest.checksum,
            found,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let values = Array2::from_shape_vec((manifest.n_samples, manifest.dim), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let sources = manifest.resolved_sources();
    EmbeddingMatrix::new(values, manifest.dataset, sources)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    dataset: String,
    n_samples: usize,
    source: Source,
}

/// Appends rows one at a time and survives interruption: reopening with the
/// same parameters resumes after the last complete row.
#[derive(Debug)]
pub struct ResumableWriter {
    dir: PathBuf,
    partial: PathBuf,
    pending: Pending,
    file: File,
    completed: usize,
}

impl ResumableWriter {
    pub fn open(
        dir: impl AsRef<Path>,
        dataset: impl Into<String>,
        n_samples: usize,
        source: Source,
    ) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let partial = partial_dir(&dir);
        let pending = Pending {
            dataset: dataset.into(),
            n_samples,
            source,
        };
        let meta_path = partial.join(PENDING_FILE);
        let resumable = fs::read_to_string(&meta_path)
            .ok()
            .and_then(|t| serde_json::from_str::<Pending>(&t).ok())
            .is_some_and(|p| p == pending);
        if !resumable {
            if partial.exists() {
                fs::remove_dir_all(&partial).map_err(|e| io_err("clearing", &partial, e))?;
            }
            fs::create_dir_all(&partial).map_err(|e| io_err("creating", &partial, e))?;
            write_json(&meta_path, &pending)?;
        }
        let payload = partial.join(PAYLOAD_FILE);
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(&payload)
            .map_err(|e| io_err("opening", &payload, e))?;
        let row_bytes = (pending.source.dim() * 4) as u64;
        let len = file.metadata().map_err(|e| io_err("inspecting", &payload, e))?.len();
        let completed = if row_bytes == 0 { 0 } else { (len / row_bytes) as usize }.min(n_samples);
        // drop a torn trailing row
        file.set_len(completed as u64 * row_bytes)
            .map_err(|e| io_err("truncating", &payload, e))?;
        let mut w = Self {
            dir,
            partial,
            pending,
            file,
            completed,
        };
        use std::io::Seek;
        w.file
            .seek(std::io::SeekFrom::End(0))
            .map_err(|e| io_err("seeking", &w.partial, e))?;
        Ok(w)
    }

    /// Rows already on disk.
    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn append(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.pending.source.dim() {
            return Err(Error::Shape(format!(
                "row has {} values, archive rows have {}",
                row.len(),
                self.pending.source.dim()
            )));
        }
        if self.completed >= self.pending.n_samples {
            return Err(Error::Shape("archive already holds every row".into()));
        }
        let mut bytes = Vec::with_capacity(row.len() * 4);
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.file
            .write_all(&bytes)
            .and_then(|_| self.file.flush())
            .map_err(|e| io_err("appending to", &self.partial, e))?;
        self.completed += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<ArchiveManifest> {
        if self.completed != self.pending.n_samples {
            return Err(Error::Shape(format!(
                "archive incomplete: {} of {} rows",
                self.completed, self.pending.n_samples
            )));
        }
        self.file
            .sync_all()
            .map_err(|e| io_err("syncing", &self.partial, e))?;
        let payload = self.partial.join(PAYLOAD_FILE);
        let bytes = fs::read(&payload).map_err(|e| io_err("reading", &payload, e))?;
        let s = &self.pending.source;
        let manifest = ArchiveManifest {
            format: format_tag(),
            dataset: self.pending.dataset.clone(),
            n_samples: self.pending.n_samples,
            dim: s.dim(),
            model_id: s.model_id.clone(),
            layer: s.layer,
            aggregation: s.aggregation,
            sources: vec![s.clone()],
            checksum: checksum(&bytes),
        };
        write_json(&self.partial.join(MANIFEST_FILE), &manifest)?;
        let _ = fs::remove_file(self.partial.join(PENDING_FILE));
        commit(&self.partial, &self.dir)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(dim: usize) -> Source {
        Source {
            model_id: "m".into(),
            layer: 2,
            aggregation: Aggregation::MeanAll,
            channels: 1,
            channel_dim: dim,
        }
    }

    fn matrix() -> EmbeddingMatrix {
        let values = Array2::from_shape_fn((3, 4), |(i, j)| (i as f32 - 1.5) * 0.1 + j as f32 * 1e-7);
        EmbeddingMatrix::new(values, "ds", vec![source(4)]).unwrap()
    }

    #[test]
    fn round_trip_and_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("arch");
        let m = matrix();
        let manifest = write_archive(&m, &dir).unwrap();
        assert_eq!(manifest.n_samples, 3);
        assert_eq!(manifest.dim, 4);
        let bytes = fs::read(dir.join(PAYLOAD_FILE)).unwrap();
        assert_eq!(bytes.len(), 3 * 4 * 4);
        assert_eq!(&bytes[..4], &m.values()[[0, 0]].to_le_bytes());
        let back = read_archive(&dir).unwrap();
        assert_eq!(back, m);
        assert!(!partial_dir(&dir).exists());
    }

    #[test]
    fn corruption_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("arch");
        write_archive(&matrix(), &dir).unwrap();
        let p = dir.join(PAYLOAD_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[5] ^= 0x01;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_archive(&dir), Err(Error::Integrity { .. })));
    }

    #[test]
    fn truncated_payload_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("arch");
        write_archive(&matrix(), &dir).unwrap();
        let p = dir.join(PAYLOAD_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_archive(&dir), Err(Error::Format { .. })));
    }

    #[test]
    fn third_party_manifest_without_sources() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("tsfm");
        fs::create_dir_all(&dir).unwrap();
        let payload: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fs::write(dir.join(PAYLOAD_FILE), &payload).unwrap();
        let manifest = format!(
            r#"{{"dataset": "ECG200", "n_samples": 2, "dim": 2, "model_id": "mantis", "checksum": "{}"}}"#,
            checksum(&payload)
        );
        fs::write(dir.join(MANIFEST_FILE), manifest).unwrap();
        let m = read_archive(&dir).unwrap();
        assert_eq!(m.model_id(), "mantis");
        assert_eq!(m.values()[[1, 0]], 3.0);
    }

    #[test]
    fn resumable_writer_continues() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("res");
        {
            let mut w = ResumableWriter::open(&dir, "ds", 3, source(2)).unwrap();
            assert_eq!(w.completed(), 0);
            w.append(&[1.0, 2.0]).unwrap();
        }
        // torn write of half a row
        let payload = partial_dir(&dir).join(PAYLOAD_FILE);
        let mut f = OpenOptions::new().append(true).open(&payload).unwrap();
        f.write_all(&[0, 0, 0]).unwrap();
        drop(f);

        let mut w = ResumableWriter::open(&dir, "ds", 3, source(2)).unwrap();
        assert_eq!(w.completed(), 1);
        w.append(&[3.0, 4.0]).unwrap();
        w.append(&[5.0, 6.0]).unwrap();
        assert!(w.append(&[7.0, 8.0]).is_err());
        w.finish().unwrap();
        let m = read_archive(&dir).unwrap();
        assert_eq!(m.values().as_slice().unwrap(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn resumable_writer_restarts_on_changed_parameters() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("res");
        let mut w = ResumableWriter::open(&dir, "ds", 3, source(2)).unwrap();
        w.append(&[1.0, 2.0]).unwrap();
        drop(w);
        let w = ResumableWriter::open(&dir, "ds", 4, source(2)).unwrap();
        assert_eq!(w.completed(), 0);
    }
}
