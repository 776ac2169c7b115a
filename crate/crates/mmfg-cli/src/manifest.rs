//! Output-directory manifest with content digests.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
    pub wall_clock_seconds: f64,
    pub version: &'static str,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collect every emitted file (relative paths under `out_dir`), digest it,
/// and write `manifest.json`. The manifest itself is the only file not
/// listed, and the only place wall-clock time appears, so reruns with the
/// same seed produce identical digests.
pub fn write_manifest(
    out_dir: &Path,
    emitted: &[PathBuf],
    wall_clock_seconds: f64,
) -> std::io::Result<()> {
    let mut files = Vec::with_capacity(emitted.len());
    for rel in emitted {
        let full = out_dir.join(rel);
        let bytes = std::fs::read(&full)?;
        files.push(ManifestEntry {
            path: rel.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        files,
        wall_clock_seconds,
        version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join("manifest.json"), json)
}
