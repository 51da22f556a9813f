//! Run manifest: records the config hash, seed, tool version, and a content
//! hash for every artifact in the output directory. Timestamps live only
//! here, so artifact files themselves stay byte-reproducible.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch at manifest write time.
    pub written_at: u64,
    pub artifacts: Vec<ArtifactEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, std::io::Error> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Hashes every regular file in `dir` (except the manifest itself) and
/// rewrites the manifest. Entries are sorted by name for stable output.
pub fn write_manifest(
    dir: &Path,
    config_hash: &str,
    seed: u64,
) -> Result<Manifest, std::io::Error> {
    let mut artifacts = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_NAME {
            continue;
        }
        artifacts.push(ArtifactEntry {
            sha256: hash_file(&entry.path())?,
            name,
        });
    }
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash.to_string(),
        seed,
        written_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        artifacts,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, std::io::Error> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    toml::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}
