use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        Ok(Self { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Written next to every artifact a command produces.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub versions: Versions,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub sser: &'static str,
    pub model_format: u8,
    pub quantized_format: u8,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            sser: env!("CARGO_PKG_VERSION"),
            model_format: sser::rnn_core::MODEL_VERSION,
            quantized_format: sser::quantize::QUANT_VERSION,
        }
    }
}

pub struct Stopwatch {
    started: SystemTime,
    clock: std::time::Instant,
}

impl Stopwatch {
    pub fn start() -> Self {
        Self { started: SystemTime::now(), clock: std::time::Instant::now() }
    }

    pub fn finish<C: Serialize>(
        &self,
        command: &str,
        config: &C,
        seeds: Vec<u64>,
        inputs: &[&Path],
        outputs: &[PathBuf],
    ) -> std::io::Result<RunManifest> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).map_err(std::io::Error::other)?,
            seeds,
            inputs: inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?,
            outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?,
            versions: Versions::default(),
            started_unix_s: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_s: self.clock.elapsed().as_secs_f64(),
        })
    }
}

/// `out.ext` gets `out.ext.manifest.json`; a directory gets `dir/manifest.json`.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("manifest.json")
    } else {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

pub fn write_manifest(artifact: &Path, m: &RunManifest) -> std::io::Result<PathBuf> {
    let path = manifest_path(artifact);
    std::fs::write(&path, serde_json::to_vec_pretty(m).map_err(std::io::Error::other)?)?;
    Ok(path)
}
