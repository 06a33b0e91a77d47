//! Run manifests: what went in, what came out, under which config.

use std::path::{Path, PathBuf};
use std::time::Duration;

use phenoclass::config::RunConfig;
use phenoclass::nn::params::write_atomic;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

/// Files a command read and wrote.
#[derive(Debug, Default)]
pub struct Record {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: String,
    config_sha256: String,
    seed: u64,
    seeds: &'a [u64],
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
    wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn entry(path: &Path) -> Result<FileEntry, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
    Ok(FileEntry {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Writes `<out>/<command>.config.toml` and `<out>/<command>.manifest.json`.
pub fn write(command: &str, cfg: &RunConfig, record: &Record, elapsed: Duration) -> Result<(), Failure> {
    let out = Path::new(&cfg.paths.out);
    std::fs::create_dir_all(out).map_err(|e| Failure::new("io", format!("{}: {e}", out.display())))?;
    let toml = cfg.to_toml();
    let config_path = out.join(format!("{command}.config.toml"));
    write_atomic(&config_path, toml.as_bytes())?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: config_path.display().to_string(),
        config_sha256: sha256_hex(toml.as_bytes()),
        seed: cfg.seed,
        seeds: &cfg.seeds,
        inputs: record.inputs.iter().map(|p| entry(p)).collect::<Result<_, _>>()?,
        outputs: record.outputs.iter().map(|p| entry(p)).collect::<Result<_, _>>()?,
        wall_time_s: elapsed.as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::new("io", e.to_string()))?;
    write_atomic(&out.join(format!("{command}.manifest.json")), json.as_bytes())?;
    Ok(())
}
