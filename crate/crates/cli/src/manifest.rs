//! Run manifests: command, config snapshot, seed, input hashes, output paths
//! and timings, written atomically next to the outputs. A stale manifest with
//! differing input hashes is reported before the run overwrites it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub fnv64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub precision: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, u128>,
}

/// FNV-1a over file bytes; cheap integrity signal, not cryptographic.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
    path: PathBuf,
}

impl ManifestBuilder {
    /// `out_dir` receives `<command>.manifest.json`. If a previous manifest
    /// exists there, its input hashes are compared and mismatches reported on
    /// stderr.
    pub fn start(
        command: &str,
        seed: u64,
        precision: &str,
        config: BTreeMap<String, String>,
        out_dir: &Path,
    ) -> Self {
        let path = out_dir.join(format!("{command}.manifest.json"));
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                seed,
                precision: precision.to_string(),
                config,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings_ms: BTreeMap::new(),
            },
            started: Instant::now(),
            path,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        self.manifest.inputs.push(InputHash {
            path: path.display().to_string(),
            fnv64: hash_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    /// Compare recorded hashes of a previous run against current inputs.
    pub fn report_stale_inputs(&self) {
        let Ok(text) = std::fs::read_to_string(&self.path) else {
            return;
        };
        let Ok(previous) = serde_json::from_str::<RunManifest>(&text) else {
            return;
        };
        for old in &previous.inputs {
            let matching = self.manifest.inputs.iter().find(|i| i.path == old.path);
            if let Some(current) = matching {
                if current.fnv64 != old.fnv64 {
                    eprintln!(
                        "note: input {} changed since the previous run (hash {} -> {})",
                        old.path, old.fnv64, current.fnv64
                    );
                }
            }
        }
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.manifest
            .timings_ms
            .insert("total".to_string(), self.started.elapsed().as_millis());
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        write_atomic(&self.path, json.as_bytes())
    }
}

/// Write via a temp file in the same directory plus rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp_write");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
