//! Run manifests written next to every command's outputs.

use std::fs;
use std::hash::Hasher;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fnv::FnvHasher;
use serde::Serialize;
use serde_json::Value;

/// FNV-1a 64-bit digest, hex encoded.
pub fn digest(bytes: &[u8]) -> String {
    let mut h = FnvHasher::default();
    h.write(bytes);
    format!("{:016x}", h.finish())
}

/// Seconds since the epoch; `SOURCE_DATE_EPOCH` wins when set so that
/// reproducible builds of an output directory are byte-identical.
pub fn now_unix() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
    {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub fnv1a64: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timestamps {
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timestamps: Timestamps,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], seed: u64, config: Value) -> Self {
        let t = now_unix();
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            argv: argv.to_vec(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamps: Timestamps {
                started_unix: t,
                finished_unix: t,
            },
        }
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            fnv1a64: digest(&bytes),
        });
        Ok(())
    }

    /// Records every file in `dir` except the manifest itself, sorted by name.
    pub fn add_outputs_in(&mut self, dir: &Path) -> std::io::Result<()> {
        let mut names: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != "manifest.json")
            .collect();
        names.sort();
        for name in names {
            let bytes = fs::read(dir.join(&name))?;
            self.outputs.push(FileDigest {
                path: name,
                fnv1a64: digest(&bytes),
            });
        }
        Ok(())
    }

    pub fn write(mut self, dir: &Path) -> std::io::Result<()> {
        self.timestamps.finished_unix = now_unix().max(self.timestamps.started_unix);
        let mut text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)
    }
}
