use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;
use subfair_core::train::hex_sha256;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// One per run, written last into the output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Value,
    /// SHA-256 of `config` with keys sorted.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: Option<usize>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
}

/// Collects inputs and outputs while a command runs.
pub struct Run {
    command: String,
    out: PathBuf,
    start: Instant,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
    pub threads: Option<usize>,
}

impl Run {
    /// Creates `out`, refusing a non-empty directory unless `force`.
    pub fn start(command: &str, out: &Path, force: bool) -> Result<Self> {
        if out.exists() {
            let non_empty = std::fs::read_dir(out)
                .with_context(|| format!("reading {}", out.display()))?
                .next()
                .is_some();
            if non_empty && !force {
                bail!(
                    "output directory {} already exists and is not empty; pass --force to overwrite",
                    out.display()
                );
            }
        }
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            command: command.into(),
            out: out.to_path_buf(),
            start: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            threads: None,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: hex_sha256(&bytes),
        });
        Ok(())
    }

    /// Path of an output file inside the run directory, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.output(name);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn finish<C: Serialize>(self, config: &C, seed: Option<u64>) -> Result<PathBuf> {
        // serde_json::Value keeps object keys sorted, so this is canonical
        let config = serde_json::to_value(config)?;
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().skip(1).collect(),
            config_hash: hex_sha256(config.to_string().as_bytes()),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            threads: self.threads,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_seconds: self.start.elapsed().as_secs_f64(),
        };
        let p = self.out.join("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}
