//! Per-run output directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&data)),
        bytes: data.len() as u64,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    created: String,
    config_hash: &'a str,
    seeds: Seeds,
    config: &'a RunConfig,
    inputs: &'a [FileDigest],
    outputs: Vec<FileDigest>,
    results: &'a serde_json::Value,
}

#[derive(Serialize)]
struct Seeds {
    scenario: u64,
    train: u64,
    augment: u64,
    stage2: u64,
}

pub struct RunDir {
    pub path: PathBuf,
    command: &'static str,
    created: String,
    config: RunConfig,
    hash: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
}

impl RunDir {
    /// `explicit` wins; otherwise a fresh `<root>/<UTC timestamp>-<config hash>` directory.
    pub fn create(
        command: &'static str,
        root: &Path,
        explicit: Option<&Path>,
        config: &RunConfig,
        inputs: &[&Path],
    ) -> Result<Self> {
        let now = chrono::Utc::now();
        let hash = config.hash();
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let stem = format!("{}-{}-{}", now.format("%Y%m%dT%H%M%SZ"), command, &hash[..12]);
                let mut p = root.join(&stem);
                let mut n = 1;
                while p.exists() {
                    n += 1;
                    p = root.join(format!("{stem}-{n}"));
                }
                p
            }
        };
        fs::create_dir_all(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        let inputs = inputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>>>()?;
        let mut run = RunDir {
            path,
            command,
            created: now.to_rfc3339(),
            config: config.clone(),
            hash,
            inputs,
            outputs: Vec::new(),
        };
        let cfg_path = run.output("config.toml")?;
        fs::write(&cfg_path, config.to_toml()?)?;
        Ok(run)
    }

    /// Path for a new artifact; refuses to shadow an input file.
    pub fn output(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.path.join(name);
        if let Ok(target) = p.canonicalize() {
            for i in &self.inputs {
                if i.path.canonicalize().ok().as_ref() == Some(&target) {
                    bail!("refusing to overwrite input {}", i.path.display());
                }
            }
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    pub fn finish(self, results: serde_json::Value) -> Result<PathBuf> {
        let outputs = self.outputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            tool: "hsc",
            version: env!("CARGO_PKG_VERSION"),
            core_version: hsc_core::VERSION,
            command: self.command,
            argv: std::env::args().collect(),
            created: self.created,
            config_hash: &self.hash,
            seeds: Seeds {
                scenario: self.config.scenario.seed,
                train: self.config.pipeline.train.seed,
                augment: self.config.pipeline.augment.seed,
                stage2: self.config.pipeline.stage2.seed,
            },
            config: &self.config,
            inputs: &self.inputs,
            outputs,
            results: &results,
        };
        let path = self.path.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(self.path)
    }
}
