use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use histtag::container::file_sha256;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let abs = path
            .canonicalize()
            .with_context(|| format!("hashing {}", path.display()))?;
        Ok(FileDigest {
            sha256: file_sha256(&abs)?,
            path: abs,
        })
    }
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Arguments after the program name.
    pub args: Vec<String>,
    pub cwd: PathBuf,
    pub config: Option<FileDigest>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// What a command reports back for its manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub manifest_path: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Outcome {
    pub fn beside(output: &Path) -> Self {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        Outcome {
            manifest_path: Some(output.with_file_name(name)),
            ..Outcome::default()
        }
    }

    pub fn in_dir(dir: &Path) -> Self {
        Outcome {
            manifest_path: Some(dir.join(MANIFEST_FILE)),
            ..Outcome::default()
        }
    }

    pub fn write_manifest(&self, args: Vec<String>) -> anyhow::Result<()> {
        let Some(path) = &self.manifest_path else {
            return Ok(());
        };
        let digest = |ps: &[PathBuf]| ps.iter().map(|p| FileDigest::of(p)).collect::<anyhow::Result<Vec<_>>>();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args,
            cwd: std::env::current_dir()?,
            config: self.config.as_deref().map(FileDigest::of).transpose()?,
            seeds: self.seeds.clone(),
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
        };
        fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        log::info!("manifest written to {}", path.display());
        Ok(())
    }
}

/// Re-runs the command recorded in `path` and compares output hashes.
/// Returns the mismatching outputs.
pub fn replay(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let recorded: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for input in recorded.inputs.iter().chain(&recorded.config) {
        let now = file_sha256(&input.path).with_context(|| format!("hashing {}", input.path.display()))?;
        if now != input.sha256 {
            bail!("input {} changed since the recorded run", input.path.display());
        }
    }
    let exe = std::env::current_exe()?;
    log::info!("replaying: histtag {}", recorded.args.join(" "));
    let status = Command::new(exe)
        .args(&recorded.args)
        .current_dir(&recorded.cwd)
        .status()
        .context("starting replay")?;
    if !status.success() {
        bail!("replayed command failed with {status}");
    }
    let mut mismatched = Vec::new();
    for out in &recorded.outputs {
        match file_sha256(&out.path) {
            Ok(h) if h == out.sha256 => {}
            _ => mismatched.push(out.path.clone()),
        }
    }
    Ok(mismatched)
}
