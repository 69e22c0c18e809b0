use crate::config::ResolvedConfig;
use crate::{CliError, EvalArgs, ExportArgs};
use lspd_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// A command with its fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum ManifestCommand {
    TrainTeacher(ResolvedConfig),
    Distill(ResolvedConfig),
    AblateKernels(ResolvedConfig),
    Eval(EvalArgs),
    ExportStructures(ExportArgs),
}

impl ManifestCommand {
    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            ManifestCommand::TrainTeacher(c)
            | ManifestCommand::Distill(c)
            | ManifestCommand::AblateKernels(c) => c.out_dir = dir,
            ManifestCommand::Eval(a) => a.out_dir = dir,
            ManifestCommand::ExportStructures(a) => a.out_dir = dir,
        }
    }
}

/// Record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub command: ManifestCommand,
    pub seed: u64,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub inputs: Vec<InputHash>,
}

/// Content hash of one input file or directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| {
        CliError::Core(Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

fn tree_lines(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .and_then(|rd| rd.map(|e| e.map(|e| e.path())).collect())
        .map_err(|e| {
            CliError::Core(Error::Io {
                path: dir.display().to_string(),
                source: e,
            })
        })?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            tree_lines(root, &p, out)?;
        } else {
            let rel = p
                .strip_prefix(root)
                .unwrap_or(&p)
                .to_string_lossy()
                .replace('\\', "/");
            out.push(format!("{} {rel}\n", blob_hash(&read(&p)?)));
        }
    }
    Ok(())
}

/// Git-style content hash: SHA-256 of `"blob <len>\0" + content` for a file;
/// for a directory, the blob hash of its sorted `"<hash> <relative path>"`
/// listing.
pub fn content_hash(path: &Path) -> Result<String, CliError> {
    if path.is_dir() {
        let mut lines = Vec::new();
        tree_lines(path, path, &mut lines)?;
        Ok(blob_hash(lines.concat().as_bytes()))
    } else {
        Ok(blob_hash(&read(path)?))
    }
}

impl InputHash {
    pub fn of(role: &str, path: &Path) -> Result<Self, CliError> {
        Ok(InputHash {
            role: role.into(),
            path: path.to_path_buf(),
            sha256: content_hash(path)?,
        })
    }
}

impl RunManifest {
    /// Fails if any recorded input changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for input in &self.inputs {
            let now = content_hash(&input.path)?;
            if now != input.sha256 {
                return Err(CliError::Core(Error::Integrity(format!(
                    "{} input {} changed since the manifest was written ({} now, {} recorded)",
                    input.role,
                    input.path.display(),
                    now,
                    input.sha256
                ))));
            }
        }
        Ok(())
    }
}
