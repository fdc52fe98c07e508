//! Output-directory lock, artifact hashing and the per-run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Invocation;
use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const LOCKFILE: &str = ".fmrigan.lock";

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let path = dir.join(LOCKFILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => anyhow::bail!(
                "output directory {} is locked by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating lock {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f
            .read(&mut buf)
            .with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Every regular file below `root`, sorted, as paths relative to `root`.
pub fn list_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).expect("below root").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Hashes of a file, or of every file in a directory, keyed by path.
pub fn hash_input(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if path.is_dir() {
        for rel in list_files(path)? {
            let p = path.join(&rel);
            out.insert(p.display().to_string(), sha256_file(&p)?);
        }
    } else {
        out.insert(path.display().to_string(), sha256_file(path)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub invocation: Invocation,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    /// sha256 of each input file, keyed by absolute path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of each output file, keyed by path relative to the output
    /// directory.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(invocation: Invocation, config: RunConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: fmrigan_core::seqvol::io::FORMAT_VERSION,
            seeds: config
                .seeds()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            invocation,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Hashes inputs and every file under `out` except the manifest and
    /// the lock, then writes `manifest.json`.
    pub fn finish(mut self, out: &Path) -> Result<Manifest> {
        for input in self.invocation.inputs() {
            self.inputs.extend(hash_input(&input)?);
        }
        for rel in list_files(out)? {
            let name = rel.to_string_lossy().replace('\\', "/");
            if name == MANIFEST || name == LOCKFILE {
                continue;
            }
            self.outputs.insert(name, sha256_file(&out.join(&rel))?);
        }
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(out.join(MANIFEST), text + "\n")
            .with_context(|| format!("writing manifest in {}", out.display()))?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let path = if path.is_dir() {
            path.join(MANIFEST)
        } else {
            path.to_path_buf()
        };
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
