//! Run directory layout and the manifest of stage outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Result;
use log::{info, warn};
use lmrec_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET_DIR: &str = "dataset";
pub const SWEEP_FILE: &str = "sweep.jsonl";
pub const RECOGNITIONS_FILE: &str = "recognitions.jsonl";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub stage: String,
    pub config_digest: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    /// Keyed by path relative to the run directory.
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

pub struct RunDir {
    root: PathBuf,
    digest: String,
    manifest: RunManifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = fs::File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunDir {
    pub fn open(root: &Path, digest: String) -> Result<Self> {
        fs::create_dir_all(root)?;
        let path = root.join(MANIFEST);
        let manifest = if path.exists() {
            serde_json::from_slice(&fs::read(&path)?).map_err(Error::from)?
        } else {
            RunManifest::default()
        };
        Ok(RunDir { root: root.to_path_buf(), digest, manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join(DATASET_DIR)
    }

    /// Path of an upstream artifact, or a dependency error naming the stage
    /// that produces it. Warns when it was made under a different config.
    pub fn input(&self, name: &str, stage: &'static str) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact { path, stage }.into());
        }
        match self.manifest.artifacts.get(name) {
            Some(e) if e.config_digest != self.digest => warn!(
                "{name} was produced by `{}` under config {}, current config is {}",
                e.stage,
                &e.config_digest[..12],
                &self.digest[..12]
            ),
            Some(_) => {}
            None => warn!("{name} is not recorded in the run manifest"),
        }
        Ok(path)
    }

    /// Records freshly written files (or every file under a directory).
    pub fn record(&mut self, stage: &str, name: &str) -> Result<()> {
        let path = self.path(name);
        let mut files = Vec::new();
        if path.is_dir() {
            collect_files(&self.root, &path, &mut files)?;
        } else {
            files.push(name.to_string());
        }
        if path.is_dir() {
            let prefix = format!("{name}/");
            self.manifest.artifacts.retain(|k, _| !k.starts_with(&prefix));
        }
        for f in files {
            let sha256 = file_digest(&self.path(&f))?;
            info!("{stage}: wrote {f} (sha256 {})", &sha256[..16]);
            self.manifest.artifacts.insert(
                f,
                ArtifactEntry { stage: stage.to_string(), config_digest: self.digest.clone(), sha256 },
            );
        }
        self.save()
    }

    fn save(&self) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).map_err(Error::from)?;
        bytes.push(b'\n');
        fs::write(self.path(MANIFEST), bytes)?;
        Ok(())
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
