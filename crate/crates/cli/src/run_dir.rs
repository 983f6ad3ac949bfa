//! Output directory state: the lock file and the manifest binding outputs to
//! the config that produced them.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub code_version: String,
    /// hash of `data.bin`, once generated
    pub data_hash: Option<String>,
    /// stage name -> output file -> sha256
    pub stages: BTreeMap<String, BTreeMap<String, String>>,
}

/// Exclusive handle on an output directory. Dropping it releases the lock.
pub struct RunDir {
    root: PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    /// Create or reopen `root` for a config with hash `config_hash`.
    /// An existing manifest written under a different config is refused.
    pub fn open(root: &Path, config_hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Validation(format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    root.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(CliError::io(&lock, e)),
        }
        // from here on the lock is owned and released by Drop
        let mut dir = RunDir { root: root.to_path_buf(), manifest: Manifest::default() };
        let path = root.join(MANIFEST);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: unreadable manifest: {e}", path.display())))?;
            if m.config_hash != config_hash {
                return Err(CliError::Validation(format!(
                    "{} was produced by a different config (hash {}, this config {}); refusing to resume",
                    root.display(),
                    m.config_hash,
                    config_hash
                )));
            }
            dir.manifest = m;
        } else {
            dir.manifest.config_hash = config_hash.to_string();
        }
        dir.manifest.code_version = env!("CARGO_PKG_VERSION").to_string();
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        let f = File::create(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T, CliError> {
        let p = self.path(name);
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
    }

    /// Fail unless `stage` has completed and its outputs are unchanged.
    pub fn require(&self, stage: &str) -> Result<(), CliError> {
        let Some(files) = self.manifest.stages.get(stage) else {
            return Err(CliError::Validation(format!("stage `{stage}` has not been run in {}", self.root.display())));
        };
        for (name, hash) in files {
            if &file_hash(&self.path(name))? != hash {
                return Err(CliError::Validation(format!("{name} changed since stage `{stage}` wrote it")));
            }
        }
        Ok(())
    }

    /// Record a finished stage and persist the manifest.
    pub fn complete(&mut self, stage: &str, outputs: &[&str]) -> Result<(), CliError> {
        let mut files = BTreeMap::new();
        for name in outputs {
            files.insert(name.to_string(), file_hash(&self.path(name))?);
        }
        if stage == "gen-data" {
            self.manifest.data_hash = files.get("data.bin").cloned();
            // downstream results belong to the old data
            self.manifest.stages.clear();
        }
        self.manifest.stages.insert(stage.to_string(), files);
        self.write_json(MANIFEST, &self.manifest.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK));
    }
}
