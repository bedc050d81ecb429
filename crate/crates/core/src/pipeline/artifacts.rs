use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io;
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".microseg.lock";

/// What a completed stage consumed (as one key) and produced (file hashes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        if p.exists() {
            io::read_json(&p)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join(MANIFEST), self)
    }

    /// True when `stage` last ran with `key` and every output is still on
    /// disk with its recorded hash.
    pub fn is_current(&self, dir: &Path, stage: &str, key: &str) -> Result<bool> {
        let Some(rec) = self.stages.get(stage) else {
            return Ok(false);
        };
        if rec.key != key {
            return Ok(false);
        }
        for (name, hash) in &rec.outputs {
            let p = dir.join(name);
            if !p.is_file() || &io::hash_file(&p)? != hash {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
