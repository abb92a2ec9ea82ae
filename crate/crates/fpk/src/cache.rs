//! Content-addressed store of synthesized controllers.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// Bumped whenever the stored layout or the numerics behind it change.
const FORMAT: u32 = 1;

/// Hash of every input the synthesis depends on. Simulation and output
/// settings are deliberately left out.
pub fn key(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::json!({
        "format": FORMAT,
        "grid": cfg.grid,
        "model": cfg.model,
        "control": cfg.control,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn new(dir: PathBuf) -> Self {
        Cache { dir }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.cbor"))
    }

    /// `None` on a miss; a corrupt entry is reported and treated as a miss.
    pub fn load<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let path = self.path(key);
        let file = fs::File::open(&path).ok()?;
        match ciborium::from_reader(BufReader::new(file)) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn store<T: Serialize>(&self, key: &str, value: &T) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.path(key);
        let tmp = path.with_extension("tmp");
        {
            let file = fs::File::create(&tmp)?;
            ciborium::into_writer(value, BufWriter::new(file))?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn clear(&self) -> Result<()> {
        if self.dir.exists() {
            for entry in fs::read_dir(&self.dir)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e == "cbor") {
                    fs::remove_file(p)?;
                }
            }
        }
        Ok(())
    }
}
