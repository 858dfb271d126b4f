use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;

pub const FAILED_MARKER: &str = ".failed";
pub const CONFIG_SIDECAR: &str = "effective_config.txt";

/// A command's output directory.
///
/// Created on open; a stale failure marker from an earlier run is removed.
/// [`OutputDir::guard`] writes the marker again if the command fails.
pub struct OutputDir {
    dir: PathBuf,
}

impl OutputDir {
    pub fn open(dir: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let marker = dir.join(FAILED_MARKER);
        if marker.exists() {
            std::fs::remove_file(&marker).with_context(|| format!("removing {}", marker.display()))?;
        }
        Ok(Self { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// Sorted `key = value` lines next to the CSV artifacts.
    pub fn write_config(&self, config: &BTreeMap<String, String>) -> anyhow::Result<PathBuf> {
        self.write(CONFIG_SIDECAR, config_text(config))
    }

    /// Runs `f`; on error leaves a `.failed` marker holding the cause.
    pub fn guard<T>(&self, f: impl FnOnce(&Self) -> anyhow::Result<T>) -> anyhow::Result<T> {
        let out = f(self);
        if let Err(e) = &out {
            let _ = std::fs::write(self.path(FAILED_MARKER), format!("{e:#}\n"));
        }
        out
    }
}

pub fn config_text(config: &BTreeMap<String, String>) -> String {
    config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Pretty JSON with a trailing newline.
pub fn json<T: serde::Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
