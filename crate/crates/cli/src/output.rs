use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use tempfile::TempDir;

/// Files are written into a hidden sibling directory and moved into place
/// only once the whole run has succeeded. Dropping an uncommitted stage
/// removes it.
pub struct Stage {
    dir: TempDir,
    target: PathBuf,
}

impl Stage {
    pub fn new(target: &Path) -> Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("cannot create {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".dprob-stage-")
            .tempdir_in(&parent)
            .with_context(|| format!("cannot create a staging directory in {}", parent.display()))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text).with_context(|| format!("cannot write {name}"))
    }

    pub fn text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path(name), text).with_context(|| format!("cannot write {name}"))
    }

    pub fn csv(&self, name: &str) -> Result<csv::Writer<fs::File>> {
        csv::Writer::from_path(self.path(name)).with_context(|| format!("cannot write {name}"))
    }

    /// Replaces `target` with the staged directory.
    pub fn commit(self) -> Result<()> {
        let staged = self.dir.keep();
        let old = if self.target.exists() {
            let aside = staged.with_extension("old");
            fs::rename(&self.target, &aside)
                .with_context(|| format!("cannot move existing {} aside", self.target.display()))?;
            Some(aside)
        } else {
            None
        };
        if let Err(e) = fs::rename(&staged, &self.target) {
            if let Some(aside) = &old {
                let _ = fs::rename(aside, &self.target);
            }
            let _ = fs::remove_dir_all(&staged);
            return Err(e).with_context(|| format!("cannot move results into {}", self.target.display()));
        }
        if let Some(aside) = old {
            if fs::symlink_metadata(&aside).map(|m| m.is_dir()).unwrap_or(false) {
                fs::remove_dir_all(&aside)?;
            } else {
                fs::remove_file(&aside)?;
            }
        }
        Ok(())
    }
}

/// Fixed-precision float formatting so reruns are byte-identical.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.10e}")
    } else {
        v.to_string()
    }
}
