//! Output directories are assembled in a hidden sibling and renamed into
//! place on success, so a failed command leaves nothing behind.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tempfile::TempDir;

pub const RUN_FILE: &str = "run.json";
/// Wall-clock measurements live here, apart from the deterministic artifacts.
pub const TIMING_FILE: &str = "timing.json";

pub struct Staging {
    target: PathBuf,
    dir: TempDir,
}

impl Staging {
    /// `target` may not exist yet, or may be an empty directory.
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty = target.is_dir() && std::fs::read_dir(target)?.next().is_none();
            if !empty {
                bail!("output {} already exists and is not an empty directory", target.display());
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = tempfile::Builder::new().prefix(".selae-partial-").tempdir_in(&parent)?;
        Ok(Self {
            target: target.to_path_buf(),
            dir,
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(&self.file(name), value)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.file(name), text).with_context(|| format!("writing {name}"))
    }

    pub fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            std::fs::remove_dir(&self.target)?;
        }
        let staged = self.dir.keep();
        std::fs::rename(&staged, &self.target).with_context(|| format!("moving output to {}", self.target.display()))?;
        Ok(self.target)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `bytes` next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// The machine-readable failure record printed on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub command: String,
    pub message: String,
    pub causes: Vec<String>,
}

impl ErrorReport {
    pub fn new(command: &str, err: &anyhow::Error) -> Self {
        Self {
            error: ErrorBody {
                command: command.into(),
                message: err.to_string(),
                causes: err.chain().skip(1).map(|c| c.to_string()).collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_staging_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("out");
        {
            let s = Staging::new(&out).unwrap();
            s.write_text("a.txt", "x").unwrap();
        }
        assert!(!out.exists());
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_moves_into_place() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("out");
        std::fs::create_dir(&out).unwrap();
        let s = Staging::new(&out).unwrap();
        s.write_text("a.txt", "x").unwrap();
        s.commit().unwrap();
        assert_eq!(std::fs::read_to_string(out.join("a.txt")).unwrap(), "x");
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 1);
    }

    #[test]
    fn non_empty_target_is_refused() {
        let root = tempfile::tempdir().unwrap();
        std::fs::write(root.path().join("f"), "").unwrap();
        assert!(Staging::new(root.path()).is_err());
    }
}
