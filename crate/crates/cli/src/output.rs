//! Staged outputs: every file is written to a temporary sibling and renamed
//! into place only after the whole command has succeeded.

use std::io::Write;
use std::path::{Path, PathBuf};

use seafog::Result;
use tempfile::NamedTempFile;

use crate::io_error;

#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, target: &Path, bytes: &[u8]) -> Result<()> {
        let dir = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_error(dir, e))?;
        tmp.write_all(bytes).map_err(|e| io_error(target, e))?;
        tmp.as_file().sync_all().map_err(|e| io_error(target, e))?;
        self.files.push((tmp, target.to_path_buf()));
        Ok(())
    }

    /// Stages `bytes` at `target` and the config echo at `<target>.run.toml`.
    pub fn add_with_echo(&mut self, target: &Path, bytes: &[u8], echo: &str) -> Result<()> {
        self.add(target, bytes)?;
        self.add(&sidecar(target), echo.as_bytes())
    }

    /// Renames every staged file into place. Files not yet renamed are
    /// deleted if one rename fails.
    pub fn commit(self) -> Result<()> {
        for (tmp, target) in self.files {
            tmp.persist(&target).map_err(|e| io_error(&target, e.error))?;
        }
        Ok(())
    }
}

pub fn sidecar(target: &Path) -> PathBuf {
    let mut s = target.as_os_str().to_owned();
    s.push(".run.toml");
    PathBuf::from(s)
}
