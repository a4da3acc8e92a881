//! Output files that disappear again if the command fails.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Tracks files (and a directory) created by a command. Unless
/// [`Outputs::commit`] is called, dropping removes them.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Outputs::default()
    }

    /// Creates `dir` if missing; a directory created here is removed on failure.
    pub fn dir(&mut self, dir: &Path) -> CliResult<()> {
        if !dir.exists() {
            fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("creating {}: {e}", dir.display())))?;
            self.created_dir.get_or_insert_with(|| dir.to_path_buf());
        } else if !dir.is_dir() {
            return Err(CliError::usage(format!("{} exists and is not a directory", dir.display())));
        }
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.dir(parent)?;
        }
        self.files.push(path.to_path_buf());
        fs::write(path, bytes).map_err(|e| CliError::internal(format!("writing {}: {e}", path.display())))
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if let Some(d) = &self.created_dir {
            let _ = fs::remove_dir_all(d);
        }
    }
}
