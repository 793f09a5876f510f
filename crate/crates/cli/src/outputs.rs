//! Files written by one command, removed again if the command fails.

use std::path::{Path, PathBuf};

use road_core::npy::read_npy;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Outputs {
    created_dir: Option<PathBuf>,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn in_dir(dir: &Path) -> CliResult<Self> {
        let mut out = Self::default();
        if !dir.exists() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            out.created_dir = Some(dir.to_path_buf());
        } else if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
        }
        Ok(out)
    }

    pub fn text(&mut self, path: PathBuf, contents: &str) -> CliResult<()> {
        self.files.push(path.clone());
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        let back = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        if back != contents {
            return Err(CliError::Usage(format!("{} did not read back intact", path.display())));
        }
        Ok(())
    }

    pub fn json<T: serde::Serialize>(&mut self, path: PathBuf, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
            path: path.clone(),
            source,
        })? + "\n";
        self.text(path, &text)
    }

    /// Tracks `path`, lets `write` produce it and checks that it parses.
    pub fn npy_with(
        &mut self,
        path: PathBuf,
        write: impl FnOnce(&Path) -> road_core::Result<()>,
    ) -> CliResult<()> {
        self.files.push(path.clone());
        write(&path)?;
        self.verify_npy(&path)
    }

    /// Registers a file that some other routine is about to write.
    pub fn track(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    pub fn verify_npy(&self, path: &Path) -> CliResult<()> {
        read_npy(path)?;
        Ok(())
    }

    /// Deletes everything written so far, and the output directory if this run created it.
    pub fn discard(self) {
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if let Some(dir) = self.created_dir {
            let _ = std::fs::remove_dir(dir);
        }
    }
}

/// Runs `body`, discarding its outputs on failure.
pub fn transactional<T>(
    dir: &Path,
    body: impl FnOnce(&mut Outputs) -> CliResult<T>,
) -> CliResult<T> {
    let mut out = Outputs::in_dir(dir)?;
    match body(&mut out) {
        Ok(v) => Ok(v),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}
