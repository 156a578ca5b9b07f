use crate::CliError;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use tempfile::TempDir;

/// Collects artifacts in a temporary directory next to the destination and
/// moves them into place only when the command succeeds.
pub struct Staging {
    dir: TempDir,
    dest: PathBuf,
    artifacts: Vec<String>,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self, CliError> {
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".cascade-staging-")
            .tempdir_in(&parent)
            .map_err(|e| CliError::io(&parent, e))?;
        Ok(Self {
            dir,
            dest: dest.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Registers an artifact written directly to [`Staging::path`].
    pub fn register(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.register(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }

    /// Moves every artifact into the destination directory.
    pub fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(&self.dest).map_err(|e| CliError::io(&self.dest, e))?;
        let mut out = Vec::new();
        for name in &self.artifacts {
            let to = self.dest.join(name);
            let from = self.dir.path().join(name);
            fs::rename(&from, &to).map_err(|e| CliError::io(&to, e))?;
            out.push(to);
        }
        Ok(out)
    }
}
