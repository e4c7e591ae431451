use std::path::{Path, PathBuf};

use crate::CliError;

/// Files to write once a command has succeeded. Everything is staged next
/// to its destination and renamed into place only after every file has been
/// written, so a failing command leaves no partial artifacts behind.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(self.files.len());
        let result = (|| {
            for (path, bytes) in &self.files {
                let tmp = staging_path(path);
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
                }
                std::fs::write(&tmp, bytes).map_err(|e| io_error(path, e))?;
                staged.push((tmp, path.clone()));
            }
            for (tmp, path) in &staged {
                std::fs::rename(tmp, path).map_err(|e| io_error(path, e))?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &staged {
                let _ = std::fs::remove_file(tmp);
            }
            return Err(e);
        }
        Ok(self.files.into_iter().map(|(p, _)| p).collect())
    }
}

fn staging_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.partial"))
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Data(evmlp::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
