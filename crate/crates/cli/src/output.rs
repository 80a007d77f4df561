//! All-or-nothing file output.

use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Files staged next to their destinations and renamed into place together.
#[derive(Default)]
pub struct Staged {
    pending: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        self.write_with(path, |tmp| {
            fs::write(tmp, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
        })
    }

    /// Lets `produce` fill a temporary sibling of `path`.
    pub fn write_with(
        &mut self,
        path: &Path,
        produce: impl FnOnce(&Path) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if !dir.is_dir() {
                return Err(CliError::Data(format!("output directory {} does not exist", dir.display())));
            }
        }
        let name = path
            .file_name()
            .ok_or_else(|| CliError::Usage(format!("invalid output path {}", path.display())))?;
        let mut tmp_name = std::ffi::OsString::from(".");
        tmp_name.push(name);
        tmp_name.push(format!(".{}.tmp", std::process::id()));
        let tmp = path.with_file_name(tmp_name);
        if let Err(e) = produce(&tmp) {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        self.pending.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(mut self) -> Result<(), CliError> {
        for (tmp, dest) in std::mem::take(&mut self.pending) {
            fs::rename(&tmp, &dest).map_err(|e| CliError::Data(format!("cannot write {}: {e}", dest.display())))?;
        }
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
    }
}

/// `out.wav` → `out_0003.wav` for multi-sample outputs.
pub fn numbered(path: &Path, index: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{index:04}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{index:04}"),
    };
    path.with_file_name(name)
}
