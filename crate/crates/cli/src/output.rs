//! Atomic file output and small serialization helpers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::{CliError, Result};

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Buffers CSV rows and writes them atomically.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    R: IntoIterator<Item = String>,
    I: IntoIterator<Item = R>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invariant(format!("{}: {e}", path.display())))
}

/// Files in `dir` named `{prefix}NNN.json`, sorted by name.
pub fn numbered_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let stem = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(".json"));
        if stem.is_some_and(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Deletes numbered files left over from an earlier, larger run.
pub fn remove_numbered(dir: &Path, prefix: &str) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    for path in numbered_files(dir, prefix)? {
        fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Errors with exit code 2 when an input directory from an earlier stage is missing.
pub fn require_dir(dir: &Path, stage: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} not found; run `{stage}` first", dir.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.json");
        write_json(&p, &vec![1, 2]).unwrap();
        write_json(&p, &vec![3]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "[\n  3\n]\n");
        let leftovers = fs::read_dir(dir.path().join("sub")).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn numbered_files_filter_and_sort() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["d_002.json", "d_000.json", "d_x.json", "report.json", "d_001.txt"] {
            fs::write(dir.path().join(n), "{}").unwrap();
        }
        let names: Vec<String> = numbered_files(dir.path(), "d_")
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["d_000.json", "d_002.json"]);
        remove_numbered(dir.path(), "d_").unwrap();
        assert!(numbered_files(dir.path(), "d_").unwrap().is_empty());
    }

    #[test]
    fn csv_has_header_even_without_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(&p, &["a", "b"], Vec::<Vec<String>>::new()).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n");
    }
}
