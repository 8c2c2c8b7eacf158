//! File helpers that attach the path to every I/O error.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<PathBuf, CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes `header` then `rows` as comma-separated values with `\n` endings.
pub fn write_csv<R>(path: &Path, header: &[&str], rows: R) -> Result<PathBuf, CliError>
where
    R: IntoIterator<Item = Vec<String>>,
{
    let to_io = |e: csv::Error| -> CliError {
        let source = match e.into_kind() {
            csv::ErrorKind::Io(e) => e,
            other => std::io::Error::other(format!("{other:?}")),
        };
        CliError::io(path, source)
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(to_io)?;
    w.write_record(header).map_err(to_io)?;
    for row in rows {
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn num(x: f64) -> String {
    x.to_string()
}
