//! CSV artifacts. Every file starts with a `# config_hash=<sha256>` line
//! followed by a header row.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvSink {
    /// Header rows are explicit so that empty tables still carry their schema.
    pub fn create(dir: &Path, name: &str, hash: &str, header: &[&str]) -> Result<Self, CliError> {
        let path = dir.join(name);
        let mut file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        writeln!(file, "# config_hash={hash}").map_err(|e| CliError::io(&path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer
            .write_record(header)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self { path, writer })
    }

    pub fn row<T: Serialize>(&mut self, row: &T) -> Result<(), CliError> {
        self.writer
            .serialize(row)
            .map_err(|e| CliError::Io(format!("{}: {e}", self.path.display())))?;
        // keep partial results on disk if a later step aborts
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.path)
    }
}

/// Writes a whole table at once.
pub fn write_csv<T: Serialize>(
    dir: &Path,
    name: &str,
    hash: &str,
    header: &[&str],
    rows: &[T],
) -> Result<PathBuf, CliError> {
    let mut sink = CsvSink::create(dir, name, hash, header)?;
    for r in rows {
        sink.row(r)?;
    }
    sink.finish()
}

/// Joins per-order values as `v1;v2;…`, with empty slots for missing values.
pub fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = Option<T>>) -> String {
    items
        .into_iter()
        .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(";")
}
