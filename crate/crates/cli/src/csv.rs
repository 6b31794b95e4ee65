use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Comma-separated output with a leading `#` line carrying the config hash
/// and tool version, then a header row.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
    columns: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, hash: &str, seed: Option<u64>, header: &[&str]) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = CsvWriter { path: path.to_path_buf(), out: BufWriter::new(file), columns: header.len() };
        let seed = seed.map(|s| format!(" seed={s}")).unwrap_or_default();
        w.line(&format!("# hjreach {} config_sha256={hash}{seed}", env!("CARGO_PKG_VERSION")))?;
        w.line(&header.join(","))?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<(), CliError> {
        writeln!(self.out, "{s}").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        assert_eq!(fields.len(), self.columns, "row width must match the header");
        self.line(&fields.join(","))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
