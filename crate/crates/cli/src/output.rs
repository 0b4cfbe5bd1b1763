use std::fs;
use std::path::Path;

use crate::CliError;

/// In-memory CSV table written with a `# config_hash=...` first line.
pub(crate) struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<const N: usize>(&mut self, cells: [String; N]) {
        debug_assert_eq!(N, self.header.len());
        self.rows.push(cells.to_vec());
    }

    pub fn write(&self, path: &Path, hash: &str) -> Result<(), CliError> {
        let mut buf = format!("# config_hash={hash}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let fail = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
            w.write_record(&self.header).map_err(fail)?;
            for r in &self.rows {
                w.write_record(r).map_err(fail)?;
            }
            w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        }
        fs::write(path, buf).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}
