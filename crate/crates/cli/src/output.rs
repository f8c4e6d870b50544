//! CSV result files with a provenance preamble.

use std::path::{Path, PathBuf};

use crate::error::{usage, CliResult};

/// Facts written as `#` comment lines at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub command: &'static str,
    pub seed: u64,
    pub config_hash: String,
}

/// Buffers one CSV table and writes it with its preamble.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, prov: &Provenance) -> CliResult<Vec<u8>> {
        let mut out = format!(
            "# seed: {}\n# version: {}\n# config-hash: {}\n# command: {}\n",
            prov.seed,
            env!("CARGO_PKG_VERSION"),
            prov.config_hash,
            prov.command
        )
        .into_bytes();
        let mut w = csv::Writer::from_writer(&mut out);
        let failed = |e: csv::Error| usage!("cannot format CSV: {e}");
        w.write_record(&self.header).map_err(failed)?;
        for r in &self.rows {
            w.write_record(r).map_err(failed)?;
        }
        w.flush().map_err(|e| usage!("cannot format CSV: {e}"))?;
        drop(w);
        Ok(out)
    }

    pub fn write(&self, dir: &Path, name: &str, prov: &Provenance) -> CliResult<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, self.render(prov)?).map_err(|e| usage!("cannot write {}: {e}", path.display()))?;
        Ok(path)
    }
}

/// Shortest round-trip formatting; `NA` for missing values.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| usage!("cannot create output directory {}: {e}", dir.display()))
}
