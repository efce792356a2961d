//! Output files. Every file carries the tool version, config digest and seed:
//! first in TOML reports, trailing `# key = value` lines in CSV tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Stamp {
    pub command: String,
    pub digest: String,
    pub seed: u64,
}

impl Stamp {
    fn lines(&self) -> Vec<(String, String)> {
        vec![
            ("tool".into(), format!("\"bloch-edge {VERSION}\"")),
            ("command".into(), format!("\"{}\"", self.command)),
            ("config_sha256".into(), format!("\"{}\"", self.digest)),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV table followed by `# key = value` lines (stamp, then summary).
pub struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    trailer: Vec<(String, String)>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), trailer: Vec::new() }
    }

    pub fn with_header(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new(), trailer: Vec::new() }
    }

    pub fn row(&mut self, values: Vec<String>) {
        debug_assert_eq!(values.len(), self.header.len());
        self.rows.push(values);
    }

    pub fn trailer(&mut self, key: &str, value: impl std::fmt::Display) {
        self.trailer.push((key.into(), value.to_string()));
    }

    pub fn render(&self, stamp: &Stamp) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.header.join(",")).unwrap();
        for r in &self.rows {
            writeln!(out, "{}", r.join(",")).unwrap();
        }
        for (k, v) in stamp.lines().iter().chain(&self.trailer) {
            writeln!(out, "# {k} = {v}").unwrap();
        }
        out
    }
}

/// TOML document with the stamp keys first.
pub fn report<T: Serialize>(stamp: &Stamp, body: &T) -> String {
    let mut out = String::new();
    for (k, v) in stamp.lines() {
        writeln!(out, "{k} = {v}").unwrap();
    }
    out.push('\n');
    out.push_str(&toml::to_string(body).expect("report serializes"));
    out
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(path)?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn write(&self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let p = self.0.join(name);
        std::fs::write(&p, contents)?;
        Ok(p)
    }
}
