//! Minimal CSV tables with `#` metadata lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Schema name written into the first comment line.
    pub schema: String,
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Table {
            schema: schema.to_string(),
            comments: Vec::new(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of column `name` as floats; unparsable cells become NaN.
    pub fn floats(&self, name: &str) -> Vec<f64> {
        let Some(c) = self.column(name) else {
            return Vec::new();
        };
        self.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect()
    }

    /// Rows whose `key` column equals `value`.
    pub fn filter(&self, key: &str, value: &str) -> Vec<&Vec<String>> {
        match self.column(key) {
            Some(c) => self.rows.iter().filter(|r| r[c] == value).collect(),
            None => Vec::new(),
        }
    }

    /// Header row and data rows only.
    pub fn body(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# schema={} version={SCHEMA_VERSION}", self.schema);
        for c in &self.comments {
            if c.starts_with('#') {
                let _ = writeln!(s, "{c}");
            } else {
                let _ = writeln!(s, "# {c}");
            }
        }
        s.push_str(&self.body());
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut schema = String::new();
        let mut comments = Vec::new();
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(c) = line.strip_prefix('#') {
                let c = c.trim();
                if let Some(rest) = c.strip_prefix("schema=") {
                    schema = rest.split_whitespace().next().unwrap_or("").to_string();
                } else {
                    comments.push(c.to_string());
                }
            } else if !line.trim().is_empty() {
                lines.push((i + 1, line));
            }
        }
        let Some(&(_, head)) = lines.first() else {
            return Err(Error::Parse { line: 1, msg: "missing header row".into() });
        };
        let header: Vec<String> = head.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for &(ln, l) in &lines[1..] {
            let r: Vec<String> = l.split(',').map(str::to_string).collect();
            if r.len() != header.len() {
                return Err(Error::Parse { line: ln, msg: format!("{} fields, header has {}", r.len(), header.len()) });
            }
            rows.push(r);
        }
        Ok(Table { schema, comments, header, rows })
    }
}

/// Shortest round-trip decimal form; identical inputs give identical text.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(len)`).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `out.csv` -> `out.<suffix>.csv`.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}
