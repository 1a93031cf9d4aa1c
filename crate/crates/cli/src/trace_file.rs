//! Comma-separated trace files with a `#`-prefixed header.
//!
//! ```text
//! # coopemit-trace 1
//! # config_hash <64 hex digits>
//! # kind g2_cw
//! # <key> <value>            (any number of free metadata lines)
//! # columns delay_ns,g2
//! # units ns,1
//! -5.0,0.9999...
//! ```
//!
//! The first column is the delay (or time) and must increase strictly.
//! Floats use the shortest representation that parses back to the same bits;
//! integer columns are written without a fractional part.

use std::fmt::Write as _;
use std::path::Path;

use coopemit_core::instrument::CountHistogram;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "coopemit-trace";

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Float(Vec<f64>),
    Count(Vec<u64>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Float(v) => v.len(),
            ColumnData::Count(v) => v.len(),
        }
    }

    fn write_cell(&self, i: usize, out: &mut String) {
        match self {
            ColumnData::Float(v) => write!(out, "{:?}", v[i]),
            ColumnData::Count(v) => write!(out, "{}", v[i]),
        }
        .expect("writing to a String");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: String,
    pub data: ColumnData,
}

impl Column {
    pub fn float(name: &str, unit: &str, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            data: ColumnData::Float(data),
        }
    }

    pub fn count(name: &str, unit: &str, data: Vec<u64>) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            data: ColumnData::Count(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub kind: String,
    pub config_hash: String,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<Column>,
}

impl TraceFile {
    pub fn new(kind: &str, config_hash: &str, columns: Vec<Column>) -> Self {
        Self {
            kind: kind.into(),
            config_hash: config_hash.into(),
            meta: Vec::new(),
            columns,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {MAGIC} {SCHEMA_VERSION}");
        let _ = writeln!(out, "# config_hash {}", self.config_hash);
        let _ = writeln!(out, "# kind {}", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k} {v}");
        }
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        let units: Vec<&str> = self.columns.iter().map(|c| c.unit.as_str()).collect();
        let _ = writeln!(out, "# columns {}", names.join(","));
        let _ = writeln!(out, "# units {}", units.join(","));
        for i in 0..self.n_rows() {
            for (j, c) in self.columns.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                c.data.write_cell(i, &mut out);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        debug_assert!(self.columns.iter().all(|c| c.data.len() == self.n_rows()));
        std::fs::write(path, self.render()).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Header fields and raw data cells with their 1-based line numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub version: Option<u32>,
    pub config_hash: Option<String>,
    pub kind: Option<String>,
    pub columns: Option<Vec<String>>,
    pub units: Option<Vec<String>>,
    pub meta: Vec<(String, String)>,
    pub rows: Vec<(usize, Vec<String>)>,
}

/// Parses the header and splits rows, checking the column count and that the
/// first column increases strictly. Header lines are optional, so a bare
/// two-column CSV is accepted.
pub fn read_table(path: &Path, text: &str) -> Result<Table, CliError> {
    let p = path.display().to_string();
    let err = |line: usize, reason: String| CliError::Schema {
        path: p.clone(),
        line,
        reason,
    };
    let mut t = Table {
        version: None,
        config_hash: None,
        kind: None,
        columns: None,
        units: None,
        meta: Vec::new(),
        rows: Vec::new(),
    };
    let mut last: Option<f64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(h) = s.strip_prefix('#') {
            if !t.rows.is_empty() {
                return Err(err(line, "header line after data".into()));
            }
            let h = h.trim();
            let (key, value) = h.split_once(char::is_whitespace).unwrap_or((h, ""));
            let value = value.trim();
            match key {
                MAGIC => {
                    let v: u32 = value
                        .parse()
                        .map_err(|_| err(line, format!("bad schema version `{value}`")))?;
                    if v != SCHEMA_VERSION {
                        return Err(err(line, format!("unsupported schema version {v}")));
                    }
                    t.version = Some(v);
                }
                "config_hash" => t.config_hash = Some(value.into()),
                "kind" => t.kind = Some(value.into()),
                "columns" => t.columns = Some(value.split(',').map(|c| c.trim().to_string()).collect()),
                "units" => t.units = Some(value.split(',').map(|c| c.trim().to_string()).collect()),
                _ => t.meta.push((key.into(), value.into())),
            }
            continue;
        }
        let cells: Vec<String> = s.split(',').map(|c| c.trim().to_string()).collect();
        let expected = t
            .columns
            .as_ref()
            .map(Vec::len)
            .or_else(|| t.rows.first().map(|r| r.1.len()));
        if let Some(n) = expected {
            if cells.len() != n {
                return Err(err(line, format!("expected {n} columns, found {}", cells.len())));
            }
        } else if cells.len() < 2 {
            return Err(err(line, "need at least two columns".into()));
        }
        let d: f64 = cells[0]
            .parse()
            .map_err(|_| err(line, format!("delay `{}` is not a number", cells[0])))?;
        if !d.is_finite() {
            return Err(err(line, format!("delay `{}` is not finite", cells[0])));
        }
        if let Some(prev) = last {
            if !(d > prev) {
                return Err(err(line, format!("delay {d} does not increase (previous {prev})")));
            }
        }
        last = Some(d);
        t.rows.push((line, cells));
    }
    if let (Some(c), Some(u)) = (&t.columns, &t.units) {
        if c.len() != u.len() {
            return Err(err(0, format!("{} columns but {} units", c.len(), u.len())));
        }
    }
    if t.rows.is_empty() {
        return Err(err(0, "no data rows".into()));
    }
    Ok(t)
}

/// Loads a count histogram: delay column plus a non-negative integer count
/// column. A third (uncertainty) column is allowed and ignored.
pub fn load_histogram(path: &Path) -> Result<CountHistogram, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let t = read_table(path, &text)?;
    let p = path.display().to_string();
    let width = t.rows[0].1.len();
    if width > 3 {
        return Err(CliError::Schema {
            path: p,
            line: t.rows[0].0,
            reason: format!("count files have 2 or 3 columns, found {width}"),
        });
    }
    let mut delay = Vec::with_capacity(t.rows.len());
    let mut counts = Vec::with_capacity(t.rows.len());
    for (line, cells) in &t.rows {
        delay.push(cells[0].parse::<f64>().expect("checked by read_table"));
        let c: u64 = cells[1].parse().map_err(|_| CliError::Schema {
            path: p.clone(),
            line: *line,
            reason: format!("count `{}` is not a non-negative integer", cells[1]),
        })?;
        counts.push(c);
    }
    if delay.len() < 2 {
        return Err(CliError::Schema {
            path: p,
            line: t.rows[0].0,
            reason: "need at least two bins".into(),
        });
    }
    CountHistogram::new(delay, counts).map_err(|e| CliError::Schema {
        path: p,
        line: 0,
        reason: e.to_string(),
    })
}

/// Counts file for a histogram.
pub fn histogram_file(kind: &str, config_hash: &str, h: &CountHistogram) -> TraceFile {
    TraceFile::new(
        kind,
        config_hash,
        vec![
            Column::float("delay_ns", "ns", h.delay()),
            Column::count("counts", "1", h.counts().to_vec()),
        ],
    )
}
