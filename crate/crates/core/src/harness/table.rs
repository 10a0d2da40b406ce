use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Method, SweepKind};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "sweep_value,method,mean_se,std_se,mean_time_s,samples,failures";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub method: Method,
    pub mean_se: f64,
    pub std_se: f64,
    pub mean_time_s: f64,
    /// Samples that completed.
    pub samples: usize,
    /// Samples whose solver returned an error.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub kind: SweepKind,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (csv | json)"))),
        }
    }
}

/// Rounds to the 9 significant digits used on output.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.8e}").parse().expect("formatted float parses")
    } else {
        x
    }
}

fn fmt9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        "NaN".into()
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    sweep_value: f64,
    method: Method,
    mean_se: Option<f64>,
    std_se: Option<f64>,
    mean_time_s: Option<f64>,
    samples: usize,
    failures: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonTable {
    schema_version: u32,
    kind: SweepKind,
    rows: Vec<JsonRow>,
}

fn opt(x: f64) -> Option<f64> {
    x.is_finite().then(|| round9(x))
}

impl ResultTable {
    /// Copy with every float rounded as it would be written.
    pub fn rounded(&self) -> Self {
        Self {
            kind: self.kind,
            rows: self
                .rows
                .iter()
                .map(|r| ResultRow {
                    sweep_value: round9(r.sweep_value),
                    mean_se: round9(r.mean_se),
                    std_se: round9(r.std_se),
                    mean_time_s: round9(r.mean_time_s),
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# kind={}\n{CSV_HEADER}\n", self.kind.name());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                fmt9(r.sweep_value),
                r.method.name(),
                fmt9(r.mean_se),
                fmt9(r.std_se),
                fmt9(r.mean_time_s),
                r.samples,
                r.failures
            );
        }
        s
    }

    /// CSV without the wall-time column, for reproducibility comparisons.
    pub fn to_csv_without_timing(&self) -> String {
        self.to_csv()
            .lines()
            .map(|l| {
                if l.starts_with('#') {
                    l.to_string()
                } else {
                    let f: Vec<&str> = l.split(',').collect();
                    [&f[..4], &f[5..]].concat().join(",")
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let perr = |msg: String| Error::Parse { line: lineno, msg };
            if let Some(rest) = line.strip_prefix("# kind=") {
                kind = Some(rest.trim().parse::<SweepKind>().map_err(|e| perr(e.to_string()))?);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != CSV_HEADER {
                    return Err(perr(format!("unexpected header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(perr(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("bad number `{s}`: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| perr(format!("bad count `{s}`: {e}")));
            rows.push(ResultRow {
                sweep_value: num(f[0])?,
                method: f[1].parse().map_err(|e: Error| perr(e.to_string()))?,
                mean_se: num(f[2])?,
                std_se: num(f[3])?,
                mean_time_s: num(f[4])?,
                samples: int(f[5])?,
                failures: int(f[6])?,
            });
        }
        if !header_seen {
            return Err(Error::Parse {
                line: 0,
                msg: "missing header".into(),
            });
        }
        Ok(Self {
            kind: kind.ok_or(Error::Parse {
                line: 0,
                msg: "missing `# kind=` line".into(),
            })?,
            rows,
        })
    }

    pub fn to_json(&self) -> String {
        let t = JsonTable {
            schema_version: SCHEMA_VERSION,
            kind: self.kind,
            rows: self
                .rows
                .iter()
                .map(|r| JsonRow {
                    sweep_value: round9(r.sweep_value),
                    method: r.method,
                    mean_se: opt(r.mean_se),
                    std_se: opt(r.std_se),
                    mean_time_s: opt(r.mean_time_s),
                    samples: r.samples,
                    failures: r.failures,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&t).expect("table serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: JsonTable = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if t.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                line: 0,
                msg: format!("unsupported schema version {}", t.schema_version),
            });
        }
        Ok(Self {
            kind: t.kind,
            rows: t
                .rows
                .into_iter()
                .map(|r| ResultRow {
                    sweep_value: r.sweep_value,
                    method: r.method,
                    mean_se: r.mean_se.unwrap_or(f64::NAN),
                    std_se: r.std_se.unwrap_or(f64::NAN),
                    mean_time_s: r.mean_time_s.unwrap_or(f64::NAN),
                    samples: r.samples,
                    failures: r.failures,
                })
                .collect(),
        })
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn total_failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }
}

/// Writes the table to `path`.
pub fn emit(table: &ResultTable, path: &Path, format: Format) -> Result<()> {
    std::fs::write(path, table.render(format)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
