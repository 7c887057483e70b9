//! Plain columnar text files with a commented header.
//!
//! ```text
//! # kind: record
//! # tau: 1e-8
//! # columns: t x_meas b_true
//! 0e0 1.2e-1 3.4e-1
//! ```
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so files round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::config::fmt;
use crate::error::{Error, Result};
use crate::filter::EstimateTrace;
use crate::smoother::SmoothedTrace;
use crate::truth::MeasurementRecord;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    /// Header pairs other than `columns`, in file order.
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            header: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(mut self, pairs: Vec<(String, String)>) -> Self {
        self.header.extend(pairs);
        self
    }

    pub fn push_header(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.header {
            writeln!(w, "# {k}: {v}")?;
        }
        writeln!(w, "# columns: {}", self.columns.join(" "))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&fmt(*x));
            }
            writeln!(w, "{line}")?;
        }
        w.flush()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = Table::default();
        let mut have_columns = false;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once(':').ok_or_else(|| {
                    Error::format(path, format!("line {}: header without `key: value`", n + 1))
                })?;
                let (k, v) = (k.trim(), v.trim());
                if k == "columns" {
                    table.columns = v.split_whitespace().map(str::to_string).collect();
                    have_columns = true;
                } else {
                    table.header.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !have_columns {
                return Err(Error::format(path, "data before `columns` header"));
            }
            let row = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
            if row.len() != table.columns.len() {
                return Err(Error::format(
                    path,
                    format!(
                        "line {}: {} values for {} columns",
                        n + 1,
                        row.len(),
                        table.columns.len()
                    ),
                ));
            }
            table.rows.push(row);
        }
        if !have_columns {
            return Err(Error::format(path, "missing `columns` header"));
        }
        Ok(table)
    }

    fn require(&self, path: &Path, name: &str) -> Result<Vec<f64>> {
        self.column(name)
            .ok_or_else(|| Error::format(path, format!("missing column `{name}`")))
    }

    fn require_header<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<T> {
        self.get(key)
            .ok_or_else(|| Error::format(path, format!("missing header `{key}`")))?
            .parse()
            .map_err(|_| Error::format(path, format!("bad header `{key}`")))
    }
}

pub fn record_table(record: &MeasurementRecord, header: Vec<(String, String)>) -> Table {
    let mut t = Table::new(&["t", "x_meas", "b_true"]).with_header(header);
    t.push_header("kind", "record");
    t.push_header("record_tau", fmt(record.tau));
    t.push_header("record_seed", record.seed);
    t.rows = (0..record.len())
        .map(|k| vec![record.time(k), record.outcomes[k], record.true_field[k]])
        .collect();
    t
}

pub fn write_record(
    path: &Path,
    record: &MeasurementRecord,
    header: Vec<(String, String)>,
) -> Result<()> {
    record_table(record, header).write(path)
}

/// Reads a record file. Returns the record and the full header.
pub fn read_record(path: &Path) -> Result<(MeasurementRecord, Table)> {
    let table = Table::read(path)?;
    let record = MeasurementRecord {
        tau: table.require_header(path, "record_tau")?,
        seed: table.require_header(path, "record_seed")?,
        outcomes: table.require(path, "x_meas")?,
        true_field: table.require(path, "b_true")?,
    };
    record
        .check()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((record, table))
}

pub fn trace_table(trace: &EstimateTrace, header: Vec<(String, String)>) -> Table {
    let mut t = Table::new(&["t", "b_hat", "b_var"]).with_header(header);
    t.push_header("kind", "trace");
    t.rows = (0..trace.len())
        .map(|i| vec![trace.times[i], trace.b_hat[i], trace.b_var[i]])
        .collect();
    t
}

pub fn read_trace(path: &Path) -> Result<(EstimateTrace, Table)> {
    let table = Table::read(path)?;
    let trace = EstimateTrace {
        times: table.require(path, "t")?,
        b_hat: table.require(path, "b_hat")?,
        b_var: table.require(path, "b_var")?,
    };
    Ok((trace, table))
}

/// One row per emission: `t` then `b_hat_j b_var_j` for every slot `j`.
/// Slot delays are listed in the `delays` header.
pub fn smoothed_table(trace: &SmoothedTrace, header: Vec<(String, String)>) -> Table {
    let n = trace.delays.len();
    let mut cols = vec!["t".to_string()];
    for j in 0..n {
        cols.push(format!("b_hat_{j}"));
        cols.push(format!("b_var_{j}"));
    }
    let mut t = Table {
        header,
        columns: cols,
        rows: Vec::with_capacity(trace.len()),
    };
    t.push_header("kind", "smoothed");
    t.push_header(
        "delays",
        trace
            .delays
            .iter()
            .map(|d| fmt(*d))
            .collect::<Vec<_>>()
            .join(" "),
    );
    for (e, &time) in trace.times.iter().enumerate() {
        let mut row = Vec::with_capacity(1 + 2 * n);
        row.push(time);
        for j in 0..n {
            row.push(trace.b_hat[e][j]);
            row.push(trace.b_var[e][j]);
        }
        t.rows.push(row);
    }
    t
}

pub fn read_smoothed(path: &Path) -> Result<(SmoothedTrace, Table)> {
    let table = Table::read(path)?;
    let delays = table
        .get("delays")
        .ok_or_else(|| Error::format(path, "missing header `delays`"))?
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let n = delays.len();
    if table.columns.len() != 1 + 2 * n {
        return Err(Error::format(path, "column count does not match delays"));
    }
    let mut trace = SmoothedTrace {
        delays,
        ..Default::default()
    };
    for row in &table.rows {
        trace.times.push(row[0]);
        trace.b_hat.push((0..n).map(|j| row[1 + 2 * j]).collect());
        trace.b_var.push((0..n).map(|j| row[2 + 2 * j]).collect());
    }
    Ok((trace, table))
}

pub fn weights_table(delays: &[f64], weights: &[f64], header: Vec<(String, String)>) -> Table {
    let mut t = Table::new(&["delay", "weight"]).with_header(header);
    t.push_header("kind", "weights");
    t.rows = delays
        .iter()
        .zip(weights)
        .map(|(d, w)| vec![*d, *w])
        .collect();
    t
}
