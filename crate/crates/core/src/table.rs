//! Metrics CSV: `seed,step,eval_acc,<feature columns...>`, rows sorted by `(seed, step)`.
//!
//! The full-pipeline file carries all fourteen metrics in canonical order;
//! files produced from a feature subset (for example by sampling a
//! single-feature model) carry only those columns.

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::metrics::{feature_index, MetricVector, FEATURE_NAMES};

const KEY_COLUMNS: [&str; 3] = ["seed", "step", "eval_acc"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub seed: i64,
    pub step: u64,
    pub eval_accuracy: Option<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn new(feature_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for name in &feature_names {
            if feature_index(name).is_none() {
                return Err(Error::invalid(format!("unknown feature `{name}`")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate feature `{name}`")));
            }
        }
        if feature_names.is_empty() {
            return Err(Error::invalid("metrics table needs at least one feature"));
        }
        Ok(MetricsTable {
            feature_names,
            rows: Vec::new(),
        })
    }

    pub fn from_vectors(vectors: impl IntoIterator<Item = MetricVector>) -> Self {
        let rows = vectors
            .into_iter()
            .map(|v| MetricRow {
                seed: v.seed,
                step: v.step,
                eval_accuracy: v.eval_accuracy,
                values: v.values.to_vec(),
            })
            .collect();
        let mut table = MetricsTable {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows,
        };
        table.sort();
        table
    }

    pub fn sort(&mut self) {
        self.rows.sort_by_key(|r| (r.seed, r.step));
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Distinct seeds in ascending order.
    pub fn seeds(&self) -> Vec<i64> {
        let mut seeds: Vec<i64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
    }

    /// Restricts the table to `names`, in the given order.
    pub fn select(&self, names: &[String]) -> Result<MetricsTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column(n)
                    .ok_or_else(|| Error::invalid(format!("feature `{n}` not present in metrics table")))
            })
            .collect::<Result<_>>()?;
        let mut out = MetricsTable::new(names.to_vec())?;
        out.rows = self
            .rows
            .iter()
            .map(|r| MetricRow {
                values: idx.iter().map(|&i| r.values[i]).collect(),
                ..r.clone()
            })
            .collect();
        Ok(out)
    }

    pub fn read(reader: impl Read, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let csv_err = |line: u64, message: String| Error::Csv {
            path: source.to_string(),
            line,
            message,
        };
        let headers = rdr
            .headers()
            .map_err(|e| csv_err(1, e.to_string()))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4 || cols[..3] != KEY_COLUMNS {
            return Err(csv_err(
                1,
                format!("header must start with `seed,step,eval_acc` and name at least one feature, got `{}`", cols.join(",")),
            ));
        }
        let mut table = MetricsTable::new(cols[3..].iter().map(|s| s.to_string()).collect())
            .map_err(|e| csv_err(1, e.to_string()))?;

        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                csv_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let seed: i64 = record[0]
                .trim()
                .parse()
                .map_err(|_| csv_err(line, format!("bad seed `{}`", &record[0])))?;
            let step: u64 = record[1]
                .trim()
                .parse()
                .map_err(|_| csv_err(line, format!("bad step `{}`", &record[1])))?;
            let eval_accuracy = match record[2].trim() {
                "" => None,
                s => {
                    let acc: f64 = s
                        .parse()
                        .map_err(|_| csv_err(line, format!("bad eval_acc `{s}`")))?;
                    if !(0.0..=1.0).contains(&acc) {
                        return Err(csv_err(line, format!("eval_acc {acc} outside [0, 1]")));
                    }
                    Some(acc)
                }
            };
            let values = (3..record.len())
                .map(|i| {
                    let field = record[i].trim();
                    match field.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(csv_err(
                            line,
                            format!("bad value `{field}` in column `{}`", &headers[i]),
                        )),
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            table.rows.push(MetricRow {
                seed,
                step,
                eval_accuracy,
                values,
            });
        }
        table.sort();
        Ok(table)
    }

    pub fn read_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file), &path.display().to_string())
    }

    /// Writes rows sorted by `(seed, step)`. Floats use the shortest
    /// representation that round-trips.
    pub fn write(&self, mut writer: impl Write) -> std::io::Result<()> {
        let mut rows: Vec<&MetricRow> = self.rows.iter().collect();
        rows.sort_by_key(|r| (r.seed, r.step));
        let mut out = String::new();
        out.push_str(&KEY_COLUMNS.join(","));
        for name in &self.feature_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for row in rows {
            out.push_str(&format!("{},{},", row.seed, row.step));
            if let Some(acc) = row.eval_accuracy {
                out.push_str(&format_float(acc));
            }
            for v in &row.values {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
        writer.write_all(out.as_bytes())
    }

    pub fn write_path(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}
