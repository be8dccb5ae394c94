//! Run directory: CSV files, JSON artifacts, SVG plots and the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;

/// Shortest decimal that parses back to the same `f64`. Missing values
/// are written as empty cells.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

/// A CSV file written row by row and flushed after every row, so an
/// interrupted run leaves a parseable prefix.
pub struct CsvStream {
    writer: csv::Writer<BufWriter<File>>,
    columns: usize,
}

impl CsvStream {
    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        anyhow::ensure!(fields.len() == self.columns, "CSV row has {} fields, header has {}", fields.len(), self.columns);
        self.writer.write_record(fields)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Parsed CSV: header plus rows of numbers (`NaN` for empty cells).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Reads a CSV written by this tool. Text columns are listed in
/// `text_columns` and read as `NaN`.
pub fn read_csv(path: &Path, text_columns: &[&str]) -> Result<Table> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let text: Vec<bool> = header.iter().map(|h| text_columns.contains(&h.as_str())).collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .zip(&text)
            .map(|(cell, is_text)| {
                if *is_text || cell.is_empty() {
                    Ok(f64::NAN)
                } else {
                    cell.parse::<f64>()
                        .with_context(|| format!("{} row {}: `{cell}` is not a number", path.display(), line + 1))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub toolkit_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub started_at: String,
    pub finished_at: String,
    /// Emitted files, relative to the run directory.
    pub files: Vec<String>,
    /// Non-fatal conditions: non-convergence, early termination, failed cells.
    pub warnings: Vec<String>,
}

pub struct RunDir {
    path: PathBuf,
    files: Vec<String>,
    warnings: Vec<String>,
    started_at: String,
}

fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunDir {
    pub fn create(path: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&path).with_context(|| format!("creating output directory {}", path.display()))?;
        Ok(Self {
            path,
            files: Vec::new(),
            warnings: Vec::new(),
            started_at: timestamp(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn register(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.path.join(name)
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn csv(&mut self, name: &str, header: &[String]) -> Result<CsvStream> {
        let path = self.register(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer.write_record(header)?;
        writer.flush()?;
        Ok(CsvStream {
            writer,
            columns: header.len(),
        })
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.register(name);
        let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut out, value)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.register(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(self, command: &str, config_hash: String, seed: u64, workers: usize) -> Result<Manifest> {
        let mut files = self.files;
        files.sort();
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash,
            seed,
            workers,
            started_at: self.started_at,
            finished_at: timestamp(),
            files,
            warnings: self.warnings,
        };
        let path = self.path.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
