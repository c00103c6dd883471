//! CSV / JSON emission.
//!
//! CSV: comma-separated, dot decimal, header row, LF line endings.
//! JSON: one top-level object {meta: {params, version, seed}, data: [...]},
//! where each data element is keyed identically to the CSV columns.
//! Files are written to a temp file in the target directory and renamed on
//! success, so a failed run never leaves a partial artifact.

use retrial_supermarket::ModelParams;
use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn number(x: f64) -> Value {
    // serde_json rejects non-finite numbers; stringify those rather than drop them.
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or_else(|| json!(x.to_string()))
}

pub fn render(
    table: &Table,
    format: Format,
    params: Option<&ModelParams>,
    seed: Option<u64>,
) -> String {
    match format {
        Format::Csv => {
            let mut out = table.columns.join(",");
            out.push('\n');
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(csv_cell).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let data: Vec<Value> = table
                .rows
                .iter()
                .map(|row| {
                    let mut obj = Map::new();
                    for (col, cell) in table.columns.iter().zip(row) {
                        obj.insert((*col).to_string(), cell.clone());
                    }
                    Value::Object(obj)
                })
                .collect();
            let meta = json!({
                "params": params.map(|p| serde_json::to_value(p).expect("params serialize")),
                "version": env!("CARGO_PKG_VERSION"),
                "seed": seed,
            });
            let doc = json!({ "meta": meta, "data": data });
            let mut s = serde_json::to_string_pretty(&doc).expect("json serialize");
            s.push('\n');
            s
        }
    }
}

/// Print to stdout or atomically write to `out`.
pub fn deliver(content: &str, out: Option<&PathBuf>) -> std::io::Result<()> {
    match out {
        None => {
            print!("{content}");
            std::io::stdout().flush()
        }
        Some(path) => {
            let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(content.as_bytes())?;
            tmp.persist(path).map_err(|e| e.error)?;
            Ok(())
        }
    }
}
