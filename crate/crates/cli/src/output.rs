use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;

use crate::config::RunConfig;
use crate::CliError;

/// Version of the CSV layouts written by this tool.
pub const SCHEMA_VERSION: u32 = 1;

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// A CSV table whose leading `#` lines echo the run configuration.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write_to<W: Write>(&self, cfg: &RunConfig, table: &str, sink: W) -> Result<(), csv::Error> {
        let mut sink = sink;
        writeln!(sink, "# parsmooth {} ({table})", cfg.command.name())?;
        writeln!(sink, "# schema={SCHEMA_VERSION}")?;
        for (k, v) in cfg.echo() {
            writeln!(sink, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes to `path`, or to standard output when `path` is `None`.
    pub fn write(&self, cfg: &RunConfig, table: &str, path: Option<&Path>) -> Result<(), CliError> {
        match path {
            Some(p) => {
                let file = File::create(p).map_err(|e| io_err(p, e))?;
                self.write_to(cfg, table, BufWriter::new(file)).map_err(|e| io_err(p, e))
            }
            None => self
                .write_to(cfg, table, io::stdout().lock())
                .map_err(|e| CliError::Io(format!("stdout: {e}"))),
        }
    }
}

pub fn fmt(v: f64) -> String {
    v.to_string()
}

/// `out.csv` → `out.<suffix>.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let ext = path.extension().map_or_else(|| "csv".to_string(), |e| e.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}

/// JSON record next to the main output, with a wall-clock timestamp.
pub fn write_sidecar(cfg: &RunConfig, outputs: &[PathBuf]) -> Result<(), CliError> {
    let Some(out) = &cfg.out else { return Ok(()) };
    let path = out.with_extension("json");
    let config: serde_json::Map<String, serde_json::Value> = cfg
        .echo()
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let record = serde_json::json!({
        "schema": SCHEMA_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.name(),
        "config": config,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "timestamp_unix": timestamp,
    });
    let text = serde_json::to_string_pretty(&record).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

/// Reads the `y0, y1, …` columns of a measurement CSV (comment lines start
/// with `#`).
pub fn read_observations(path: &Path, ny: usize) -> Result<Vec<DVector<f64>>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    let columns = (0..ny)
        .map(|i| {
            let name = format!("y{i}");
            headers.iter().position(|h| h == name).ok_or_else(|| {
                CliError::Config(format!("{}: missing column '{name}'", path.display()))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if headers.iter().any(|h| h == format!("y{ny}")) {
        return Err(CliError::Config(format!(
            "{}: more than {ny} observation columns for this model",
            path.display()
        )));
    }
    let mut ys = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        let y = columns
            .iter()
            .map(|&c| {
                record[c].trim().parse::<f64>().map_err(|e| {
                    CliError::Config(format!("{}: row {}: {e}", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        ys.push(DVector::from_vec(y));
    }
    Ok(ys)
}
