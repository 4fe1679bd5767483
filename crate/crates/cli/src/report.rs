//! JSON reports and CSV tables.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use isoflop_core::{Error, Result, VERSION};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const SIG_DIGITS: usize = 9;

/// `x` rounded to nine significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Text form of `x` with nine significant digits; empty for NaN.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        round_sig(x).to_string()
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                *v = json!(round_sig(x));
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Builds `{command, config, results, provenance}` with every float at nine
/// significant digits.
pub fn envelope(command: &str, cfg: &RunConfig, results: Vec<Value>) -> Result<Value> {
    let mut v = json!({
        "command": command,
        "config": to_value(cfg)?,
        "results": results,
        "provenance": { "seed": cfg.seed, "version": VERSION },
    });
    round_value(&mut v);
    Ok(v)
}

pub fn to_value<T: Serialize>(x: &T) -> Result<Value> {
    serde_json::to_value(x).map_err(|e| Error::Data(format!("cannot serialize report: {e}")))
}

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_report(path: Option<&Path>, report: &Value) -> Result<()> {
    let mut out = open_output(path)?;
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Data(e.to_string()))?;
    writeln!(out, "{text}").and_then(|_| out.flush()).map_err(|e| io_error(path.unwrap_or(Path::new("<stdout>")), e))
}

/// A CSV writer over a file or stdout.
pub struct Table {
    inner: csv::Writer<Box<dyn Write>>,
    path: String,
}

impl Table {
    pub fn create(path: Option<&Path>, header: &[&str]) -> Result<Table> {
        let mut t = Table {
            inner: csv::Writer::from_writer(open_output(path)?),
            path: path.map_or("<stdout>".into(), |p| p.display().to_string()),
        };
        t.row(header.iter().map(|s| s.to_string()))?;
        Ok(t)
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        self.inner.write_record(fields.into_iter().collect::<Vec<_>>()).map_err(|e| self.fail(e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| self.fail(e))
    }

    fn fail(&self, e: impl std::fmt::Display) -> Error {
        Error::Data(format!("{}: {e}", self.path))
    }
}
