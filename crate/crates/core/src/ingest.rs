//! Reading and writing observation tables.
//!
//! Input columns are `loss` plus at least two of `budget_flops`, `n_params`
//! and `d_tokens`; the missing one follows from `C = 6 N D`. An optional
//! `nominal_budget` column overrides the budget used for grouping. Other
//! columns are ignored. Header names are matched case-insensitively.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::Observation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IngestOptions {
    /// Keep only rows with budget strictly below this value.
    pub max_budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub points: Vec<Observation>,
    /// Rows dropped by the budget filter.
    pub filtered: usize,
}

const MAX_LISTED: usize = 10;

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

pub fn read_observations<R: Read>(reader: R, opts: IngestOptions) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Data(format!("cannot read header: {e}")))?.clone();
    let [c, n, d, loss, nominal] =
        ["budget_flops", "n_params", "d_tokens", "loss", "nominal_budget"].map(|k| column(&headers, k));
    let Some(loss) = loss else {
        return Err(Error::Data("missing required column 'loss'".into()));
    };
    if [c, n, d].iter().filter(|x| x.is_some()).count() < 2 {
        return Err(Error::Data("need at least two of budget_flops, n_params, d_tokens".into()));
    }

    let mut points = Vec::new();
    let mut bad: Vec<String> = Vec::new();
    let mut filtered = 0;
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let field = |idx: Option<usize>, name: &str| -> std::result::Result<Option<f64>, String> {
            let Some(i) = idx else { return Ok(None) };
            let raw = rec.get(i).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| format!("line {line}: {name} '{raw}' is not a number"))?;
            if !v.is_finite() || (name != "loss" && v <= 0.0) {
                return Err(format!("line {line}: {name} must be finite{}, got {raw}", if name == "loss" { "" } else { " and positive" }));
            }
            Ok(Some(v))
        };
        let parsed = (|| {
            let (cv, nv, dv) = (field(c, "budget_flops")?, field(n, "n_params")?, field(d, "d_tokens")?);
            let lv = field(Some(loss), "loss")?.unwrap_or(f64::NAN);
            let nom = field(nominal, "nominal_budget")?;
            let (cv, nv, dv) = match (cv, nv, dv) {
                (Some(cv), Some(nv), Some(dv)) => (cv, nv, dv),
                (None, Some(nv), Some(dv)) => (6.0 * nv * dv, nv, dv),
                (Some(cv), Some(nv), None) => (cv, nv, cv / (6.0 * nv)),
                (Some(cv), None, Some(dv)) => (cv, cv / (6.0 * dv), dv),
                _ => unreachable!(),
            };
            Ok::<_, String>(Observation { budget: nom.unwrap_or(cv), n: nv, d: dv, loss: lv })
        })();
        match parsed {
            Ok(o) if opts.max_budget.is_some_and(|m| o.budget >= m) => filtered += 1,
            Ok(o) => points.push(o),
            Err(msg) => bad.push(msg),
        }
    }
    if !bad.is_empty() {
        let mut msg = format!("{} invalid row(s): ", bad.len());
        msg.push_str(&bad.iter().take(MAX_LISTED).cloned().collect::<Vec<_>>().join("; "));
        if bad.len() > MAX_LISTED {
            msg.push_str("; ...");
        }
        return Err(Error::Data(msg));
    }
    if points.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    Ok(Ingested { points, filtered })
}

pub fn read_observations_path(path: &Path, opts: IngestOptions) -> Result<Ingested> {
    let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_observations(f, opts).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes `budget_flops,n_params,d_tokens,loss` with round-trip exact
/// numbers.
pub fn write_observations<W: Write>(writer: W, points: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["budget_flops", "n_params", "d_tokens", "loss"]).map_err(io)?;
    for p in points {
        w.write_record([p.budget, p.n, p.d, p.loss].map(|v| v.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}
