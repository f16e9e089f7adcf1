//! Flat-file output: per-eta CSV tables and a JSON dump of the whole study.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{EtaSummary, StudyOutput};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "eta",
    "delta_eff",
    "alpha_or_kstar",
    "err_mean",
    "err_kyfan",
    "residual_mean",
    "trials",
    "truncated_count",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_error(path: &Path, what: &str, source: std::io::Error) -> Error {
    Error::Io {
        context: format!("{what} {}", path.display()),
        source,
    }
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_summaries_csv(path: impl AsRef<Path>, rows: &[EtaSummary]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            fmt_real(r.eta),
            fmt_real(r.delta_eff),
            fmt_real(r.alpha_or_kstar),
            fmt_real(r.err_mean),
            fmt_real(r.err_kyfan),
            fmt_real(r.residual_mean),
            r.trials.to_string(),
            r.truncated_count.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, "writing", e))
}

pub fn read_summaries_csv(path: impl AsRef<Path>) -> Result<Vec<EtaSummary>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Config(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let real = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|e| Error::Config(format!("{}: column {}: {e}", path.display(), CSV_HEADER[i])))
        };
        let count = |i: usize| -> Result<usize> {
            record[i]
                .parse()
                .map_err(|e| Error::Config(format!("{}: column {}: {e}", path.display(), CSV_HEADER[i])))
        };
        rows.push(EtaSummary {
            eta: real(0)?,
            delta_eff: real(1)?,
            alpha_or_kstar: real(2)?,
            err_mean: real(3)?,
            err_kyfan: real(4)?,
            residual_mean: real(5)?,
            trials: count(6)?,
            truncated_count: count(7)?,
        });
    }
    Ok(rows)
}

/// Arbitrary real-valued table with a header row.
pub fn write_table_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        Error::check_len(header.len(), row.len())?;
        w.write_record(row.iter().map(|&v| fmt_real(v))).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, "writing", e))
}

pub fn write_json(path: impl AsRef<Path>, output: &StudyOutput) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_error(path, "creating", e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, output)
        .map_err(|e| io_error(path, "writing", std::io::Error::other(e)))?;
    w.flush().map_err(|e| io_error(path, "writing", e))
}

pub fn read_json(path: impl AsRef<Path>) -> Result<StudyOutput> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, "opening", e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// JSON has no NaN; missing parameters travel as `null`.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
