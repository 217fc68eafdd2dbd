//! CSV input: a header row, the response in the first column and covariates in
//! the rest. The intercept is added here and must not appear in the file.

use crate::error::{CliError, CliResult};
use lrd_core::RegressionSample;
use nalgebra::DMatrix;
use std::io::Read;
use std::path::Path;

/// Fewest observations accepted from a file.
pub const MIN_ROWS: usize = 8;

pub fn read_csv(path: &Path) -> CliResult<RegressionSample> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    parse_csv(file).map_err(|e| match e {
        CliError::Io(msg) => CliError::Io(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_csv(reader: impl Read) -> CliResult<RegressionSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Io(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(CliError::Io("empty header row".into()));
    }
    let cols = headers.len();
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| CliError::Io(format!("row {row}: {e}")))?;
        if record.len() != cols {
            return Err(CliError::Io(format!("row {row}: expected {cols} columns, found {}", record.len())));
        }
        for (c, cell) in record.iter().enumerate() {
            let at = || format!("row {row}, column {} (`{}`)", c + 1, headers[c]);
            if cell.is_empty() {
                return Err(CliError::Io(format!("{}: missing value", at())));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Io(format!("{}: `{cell}` is not a number", at())))?;
            if !v.is_finite() {
                return Err(CliError::Io(format!("{}: `{cell}` is not a finite number", at())));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows < MIN_ROWS {
        return Err(CliError::Io(format!("need at least {MIN_ROWS} data rows, found {rows}")));
    }
    let y: Vec<f64> = values.iter().step_by(cols).copied().collect();
    let sample = if cols == 1 {
        RegressionSample::trend(y)
    } else {
        let cov = DMatrix::from_fn(rows, cols - 1, |i, j| values[i * cols + j + 1]);
        RegressionSample::new(y, &cov)
    };
    sample.map_err(CliError::from)
}

/// Write `sample` in the format [`read_csv`] accepts, dropping the intercept.
pub fn write_csv(sample: &RegressionSample, out: impl std::io::Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = sample.p();
    let mut header = vec!["y".to_string()];
    header.extend((1..p).map(|k| if p == 2 { "x".to_string() } else { format!("x{k}") }));
    w.write_record(&header).map_err(|e| CliError::io("write", e))?;
    for i in 0..sample.n() {
        let mut rec = vec![sample.y()[i].to_string()];
        rec.extend((1..p).map(|k| sample.x()[(i, k)].to_string()));
        w.write_record(&rec).map_err(|e| CliError::io("write", e))?;
    }
    w.flush().map_err(|e| CliError::io("write", e))
}
