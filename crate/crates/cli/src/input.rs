//! CSV ingestion.
//!
//! Columns: `y`, `x`, then either a single integer-coded instrument `z`
//! (judge or cell ids) or dense instruments `z1..zK`; optionally covariates
//! as one integer-coded `w` or dense `w1..wL`. Other columns are ignored.

use std::path::Path;

use l3o_core::design::{Dataset, Encoding};
use l3o_core::linalg::Mat;

use crate::{CliError, CliResult};

fn schema(msg: String) -> CliError {
    CliError::Schema(msg)
}

/// Block of columns named `prefix` or `prefix1..prefixN`.
enum Columns {
    Labels(usize),
    Dense(Vec<usize>),
}

fn find_columns(headers: &[String], prefix: &str) -> CliResult<Option<Columns>> {
    if let Some(i) = headers.iter().position(|h| h == prefix) {
        return Ok(Some(Columns::Labels(i)));
    }
    let mut numbered: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()).map(|k| (k, i)))
        .collect();
    if numbered.is_empty() {
        return Ok(None);
    }
    numbered.sort();
    for (want, (k, _)) in numbered.iter().enumerate() {
        if *k != want + 1 {
            return Err(schema(format!("column {prefix}{} is missing (found {prefix}{k})", want + 1)));
        }
    }
    Ok(Some(Columns::Dense(numbered.into_iter().map(|(_, i)| i).collect())))
}

fn parse_f64(field: &str, column: &str, row: usize) -> CliResult<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| schema(format!("column {column}, row {row}: cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(schema(format!("column {column}, row {row}: value is not finite")));
    }
    Ok(v)
}

fn parse_label(field: &str, column: &str, row: usize) -> CliResult<i64> {
    field
        .trim()
        .parse()
        .map_err(|_| schema(format!("column {column}, row {row}: expected an integer id, got {field:?}")))
}

/// Read a dataset from CSV text.
pub fn read_dataset<R: std::io::Read>(reader: R) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| schema(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let col = |name: &str| -> CliResult<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| schema(format!("missing required column `{name}`")))
    };
    let yi = col("y")?;
    let xi = col("x")?;
    let z = find_columns(&headers, "z")?.ok_or_else(|| schema(String::from("missing instrument column `z` (or z1..zK)")))?;
    let w = find_columns(&headers, "w")?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut zl = Vec::new();
    let mut zd = Vec::new();
    let mut wl = Vec::new();
    let mut wd = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        // Row numbers count data lines from 1.
        let row = r + 1;
        let rec = rec.map_err(|e| schema(format!("row {row}: {e}")))?;
        let get = |i: usize| -> CliResult<&str> {
            rec.get(i).ok_or_else(|| schema(format!("row {row}: missing field for column {}", headers[i])))
        };
        y.push(parse_f64(get(yi)?, "y", row)?);
        x.push(parse_f64(get(xi)?, "x", row)?);
        match &z {
            Columns::Labels(i) => zl.push(parse_label(get(*i)?, "z", row)?),
            Columns::Dense(cols) => {
                for &i in cols {
                    zd.push(parse_f64(get(i)?, &headers[i], row)?);
                }
            }
        }
        match &w {
            Some(Columns::Labels(i)) => wl.push(parse_label(get(*i)?, "w", row)?),
            Some(Columns::Dense(cols)) => {
                for &i in cols {
                    wd.push(parse_f64(get(i)?, &headers[i], row)?);
                }
            }
            None => {}
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(schema(String::from("no data rows")));
    }
    let z = match z {
        Columns::Labels(_) => Encoding::categorical(&zl),
        Columns::Dense(cols) => Encoding::Dense(Mat::from_vec(n, cols.len(), zd)),
    };
    let w = match w {
        Some(Columns::Labels(_)) => Some(Encoding::categorical(&wl)),
        Some(Columns::Dense(cols)) => Some(Encoding::Dense(Mat::from_vec(n, cols.len(), wd))),
        None => None,
    };
    Ok(Dataset::new(y, x, z, w)?)
}

pub fn read_dataset_path(path: &Path) -> CliResult<Dataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| CliError::Schema(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(std::io::BufReader::new(f))
}

/// Write a dataset as CSV in the same layout [`read_dataset`] accepts.
pub fn write_dataset<W: std::io::Write>(ds: &Dataset, out: W) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![String::from("y"), String::from("x")];
    let block = |enc: &Encoding, p: &str, header: &mut Vec<String>| match enc {
        Encoding::Categorical { .. } => header.push(p.to_string()),
        Encoding::Dense(m) => header.extend((1..=m.cols()).map(|k| format!("{p}{k}"))),
    };
    block(&ds.z, "z", &mut header);
    if let Some(w) = &ds.w {
        block(w, "w", &mut header);
    }
    wtr.write_record(&header).map_err(|e| CliError::Other(e.to_string()))?;
    let cells = |enc: &Encoding, i: usize, rec: &mut Vec<String>| match enc {
        Encoding::Categorical { labels, .. } => rec.push(labels[i].to_string()),
        Encoding::Dense(m) => rec.extend(m.row(i).iter().map(|v| v.to_string())),
    };
    for i in 0..ds.n() {
        let mut rec = vec![ds.y[i].to_string(), ds.x[i].to_string()];
        cells(&ds.z, i, &mut rec);
        if let Some(w) = &ds.w {
            cells(w, i, &mut rec);
        }
        wtr.write_record(&rec).map_err(|e| CliError::Other(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
