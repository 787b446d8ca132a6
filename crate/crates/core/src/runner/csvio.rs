//! Dataset and result tables as CSV.
//!
//! Data files have the header `x,y,v1,...,vp`, may start with `#` comment
//! lines, and store values with 17 significant digits so they read back
//! bit-for-bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Format a double so that parsing it returns the same value.
pub fn fmt_exact(v: f64) -> String {
    format!("{v:.16e}")
}

/// `# key=value ...` provenance line written at the top of every output.
pub fn provenance(config_hash: &str, seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!("# config_hash={config_hash} seed={}", seeds.join(","))
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset, comments: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(out, "{c}")?;
    }
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("v{j}")));
    writeln!(out, "{}", header.join(","))?;
    let mut row = Vec::with_capacity(data.p() + 2);
    for i in 0..data.n() {
        row.clear();
        row.push(fmt_exact(data.x[i]));
        row.push(fmt_exact(data.y[i]));
        row.extend(data.v.row(i).iter().map(|&e| fmt_exact(e)));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Number of `#` lines before the header, so errors can cite file lines.
fn leading_comment_lines(path: &Path) -> Result<usize> {
    let reader = BufReader::new(File::open(path)?);
    let mut count = 0;
    for line in reader.lines() {
        if line?.starts_with('#') {
            count += 1;
        } else {
            break;
        }
    }
    Ok(count)
}

/// Read a data file. With `expect_p`, the covariate count is checked
/// against it and missing columns are named.
pub fn read_dataset(path: impl AsRef<Path>, expect_p: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let header_line = leading_comment_lines(path)? + 1;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let data_err = |line: usize, message: String| Error::Data { line, message };
    for (idx, want) in ["x", "y"].iter().enumerate() {
        match header.get(idx) {
            Some(h) if h == want => {}
            Some(h) => {
                return Err(data_err(
                    header_line,
                    format!("column {} must be {want}, found {h:?}", idx + 1),
                ))
            }
            None => return Err(data_err(header_line, format!("missing column {want}"))),
        }
    }
    let p = header.len() - 2;
    for (j, h) in header[2..].iter().enumerate() {
        if *h != format!("v{}", j + 1) {
            return Err(data_err(
                header_line,
                format!("expected covariate column v{}, found {h:?}", j + 1),
            ));
        }
    }
    if let Some(want) = expect_p {
        if p < want {
            let missing: Vec<String> = (p + 1..=want).map(|j| format!("v{j}")).collect();
            return Err(data_err(
                header_line,
                format!("missing covariate columns {}", missing.join(",")),
            ));
        }
        if p > want {
            return Err(data_err(
                header_line,
                format!("found {p} covariate columns, expected {want}"),
            ));
        }
    }

    let (mut x, mut y, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |pos| pos.line() as usize);
        if record.len() != header.len() {
            return Err(data_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for (k, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                data_err(
                    line,
                    format!("cannot parse {field:?} in column {}", header[k]),
                )
            })?;
            if !value.is_finite() {
                return Err(data_err(
                    line,
                    format!("non-finite value in column {}", header[k]),
                ));
            }
            match k {
                0 => x.push(value),
                1 => y.push(value),
                _ => v.push(value),
            }
        }
    }
    let n = x.len();
    if n == 0 {
        return Err(data_err(header_line, "file has no data rows".into()));
    }
    let v = Array2::from_shape_vec((n, p), v).expect("every row has p covariates");
    Dataset::new(v, Array1::from(x), Array1::from(y))
}

/// Write named columns of equal length.
pub fn write_columns(
    path: impl AsRef<Path>,
    comments: &[String],
    names: &[&str],
    columns: &[&[f64]],
) -> Result<()> {
    let n = columns.first().map_or(0, |c| c.len());
    if names.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
        return Err(Error::shape("column names and lengths disagree"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(out, "{c}")?;
    }
    writeln!(out, "{}", names.join(","))?;
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|c| fmt_exact(c[i])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a file written by [`write_columns`], returning headers and columns.
pub fn read_columns(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |pos| pos.line() as usize);
        for (k, field) in record.iter().enumerate() {
            columns[k].push(field.parse().map_err(|_| Error::Data {
                line,
                message: format!("cannot parse {field:?} in column {}", names[k]),
            })?);
        }
    }
    Ok((names, columns))
}
