//! CSV ingestion with column roles taken from header prefixes.

use std::io::Read;
use std::path::Path;

use asf_core::data::{looks_discrete, Dataset, XKind, MAX_DISCRETE_LEVELS};

use crate::error::IngestError;

/// A dataset together with the number of incomplete rows that were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub data: Dataset,
    pub rows_read: usize,
    pub rows_dropped: usize,
}

#[derive(Debug)]
struct Roles {
    y: usize,
    x: usize,
    z: Vec<usize>,
    w: Vec<usize>,
}

/// Column for a scalar role: an exact (case-insensitive) name match wins,
/// otherwise the single column with that prefix.
fn scalar_role(headers: &[String], role: &str) -> Result<usize, IngestError> {
    if let Some(i) = headers.iter().position(|h| h.eq_ignore_ascii_case(role)) {
        return Ok(i);
    }
    let hits: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].to_ascii_lowercase().starts_with(role)).collect();
    match hits.len() {
        0 => Err(IngestError::MissingColumn(role.into())),
        1 => Ok(hits[0]),
        _ => Err(IngestError::AmbiguousColumn { role: role.into(), columns: hits.iter().map(|&i| headers[i].clone()).collect() }),
    }
}

fn roles(headers: &[String]) -> Result<Roles, IngestError> {
    let prefixed = |p: char| -> Vec<usize> { (0..headers.len()).filter(|&i| headers[i].to_ascii_lowercase().starts_with(p)).collect() };
    let (z, w) = (prefixed('z'), prefixed('w'));
    let y = scalar_role(headers, "y")?;
    let x = scalar_role(headers, "x")?;
    if z.is_empty() {
        return Err(IngestError::MissingColumn("z".into()));
    }
    if w.is_empty() {
        return Err(IngestError::MissingColumn("w".into()));
    }
    Ok(Roles { y, x, z, w })
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Parses CSV text. Rows with a blank (or `NA`) required cell are dropped and
/// counted; `x_kind` overrides the automatic discreteness check.
pub fn ingest_reader<R: Read>(reader: R, x_kind: Option<XKind>) -> Result<Ingested, IngestError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let read_err = |e: csv::Error| IngestError::Read { path: "<csv>".into(), message: e.to_string() };
    let headers: Vec<String> = csv.headers().map_err(read_err)?.iter().map(str::to_string).collect();
    let r = roles(&headers)?;
    let needed: Vec<usize> = [r.y, r.x].into_iter().chain(r.z.iter().copied()).chain(r.w.iter().copied()).collect();
    let (mut y, mut x) = (Vec::new(), Vec::new());
    let mut z = vec![Vec::new(); r.z.len()];
    let mut w = vec![Vec::new(); r.w.len()];
    let (mut rows_read, mut rows_dropped) = (0, 0);
    for (k, record) in csv.records().enumerate() {
        let record = record.map_err(read_err)?;
        rows_read += 1;
        // header is line 1
        let row = k + 2;
        let cell = |c: usize| record.get(c).unwrap_or("");
        if needed.iter().any(|&c| is_missing(cell(c))) {
            rows_dropped += 1;
            continue;
        }
        let parse = |c: usize| -> Result<f64, IngestError> {
            let v = cell(c);
            v.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .ok_or_else(|| IngestError::UnparsableCell { row, column: headers[c].clone(), value: v.to_string() })
        };
        y.push(parse(r.y)?);
        x.push(parse(r.x)?);
        for (col, &c) in z.iter_mut().zip(&r.z) {
            col.push(parse(c)?);
        }
        for (col, &c) in w.iter_mut().zip(&r.w) {
            col.push(parse(c)?);
        }
    }
    if y.is_empty() {
        return Err(IngestError::EmptyAfterFiltering);
    }
    let kind = x_kind.unwrap_or(if looks_discrete(&x, MAX_DISCRETE_LEVELS) { XKind::Discrete } else { XKind::Continuous });
    let names = |idx: &[usize]| idx.iter().map(|&c| headers[c].clone()).collect();
    let data = Dataset::with_names(y, x, z, w, names(&r.z), names(&r.w), kind).map_err(|e| IngestError::Read { path: "<csv>".into(), message: e.to_string() })?;
    Ok(Ingested { data, rows_read, rows_dropped })
}

pub fn ingest_csv(path: &Path, x_kind: Option<XKind>) -> Result<Ingested, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::Read { path: path.display().to_string(), message: e.to_string() })?;
    ingest_reader(file, x_kind).map_err(|e| match e {
        IngestError::Read { message, .. } => IngestError::Read { path: path.display().to_string(), message },
        other => other,
    })
}

/// Writes `y, x, z…, w…` with the dataset's column names.
pub fn write_csv<W: std::io::Write>(data: &Dataset, out: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string(), "x".to_string()];
    header.extend(data.z_names.iter().cloned());
    header.extend(data.w_names.iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![data.y[i], data.x[i]];
        row.extend(data.z.iter().map(|c| c[i]));
        row.extend(data.w.iter().map(|c| c[i]));
        wtr.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    wtr.flush()?;
    Ok(())
}
