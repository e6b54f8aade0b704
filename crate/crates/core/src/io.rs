//! CSV input and output.
//!
//! Curves: no header, first record is the grid, every further record one
//! curve. Data: header row with an outcome column `y`, an optional binary
//! `group` column and covariates in all remaining columns. Formats are
//! described in `docs/formats.md`.

use std::fmt;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fdata::{FunctionalSample, Grid};
use crate::fpca::StandardizedDesign;

pub const OUTCOME_COLUMN: &str = "y";
pub const GROUP_COLUMN: &str = "group";

/// One schema problem. `line` and `column` are 1-based; `column` 0 means the whole record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub file: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.column == 0 {
            write!(f, "{}:{}: {}", self.file, self.line, self.message)
        } else {
            write!(
                f,
                "{}:{}:{}: {}",
                self.file, self.line, self.column, self.message
            )
        }
    }
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::Schema {
            file: v.file.clone(),
            message: format!("line {}, column {}: {}", v.line, v.column, v.message),
        }
    }
}

struct Records {
    file: String,
    rows: Vec<(usize, Vec<String>)>,
}

fn load(path: &Path, headers: bool) -> Result<(Records, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(rows.len() + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    let file = path.display().to_string();
    let header = if headers && !rows.is_empty() {
        Some(rows.remove(0).1)
    } else {
        None
    };
    Ok((Records { file, rows }, header))
}

impl Records {
    fn violation(&self, line: usize, column: usize, message: impl Into<String>) -> Violation {
        Violation {
            file: self.file.clone(),
            line,
            column,
            message: message.into(),
        }
    }

    /// Parse one record as finite floats, logging each bad cell.
    fn numbers(&self, line: usize, fields: &[String], out: &mut Vec<Violation>) -> Vec<f64> {
        fields
            .iter()
            .enumerate()
            .map(|(j, s)| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                Ok(_) => {
                    out.push(self.violation(line, j + 1, format!("non-finite value `{s}`")));
                    f64::NAN
                }
                Err(_) => {
                    out.push(self.violation(line, j + 1, format!("not a number: `{s}`")));
                    f64::NAN
                }
            })
            .collect()
    }
}

fn check_grid(rec: &Records, line: usize, points: &[f64], out: &mut Vec<Violation>) {
    if points.len() < 2 {
        out.push(rec.violation(
            line,
            0,
            format!("grid needs at least 2 points, got {}", points.len()),
        ));
    }
    for (j, &t) in points.iter().enumerate() {
        if t.is_finite() && !(0.0..=1.0).contains(&t) {
            out.push(rec.violation(line, j + 1, format!("grid point {t} outside [0, 1]")));
        }
        if j > 0 && points[j - 1].is_finite() && t.is_finite() && t <= points[j - 1] {
            out.push(rec.violation(line, j + 1, "grid not strictly increasing"));
        }
    }
}

fn parse_curves(rec: &Records) -> (Option<(Vec<f64>, Vec<Vec<f64>>)>, Vec<Violation>) {
    let mut out = Vec::new();
    let Some((grid_line, grid_fields)) = rec.rows.first() else {
        out.push(rec.violation(1, 0, "file is empty"));
        return (None, out);
    };
    let points = rec.numbers(*grid_line, grid_fields, &mut out);
    check_grid(rec, *grid_line, &points, &mut out);
    let m = points.len();
    let mut curves = Vec::with_capacity(rec.rows.len().saturating_sub(1));
    for (line, fields) in &rec.rows[1..] {
        if fields.len() != m {
            out.push(rec.violation(
                *line,
                0,
                format!("expected {m} values, found {}", fields.len()),
            ));
            continue;
        }
        curves.push(rec.numbers(*line, fields, &mut out));
    }
    if rec.rows.len() < 3 {
        out.push(rec.violation(
            grid_line + 1,
            0,
            format!("need at least 2 curves, found {}", rec.rows.len() - 1),
        ));
    }
    (Some((points, curves)), out)
}

/// Schema report for a curves file; empty when the file is valid.
pub fn validate_curves(path: impl AsRef<Path>) -> Result<Vec<Violation>> {
    let (rec, _) = load(path.as_ref(), false)?;
    Ok(parse_curves(&rec).1)
}

pub fn read_curves(path: impl AsRef<Path>) -> Result<FunctionalSample> {
    let (rec, _) = load(path.as_ref(), false)?;
    let (parsed, violations) = parse_curves(&rec);
    if let Some(v) = violations.into_iter().next() {
        return Err(v.into());
    }
    let (points, curves) = parsed.expect("parsed when there are no violations");
    let m = points.len();
    let values = DMatrix::from_fn(curves.len(), m, |i, j| curves[i][j]);
    FunctionalSample::new(Grid::new(points)?, values)
}

/// Outcome, covariates and optional group read from a data file.
#[derive(Debug, Clone)]
pub struct DataTable {
    pub covariate_names: Vec<String>,
    pub covariates: DMatrix<f64>,
    pub outcome: DVector<f64>,
    pub group: Option<Vec<f64>>,
}

impl DataTable {
    pub fn n(&self) -> usize {
        self.outcome.len()
    }
}

fn parse_data(rec: &Records, header: Option<&[String]>) -> (Option<DataTable>, Vec<Violation>) {
    let mut out = Vec::new();
    let Some(header) = header else {
        out.push(rec.violation(1, 0, "file is empty"));
        return (None, out);
    };
    let header_line = rec.rows.first().map_or(1, |r| r.0.saturating_sub(1).max(1));
    let y_col = header.iter().position(|h| h == OUTCOME_COLUMN);
    if y_col.is_none() {
        out.push(rec.violation(
            header_line,
            0,
            format!("missing outcome column `{OUTCOME_COLUMN}`"),
        ));
    }
    let g_col = header.iter().position(|h| h == GROUP_COLUMN);
    let cov_cols: Vec<usize> = (0..header.len())
        .filter(|j| Some(*j) != y_col && Some(*j) != g_col)
        .collect();
    if cov_cols.is_empty() {
        out.push(rec.violation(header_line, 0, "no covariate columns"));
    }
    for (j, h) in header.iter().enumerate() {
        if h.is_empty() {
            out.push(rec.violation(header_line, j + 1, "empty column name"));
        } else if header[..j].contains(h) {
            out.push(rec.violation(header_line, j + 1, format!("duplicate column `{h}`")));
        }
    }
    let width = header.len();
    let mut values = Vec::with_capacity(rec.rows.len());
    for (line, fields) in &rec.rows {
        if fields.len() != width {
            out.push(rec.violation(
                *line,
                0,
                format!("expected {width} values, found {}", fields.len()),
            ));
            continue;
        }
        let row = rec.numbers(*line, fields, &mut out);
        if let Some(g) = g_col {
            if row[g].is_finite() && row[g] != 0.0 && row[g] != 1.0 {
                out.push(rec.violation(
                    *line,
                    g + 1,
                    format!("group must be 0 or 1, got {}", row[g]),
                ));
            }
        }
        values.push(row);
    }
    if values.len() < 2 {
        out.push(rec.violation(
            header_line,
            0,
            format!("need at least 2 data rows, found {}", values.len()),
        ));
    }
    if !out.is_empty() {
        return (None, out);
    }
    let y_col = y_col.expect("checked");
    let n = values.len();
    let table = DataTable {
        covariate_names: cov_cols.iter().map(|&j| header[j].clone()).collect(),
        covariates: DMatrix::from_fn(n, cov_cols.len(), |i, k| values[i][cov_cols[k]]),
        outcome: DVector::from_fn(n, |i, _| values[i][y_col]),
        group: g_col.map(|g| values.iter().map(|r| r[g]).collect()),
    };
    (Some(table), out)
}

/// Schema report for a data file; empty when the file is valid.
pub fn validate_data(path: impl AsRef<Path>) -> Result<Vec<Violation>> {
    let (rec, header) = load(path.as_ref(), true)?;
    Ok(parse_data(&rec, header.as_deref()).1)
}

pub fn read_data(path: impl AsRef<Path>) -> Result<DataTable> {
    let (rec, header) = load(path.as_ref(), true)?;
    let (table, violations) = parse_data(&rec, header.as_deref());
    match table {
        Some(t) => Ok(t),
        None => Err(violations
            .into_iter()
            .next()
            .expect("a violation explains the failure")
            .into()),
    }
}

/// Curves and data checked together, including the row-count agreement.
pub fn validate_inputs(curves: impl AsRef<Path>, data: Option<&Path>) -> Result<Vec<Violation>> {
    let (crec, _) = load(curves.as_ref(), false)?;
    let mut out = parse_curves(&crec).1;
    if let Some(data) = data {
        let (drec, header) = load(data, true)?;
        out.extend(parse_data(&drec, header.as_deref()).1);
        let n_curves = crec.rows.len().saturating_sub(1);
        if !crec.rows.is_empty() && header.is_some() && drec.rows.len() != n_curves {
            out.push(drec.violation(
                0,
                0,
                format!("{} data rows but {n_curves} curves", drec.rows.len()),
            ));
        }
    }
    Ok(out)
}

/// Design file: header `a1..aL,c1..cp` of standardized scores and covariates.
pub fn read_design(path: impl AsRef<Path>) -> Result<StandardizedDesign> {
    let (rec, header) = load(path.as_ref(), true)?;
    let header = header.ok_or_else(|| Error::from(rec.violation(1, 0, "file is empty")))?;
    let mut score_cols = Vec::new();
    let mut cov_cols = Vec::new();
    for (j, h) in header.iter().enumerate() {
        match h.chars().next() {
            Some('a') => score_cols.push(j),
            Some('c') => cov_cols.push(j),
            _ => {
                return Err(rec
                    .violation(
                        1,
                        j + 1,
                        format!("column `{h}` is neither a score (a*) nor a covariate (c*)"),
                    )
                    .into())
            }
        }
    }
    if score_cols.is_empty() || cov_cols.is_empty() {
        return Err(rec
            .violation(1, 0, "design needs at least one a* and one c* column")
            .into());
    }
    let mut violations = Vec::new();
    let mut values = Vec::new();
    for (line, fields) in &rec.rows {
        if fields.len() != header.len() {
            violations.push(rec.violation(
                *line,
                0,
                format!("expected {} values, found {}", header.len(), fields.len()),
            ));
            continue;
        }
        values.push(rec.numbers(*line, fields, &mut violations));
    }
    if let Some(v) = violations.into_iter().next() {
        return Err(v.into());
    }
    let n = values.len();
    StandardizedDesign::from_parts(
        DMatrix::from_fn(n, score_cols.len(), |i, k| values[i][score_cols[k]]),
        DMatrix::from_fn(n, cov_cols.len(), |i, k| values[i][cov_cols[k]]),
    )
}

/// Weights file `id,weight` with ids `1..=n` in order.
pub fn read_weights(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let (rec, header) = load(path.as_ref(), true)?;
    if header.as_deref() != Some(&["id".to_string(), "weight".to_string()][..]) {
        return Err(rec.violation(1, 0, "header must be `id,weight`").into());
    }
    let mut violations = Vec::new();
    let mut weights = Vec::with_capacity(rec.rows.len());
    for (i, (line, fields)) in rec.rows.iter().enumerate() {
        if fields.len() != 2 {
            violations.push(rec.violation(
                *line,
                0,
                format!("expected 2 values, found {}", fields.len()),
            ));
            continue;
        }
        if fields[0].parse::<usize>().ok() != Some(i + 1) {
            violations.push(rec.violation(*line, 1, format!("expected id {}", i + 1)));
        }
        let w = rec.numbers(*line, &fields[1..], &mut violations)[0];
        if w.is_finite() && w <= 0.0 {
            violations.push(rec.violation(*line, 2, "weights must be positive"));
        }
        weights.push(w);
    }
    if let Some(v) = violations.into_iter().next() {
        return Err(v.into());
    }
    Ok(DVector::from_vec(weights))
}

/// Shortest round-trip text for `v`, switching to exponent form outside `[1e-5, 1e16)`.
pub fn num(v: impl std::borrow::Borrow<f64>) -> String {
    let v = *v.borrow();
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Buffered CSV writer with shortest round-trip float formatting.
pub struct TableWriter {
    inner: csv::Writer<File>,
}

impl TableWriter {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_weights(path: impl AsRef<Path>, weights: &DVector<f64>) -> Result<()> {
    let mut w = TableWriter::create(path, &["id", "weight"])?;
    for (i, v) in weights.iter().enumerate() {
        w.row([(i + 1).to_string(), num(*v)])?;
    }
    w.finish()
}

pub fn write_key_values(path: impl AsRef<Path>, rows: &[(String, String)]) -> Result<()> {
    let mut w = TableWriter::create(path, &["key", "value"])?;
    for (k, v) in rows {
        w.row([k, v])?;
    }
    w.finish()
}

/// Curves in the input layout: grid record, then one record per row of `values`.
pub fn write_curves(path: impl AsRef<Path>, grid: &Grid, values: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(grid.points().iter().map(num))?;
    for row in values.row_iter() {
        w.write_record(row.iter().map(num))?;
    }
    w.flush()?;
    Ok(())
}

/// Data file with covariates, outcome and optional group.
pub fn write_data(path: impl AsRef<Path>, table: &DataTable) -> Result<()> {
    let mut header: Vec<&str> = vec![OUTCOME_COLUMN];
    if table.group.is_some() {
        header.push(GROUP_COLUMN);
    }
    header.extend(table.covariate_names.iter().map(String::as_str));
    let mut w = TableWriter::create(path, &header)?;
    for i in 0..table.n() {
        let mut row = vec![num(table.outcome[i])];
        if let Some(g) = &table.group {
            row.push(num(g[i]));
        }
        row.extend(table.covariates.row(i).iter().map(num));
        w.row(row)?;
    }
    w.finish()
}

pub fn write_design(path: impl AsRef<Path>, design: &StandardizedDesign) -> Result<()> {
    let mut header: Vec<String> = (1..=design.rank()).map(|k| format!("a{k}")).collect();
    header.extend((1..=design.n_covariates()).map(|j| format!("c{j}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = TableWriter::create(path, &refs)?;
    for i in 0..design.n() {
        w.row(
            design
                .a_star
                .row(i)
                .iter()
                .chain(design.c_star.row(i).iter())
                .map(num),
        )?;
    }
    w.finish()
}
