//! TSV matrices and the ground-truth directory layout.
//!
//! Matrix files are UTF-8, tab separated: the header row holds a corner label
//! followed by column IDs, every other row a row ID followed by values.
//! Numbers are written in Rust's shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::synthetic::{GroundTruth, SignalTarget, SyntheticSpec};

/// Parsed TSV table: row IDs, column IDs and values.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

fn parse_err(row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column,
        message: message.into(),
    }
}

/// Parses a TSV table. Rows and columns in errors are 1-based and count the
/// header row and the ID column.
pub fn parse_table(text: &str) -> Result<Table> {
    let mut lines = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, 1, "empty input"))?;
    let col_ids: Vec<String> = header.split('\t').skip(1).map(str::to_owned).collect();
    if col_ids.is_empty() {
        return Err(parse_err(1, 2, "header has no column IDs"));
    }
    let n = col_ids.len();
    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        let mut fields = line.split('\t');
        row_ids.push(fields.next().unwrap_or_default().to_owned());
        let mut count = 0;
        for (j, field) in fields.enumerate() {
            let column = j + 2;
            if j >= n {
                return Err(parse_err(row, column, format!("expected {n} values, found more")));
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(row, column, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, column, format!("non-finite value {field:?}")));
            }
            data.push(v);
            count += 1;
        }
        if count < n {
            return Err(parse_err(row, count + 2, format!("expected {n} values, found {count}")));
        }
    }
    if row_ids.is_empty() {
        return Err(parse_err(2, 1, "no data rows"));
    }
    let values = DMatrix::from_row_slice(row_ids.len(), n, &data);
    Ok(Table {
        row_ids,
        col_ids,
        values,
    })
}

pub fn read_table(path: &Path) -> Result<Table> {
    parse_table(&fs::read_to_string(path)?)
}

/// Reads a variables × samples matrix.
pub fn read_data_matrix(path: &Path) -> Result<DataMatrix> {
    let t = read_table(path)?;
    DataMatrix::new(t.values, t.row_ids, t.col_ids)
}

pub fn format_table(corner: &str, row_ids: &[String], col_ids: &[String], values: &DMatrix<f64>) -> String {
    assert_eq!(values.shape(), (row_ids.len(), col_ids.len()));
    let mut s = String::with_capacity(values.len() * 22);
    s.push_str(corner);
    for c in col_ids {
        s.push('\t');
        s.push_str(c);
    }
    s.push('\n');
    for (i, id) in row_ids.iter().enumerate() {
        s.push_str(id);
        for j in 0..values.ncols() {
            let _ = write!(s, "\t{:?}", values[(i, j)]);
        }
        s.push('\n');
    }
    s
}

pub fn write_table(
    path: &Path,
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    fs::write(path, format_table(corner, row_ids, col_ids, values))?;
    Ok(())
}

pub fn write_data_matrix(path: &Path, x: &DataMatrix) -> Result<()> {
    write_table(path, "id", x.variable_ids(), x.sample_ids(), x.values())
}

/// Default identifiers used for generated data.
pub fn variable_ids(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("var{i}")).collect()
}

pub fn sample_ids(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("s{j}")).collect()
}

/// Writes `X.tsv`, `Y_k.tsv`, `support_k.txt` (variable IDs, one per line)
/// and `spec.json` into `dir`.
pub fn write_ground_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    fs::create_dir_all(dir)?;
    let vars = variable_ids(truth.spec.p);
    let samples = sample_ids(truth.spec.n);
    write_table(&dir.join("X.tsv"), "id", &vars, &samples, &truth.x_noisy)?;
    for (k, s) in truth.signals.iter().enumerate() {
        write_table(&dir.join(format!("Y_{}.tsv", k + 1)), "id", &vars, &samples, &s.matrix())?;
        let mut lines = String::new();
        for &i in &s.support {
            lines.push_str(&vars[i]);
            lines.push('\n');
        }
        fs::write(dir.join(format!("support_{}.txt", k + 1)), lines)?;
    }
    let mut spec = serde_json::to_string_pretty(&truth.spec)?;
    spec.push('\n');
    fs::write(dir.join("spec.json"), spec)?;
    Ok(())
}

pub fn read_spec(path: &Path) -> Result<SyntheticSpec> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Contents of a ground-truth directory.
#[derive(Debug, Clone)]
pub struct StoredTruth {
    pub spec: SyntheticSpec,
    pub x: DataMatrix,
    pub targets: Vec<SignalTarget>,
}

pub fn read_ground_truth(dir: &Path) -> Result<StoredTruth> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("truth directory {} not found", dir.display()),
        )));
    }
    let spec = read_spec(&dir.join("spec.json"))?;
    let x = read_data_matrix(&dir.join("X.tsv"))?;
    let index: std::collections::HashMap<&str, usize> = x
        .variable_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut targets = Vec::with_capacity(spec.k);
    for k in 1..=spec.k {
        let y = read_table(&dir.join(format!("Y_{k}.tsv")))?;
        if y.values.shape() != x.values().shape() {
            return Err(Error::DimensionMismatch(format!("Y_{k}.tsv does not match X.tsv")));
        }
        let text = fs::read_to_string(dir.join(format!("support_{k}.txt")))?;
        let mut support = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let id = line.trim();
            if id.is_empty() {
                continue;
            }
            let &i = index.get(id).ok_or_else(|| {
                parse_err(line_no + 1, 1, format!("support_{k}.txt names unknown variable {id:?}"))
            })?;
            support.push(i);
        }
        support.sort_unstable();
        targets.push(SignalTarget {
            y: y.values,
            support,
            rank: spec.d,
        });
    }
    Ok(StoredTruth { spec, x, targets })
}
