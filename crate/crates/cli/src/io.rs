use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use variscan::CovariateMatrix;

use crate::error::{CliError, CliResult};

/// Shortest text that parses back to the same f64; exponent form outside
/// a readable magnitude range.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// CSV writer whose first line is `# config-hash: <hash>`.
pub struct TableWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl TableWriter {
    pub fn create(path: &Path, hash: &str, header: &[&str]) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# config-hash: {hash}").map_err(|e| CliError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(buf);
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, cells: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(cells)?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::Data(e.to_string()))
    }
}

/// Metric/value pairs in a two-column table.
pub fn write_key_values(path: &Path, hash: &str, pairs: &[(String, String)]) -> CliResult<()> {
    let mut w = TableWriter::create(path, hash, &["metric", "value"])?;
    for (k, v) in pairs {
        w.row([k.as_str(), v.as_str()])?;
    }
    w.finish()
}

pub fn read_key_values(path: &Path) -> CliResult<Vec<(String, String)>> {
    let table = read_table(path)?;
    let m = table.column("metric")?;
    let v = table.column("value")?;
    Ok(table.rows.iter().map(|r| (r[m].clone(), r[v].clone())).collect())
}

/// Raw text cells with the first non-comment row as header.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    path: String,
}

impl Table {
    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.find(name)
            .ok_or_else(|| CliError::Data(format!("{}: no `{name}` column", self.path)))
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h.eq_ignore_ascii_case(name))
    }

    pub fn floats(&self, col: usize) -> CliResult<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| parse_cell(&r[col], &self.path, i + 2, col + 1))
            .collect()
    }
}

fn parse_cell(cell: &str, path: &str, row: usize, col: usize) -> CliResult<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Data(format!("{path}: row {row}, column {col}: `{cell}` is not a finite number")))
}

fn raw_records(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::Data(format!("{}: {other:?}", path.display())),
        })?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push(rec.iter().map(str::to_string).collect());
    }
    Ok(out)
}

/// Header-first CSV; every row must match the header width.
pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut records = raw_records(path)?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: empty file", path.display())));
    }
    let header = records.remove(0);
    check_widths(&records, header.len(), path, 2)?;
    Ok(Table { header, rows: records, path: path.display().to_string() })
}

fn check_widths(rows: &[Vec<String>], width: usize, path: &Path, first_line: usize) -> CliResult<()> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(CliError::Data(format!(
            "{}: row {} has {} cells, expected {width}",
            path.display(),
            i + first_line,
            r.len()
        )));
    }
    Ok(())
}

/// Covariates read from disk: column names (generated when absent) and the
/// matrix with its missing mask.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestedCovariates {
    pub names: Vec<String>,
    pub matrix: CovariateMatrix,
}

/// Rows are subjects and columns covariates. The first row is a header when
/// any of its cells is non-numeric; empty cells are missing.
pub fn ingest_covariates(path: &Path) -> CliResult<IngestedCovariates> {
    let mut records = raw_records(path)?;
    let has_header = records
        .first()
        .is_some_and(|r| r.iter().any(|c| !c.is_empty() && c.parse::<f64>().is_err()));
    let names = if has_header { Some(records.remove(0)) } else { None };
    let p = names.as_ref().map_or_else(|| records.first().map_or(0, Vec::len), Vec::len);
    let first_line = if has_header { 2 } else { 1 };
    check_widths(&records, p, path, first_line)?;
    if records.len() < 2 || p < 2 {
        return Err(CliError::Data(format!(
            "{}: need at least 2 subjects and 2 covariates, got {} x {p}",
            path.display(),
            records.len()
        )));
    }
    let shown = path.display().to_string();
    let rows = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, c)| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        parse_cell(c, &shown, i + first_line, j + 1).map(Some)
                    }
                })
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(j) = (0..p).find(|&j| rows.iter().all(|r| r[j].is_none())) {
        return Err(CliError::Data(format!("{shown}: column {} has no observed values", j + 1)));
    }
    let matrix = CovariateMatrix::from_rows(&rows)?;
    let names = names.unwrap_or_else(|| (1..=p).map(|j| format!("x{j}")).collect());
    Ok(IngestedCovariates { names, matrix })
}

pub fn write_covariates(path: &Path, hash: &str, names: &[String], x: &CovariateMatrix) -> CliResult<()> {
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut w = TableWriter::create(path, hash, &header)?;
    for i in 0..x.n() {
        w.row((0..x.p()).map(|j| if x.is_missing(i, j) { String::new() } else { fmt_f64(x.get(i, j)) }))?;
    }
    w.finish()
}

/// Outcome rows: subject id, response w and optional event flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcomes {
    pub subjects: Vec<String>,
    pub w: Vec<f64>,
    pub delta: Option<Vec<bool>>,
}

pub fn read_outcomes(path: &Path) -> CliResult<Outcomes> {
    let table = read_table(path)?;
    let s = table.column("subject")?;
    let w = table.floats(table.column("w")?)?;
    let delta = match table.find("delta") {
        Some(d) => Some(
            table
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| match r[d].as_str() {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    other => Err(CliError::Data(format!(
                        "{}: row {}: delta must be 0 or 1, got `{other}`",
                        path.display(),
                        i + 2
                    ))),
                })
                .collect::<CliResult<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(Outcomes { subjects: table.rows.iter().map(|r| r[s].clone()).collect(), w, delta })
}

pub fn write_outcomes(path: &Path, hash: &str, subjects: &[usize], w: &[f64], delta: &[bool]) -> CliResult<()> {
    let mut out = TableWriter::create(path, hash, &["subject", "w", "delta"])?;
    for ((s, w), d) in subjects.iter().zip(w).zip(delta) {
        out.row([(s + 1).to_string(), fmt_f64(*w), u8::from(*d).to_string()])?;
    }
    out.finish()
}

/// 0-based cluster labels from a `covariate,cluster` table with 1-based
/// entries, ordered by covariate.
pub fn read_allocation(path: &Path) -> CliResult<Vec<usize>> {
    let table = read_table(path)?;
    let c = table.column("covariate")?;
    let k = table.column("cluster")?;
    let p = table.rows.len();
    let mut labels = vec![None; p];
    for (i, r) in table.rows.iter().enumerate() {
        let parse = |s: &str| s.parse::<usize>().ok().filter(|&v| v >= 1);
        let (Some(j), Some(label)) = (parse(&r[c]), parse(&r[k])) else {
            return Err(CliError::Data(format!("{}: row {}: expected 1-based integers", path.display(), i + 2)));
        };
        if j > p || labels[j - 1].is_some() {
            return Err(CliError::Data(format!("{}: covariate {j} out of range or repeated", path.display())));
        }
        labels[j - 1] = Some(label - 1);
    }
    Ok(labels.into_iter().map(|l| l.expect("every covariate filled")).collect())
}

pub fn write_allocation(path: &Path, hash: &str, names: &[String], labels: &[usize]) -> CliResult<()> {
    let mut w = TableWriter::create(path, hash, &["covariate", "name", "cluster"])?;
    for (j, (name, l)) in names.iter().zip(labels).enumerate() {
        w.row([(j + 1).to_string(), name.clone(), (l + 1).to_string()])?;
    }
    w.finish()
}

/// Predicted values from a predictions table: the `w_tilde` column when
/// present, otherwise the last column. Rows follow the subject column.
pub fn read_predictions(path: &Path) -> CliResult<(Vec<String>, Vec<f64>)> {
    let table = read_table(path)?;
    let s = table.column("subject")?;
    let col = table.find("w_tilde").unwrap_or(table.header.len() - 1);
    if col == s {
        return Err(CliError::Data(format!("{}: no prediction column", path.display())));
    }
    Ok((table.rows.iter().map(|r| r[s].clone()).collect(), table.floats(col)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut buf = BufWriter::new(file);
    serde_json::to_writer(&mut buf, value).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    buf.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 123456.789, -0.0, 5e-5] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
