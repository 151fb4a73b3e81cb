//! CSV and JSON data files.

use std::fs;
use std::io::Write;
use std::path::Path;

use gp3::verify::{CellResult, CellStatus};
use gp3::{Hyperrectangle, TrainingSet};
use serde::Serialize;

use crate::CliError;

/// Reads a training set with header `x1,...,xd,y`.
pub fn read_training_csv(path: &Path) -> Result<TrainingSet, CliError> {
    let (rows, targets) = read_table(path, "y")?;
    TrainingSet::from_rows(&rows, targets).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Reads rows of `x1..xd,<value>` with a fixed header.
pub fn read_table(path: &Path, value: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>), CliError> {
    let err = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let d = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=d).map(|k| format!("x{k}")).chain([value.to_string()]).collect();
    if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(err(format!("expected header {}", expected.join(","))));
    }
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let nums = rec
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| err(format!("row {}: expected finite decimal numbers", line + 2)))?;
        values.push(nums[d]);
        rows.push(nums[..d].to_vec());
    }
    if rows.is_empty() {
        return Err(err("no data rows".into()));
    }
    Ok((rows, values))
}

pub fn training_csv(train: &TrainingSet) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=train.dim()).map(|k| format!("x{k}")).chain(["y".into()]).collect();
    w.write_record(&header).expect("in-memory write");
    for (x, y) in train.rows().zip(train.targets()) {
        w.write_record(x.iter().chain([y]).map(|v| v.to_string())).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

/// One exported cell.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CellRecord {
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    #[serde(rename = "L_mu")]
    pub l_mu: Option<f64>,
    pub status: CellStatus,
}

impl From<&CellResult> for CellRecord {
    fn from(c: &CellResult) -> Self {
        Self {
            c: c.cell.center().to_vec(),
            b: c.cell.half_widths().to_vec(),
            lo: c.eval.map(|e| e.lo),
            hi: c.eval.map(|e| e.hi),
            l_mu: c.eval.map(|e| e.l_mu),
            status: c.status,
        }
    }
}

impl CellRecord {
    pub fn rect(&self) -> Result<Hyperrectangle, CliError> {
        Hyperrectangle::new(self.c.clone(), self.b.clone()).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Columns `c1..cd,b1..bd,lo,hi,L_mu,status`; unevaluated cells leave the
/// numeric bound fields empty.
pub fn cells_csv(d: usize, cells: &[CellRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=d)
        .map(|k| format!("c{k}"))
        .chain((1..=d).map(|k| format!("b{k}")))
        .chain(["lo", "hi", "L_mu", "status"].map(String::from))
        .collect();
    w.write_record(&header).expect("in-memory write");
    for c in cells {
        let rec: Vec<String> = c
            .c
            .iter()
            .chain(&c.b)
            .map(|v| v.to_string())
            .chain([opt(c.lo), opt(c.hi), opt(c.l_mu), c.status.as_str().to_string()])
            .collect();
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

pub fn parse_cells_csv(text: &str) -> Result<Vec<CellRecord>, CliError> {
    let err = |m: String| CliError::Config(format!("cell file: {m}"));
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.len() < 6 || (header.len() - 4) % 2 != 0 {
        return Err(err("unexpected header".into()));
    }
    let d = (header.len() - 4) / 2;
    let num = |s: &str| -> Result<f64, CliError> { s.parse().map_err(|_| err(format!("bad number {s:?}"))) };
    let optnum = |s: &str| -> Result<Option<f64>, CliError> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let f: Vec<&str> = rec.iter().collect();
        out.push(CellRecord {
            c: f[..d].iter().map(|s| num(s)).collect::<Result<_, _>>()?,
            b: f[d..2 * d].iter().map(|s| num(s)).collect::<Result<_, _>>()?,
            lo: optnum(f[2 * d])?,
            hi: optnum(f[2 * d + 1])?,
            l_mu: optnum(f[2 * d + 2])?,
            status: CellStatus::parse(f[2 * d + 3]).ok_or_else(|| err(format!("bad status {:?}", f[2 * d + 3])))?,
        });
    }
    Ok(out)
}

/// Writes via a temporary file and a rename so readers never see a partial
/// file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    f.write_all(contents)
        .and_then(|_| f.sync_all())
        .map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

/// Multilinear interpolation of values given on a full tensor grid.
#[derive(Debug, Clone)]
pub struct GridTable {
    axes: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl GridTable {
    pub fn from_rows(rows: &[Vec<f64>], values: &[f64]) -> Result<Self, CliError> {
        let err = |m: &str| CliError::Config(format!("g table: {m}"));
        let d = rows.first().map_or(0, Vec::len);
        let mut axes: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                let mut a: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                a.sort_by(f64::total_cmp);
                a.dedup();
                a
            })
            .collect();
        if axes.iter().any(|a| a.len() < 2) {
            return Err(err("every axis needs at least two grid values"));
        }
        let total: usize = axes.iter().map(Vec::len).product();
        if total != rows.len() {
            return Err(err("rows do not form a full tensor grid"));
        }
        let mut grid = vec![f64::NAN; total];
        for (r, v) in rows.iter().zip(values) {
            let idx = Self::flat(&axes, r).ok_or_else(|| err("row off grid"))?;
            grid[idx] = *v;
        }
        if grid.iter().any(|v| v.is_nan()) {
            return Err(err("duplicate grid points"));
        }
        axes.shrink_to_fit();
        Ok(Self { axes, values: grid })
    }

    fn flat(axes: &[Vec<f64>], x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (a, v) in axes.iter().zip(x) {
            let i = a.binary_search_by(|p| p.total_cmp(v)).ok()?;
            idx = idx * a.len() + i;
        }
        Some(idx)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Interpolated value; points outside the grid are clamped to it.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut lo_idx = vec![0; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let a = &self.axes[k];
            let v = x[k].clamp(a[0], a[a.len() - 1]);
            let i = a.partition_point(|p| *p <= v).clamp(1, a.len() - 1) - 1;
            lo_idx[k] = i;
            frac[k] = (v - a[i]) / (a[i + 1] - a[i]);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..d {
                let up = corner >> k & 1 == 1;
                w *= if up { frac[k] } else { 1.0 - frac[k] };
                idx = idx * self.axes[k].len() + lo_idx[k] + usize::from(up);
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gp3::verify::CellEval;

    #[test]
    fn cells_round_trip() {
        let cells = [
            CellResult {
                cell: Hyperrectangle::new(vec![0.1, -0.25], vec![0.05, 0.125]).unwrap(),
                depth: 3,
                status: CellStatus::Satisfied,
                eval: Some(CellEval {
                    lo: -0.125,
                    hi: 1.0 / 3.0,
                    l_mu: 2.5,
                    mean_center: 0.0,
                }),
            },
            CellResult {
                cell: Hyperrectangle::new(vec![0.0, 0.0], vec![0.05, 0.05]).unwrap(),
                depth: 3,
                status: CellStatus::AssumedVerified,
                eval: None,
            },
        ];
        let recs: Vec<CellRecord> = cells.iter().map(CellRecord::from).collect();
        let text = cells_csv(2, &recs);
        assert!(text.starts_with("c1,c2,b1,b2,lo,hi,L_mu,status\n"));
        assert_eq!(parse_cells_csv(&text).unwrap(), recs);
    }

    #[test]
    fn grid_table_interpolates_bilinear_exactly() {
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let mut rows = Vec::new();
        for a in [0.0, 0.5, 2.0] {
            for b in [-1.0, 1.0] {
                rows.push(vec![a, b]);
            }
        }
        let vals: Vec<f64> = rows.iter().map(|r| f(r)).collect();
        let t = GridTable::from_rows(&rows, &vals).unwrap();
        for x in [[0.25, 0.0], [1.0, 0.5], [2.0, -1.0], [0.0, 1.0]] {
            assert!((t.eval(&x) - f(&x)).abs() < 1e-12);
        }
        assert!((t.eval(&[5.0, 0.0]) - f(&[2.0, 0.0])).abs() < 1e-12);
        assert!(GridTable::from_rows(&rows[..5], &vals[..5]).is_err());
    }
}
