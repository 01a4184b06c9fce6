//! Comma-separated tables with required headers, plus panel import/export.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::basis::QuadratureGrid;
use crate::error::{FnarError, Result};
use crate::estimator::interpolate_response;
use crate::interaction::FunctionOnGrid;
use crate::simulate::FunctionalPanel;

fn io_err(path: &Path, source: std::io::Error) -> FnarError {
    FnarError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> FnarError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => FnarError::Schema {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// One parsed record; `line` is the 1-based line number in the source file.
#[derive(Debug, Clone)]
pub struct Row {
    path: PathBuf,
    pub line: u64,
    pub fields: Vec<String>,
}

impl Row {
    fn schema(&self, message: String) -> FnarError {
        FnarError::Schema {
            path: self.path.clone(),
            line: self.line,
            message,
        }
    }

    pub fn f64_at(&self, idx: usize) -> Result<f64> {
        let raw = self.fields[idx].trim();
        let v: f64 = raw
            .parse()
            .map_err(|_| self.schema(format!("expected a number, found {raw:?}")))?;
        if !v.is_finite() {
            return Err(self.schema(format!("non-finite value {raw:?}")));
        }
        Ok(v)
    }

    pub fn usize_at(&self, idx: usize) -> Result<usize> {
        let raw = self.fields[idx].trim();
        raw.parse()
            .map_err(|_| self.schema(format!("expected a non-negative integer, found {raw:?}")))
    }
}

/// Read a headed table. Columns are returned in the order of `required`,
/// followed by any remaining columns in file order.
pub fn read_table(path: &Path, required: &[&str]) -> Result<Vec<Row>> {
    let (header, rows) = read_table_with_header(path)?;
    let mut order = Vec::with_capacity(header.len());
    for name in required {
        match header.iter().position(|h| h == name) {
            Some(i) => order.push(i),
            None => {
                return Err(FnarError::Schema {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("missing required column {name:?} (header: {})", header.join(",")),
                })
            }
        }
    }
    for i in 0..header.len() {
        if !order.contains(&i) {
            order.push(i);
        }
    }
    Ok(rows
        .into_iter()
        .map(|mut r| {
            r.fields = order.iter().map(|&i| std::mem::take(&mut r.fields[i])).collect();
            r
        })
        .collect())
}

/// Read a headed table returning the header and rows in file order.
pub fn read_table_with_header(path: &Path) -> Result<(Vec<String>, Vec<Row>)> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(FnarError::Schema {
            path: path.to_path_buf(),
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push(Row {
            path: path.to_path_buf(),
            line,
            fields: rec.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok((header, rows))
}

pub fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<str>,
{
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        let fields: Vec<String> = row.into_iter().map(|f| f.as_ref().to_string()).collect();
        w.write_record(&fields).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Write outcomes as `unit,period,grid_index,y` and covariates as
/// `unit,period,x1..xd`.
pub fn write_panel(panel: &FunctionalPanel, outcomes: &Path, covariates: &Path) -> Result<()> {
    let (n, t, g) = (panel.n(), panel.t(), panel.grid().len());
    let rows = (0..n).flat_map(|i| {
        (0..t).flat_map(move |tt| {
            (0..g).map(move |k| {
                vec![i.to_string(), tt.to_string(), k.to_string(), fmt(panel.y(i, tt)[k])]
            })
        })
    });
    write_table(outcomes, &["unit", "period", "grid_index", "y"], rows)?;

    let names: Vec<String> = (1..=panel.dx()).map(|j| format!("x{j}")).collect();
    let mut header = vec!["unit", "period"];
    header.extend(names.iter().map(|s| s.as_str()));
    let rows = (0..n).flat_map(|i| {
        (0..t).map(move |tt| {
            let mut r = vec![i.to_string(), tt.to_string()];
            r.extend(panel.x(i, tt).iter().map(|&v| fmt(v)));
            r
        })
    });
    write_table(covariates, &header, rows)
}

/// Covariate table keyed by `(unit, period)` with named columns.
#[derive(Debug, Clone)]
pub struct CovariateTable {
    pub names: Vec<String>,
    pub values: BTreeMap<(usize, usize), Vec<f64>>,
}

pub fn read_covariates(path: &Path) -> Result<CovariateTable> {
    let (header, _) = read_table_with_header(path)?;
    let names: Vec<String> = header
        .iter()
        .filter(|h| h.as_str() != "unit" && h.as_str() != "period")
        .cloned()
        .collect();
    if names.is_empty() {
        return Err(FnarError::Schema {
            path: path.to_path_buf(),
            line: 1,
            message: "covariate table has no covariate columns".into(),
        });
    }
    let rows = read_table(path, &["unit", "period"])?;
    let mut values = BTreeMap::new();
    for row in &rows {
        let key = (row.usize_at(0)?, row.usize_at(1)?);
        let x = (2..row.fields.len()).map(|c| row.f64_at(c)).collect::<Result<Vec<_>>>()?;
        if values.insert(key, x).is_some() {
            return Err(row.schema(format!("duplicate covariate row for unit {} period {}", key.0, key.1)));
        }
    }
    Ok(CovariateTable { names, values })
}

/// `(s, y)` pairs keyed by `(unit, period)`.
pub type Observations = BTreeMap<(usize, usize), Vec<(f64, f64)>>;

/// Outcome observations grouped by `(unit, period)`.
///
/// Accepts either an `s` column (observation point in `[0, 1]`) or a
/// `grid_index` column as written by [`write_panel`], which maps index `k`
/// of a `G`-point grid to `s = (k + 1) / (G + 1)`.
pub fn read_observations(path: &Path) -> Result<Observations> {
    let (header, _) = read_table_with_header(path)?;
    let has_s = header.iter().any(|h| h == "s");
    let key_col = if has_s { "s" } else { "grid_index" };
    let rows = read_table(path, &["unit", "period", key_col, "y"])?;

    let grid_count = if has_s {
        0
    } else {
        let mut max = 0;
        for r in &rows {
            max = max.max(r.usize_at(2)?);
        }
        max + 1
    };

    let mut out: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for row in &rows {
        let key = (row.usize_at(0)?, row.usize_at(1)?);
        let s = if has_s {
            let s = row.f64_at(2)?;
            if !(0.0..=1.0).contains(&s) {
                return Err(row.schema(format!("observation point s = {s} outside [0, 1]")));
            }
            s
        } else {
            (row.usize_at(2)? + 1) as f64 / (grid_count + 1) as f64
        };
        out.entry(key).or_default().push((s, row.f64_at(3)?));
    }
    Ok(out)
}

/// Assemble a balanced panel from observation and covariate tables,
/// interpolating each outcome path onto `grid`.
pub fn panel_from_tables(
    obs: &BTreeMap<(usize, usize), Vec<(f64, f64)>>,
    cov: &CovariateTable,
    grid: &QuadratureGrid,
) -> Result<FunctionalPanel> {
    let n = obs.keys().map(|k| k.0).max().map_or(0, |m| m + 1);
    let t = obs.keys().map(|k| k.1).max().map_or(0, |m| m + 1);
    if n == 0 || t == 0 {
        return Err(FnarError::MissingData("outcome table is empty".into()));
    }
    let dx = cov.names.len();
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * dx);
    for tt in 0..t {
        for i in 0..n {
            let points = obs.get(&(i, tt)).ok_or_else(|| {
                FnarError::MissingData(format!("no outcome observations for unit {i} period {tt}"))
            })?;
            y.push(interpolate_response(points, grid)?);
            let xi = cov.values.get(&(i, tt)).ok_or_else(|| {
                FnarError::MissingData(format!("no covariates for unit {i} period {tt}"))
            })?;
            x.extend_from_slice(xi);
        }
    }
    FunctionalPanel::new(n, t, dx, grid.clone(), y, x)
}

/// Read a function tabulated as `s,<value_col>` rows and interpolate it onto `grid`.
pub fn read_function(path: &Path, value_col: &str, grid: &QuadratureGrid) -> Result<FunctionOnGrid> {
    let rows = read_table(path, &["s", value_col])?;
    let mut pts = Vec::with_capacity(rows.len());
    for r in &rows {
        pts.push((r.f64_at(0)?, r.f64_at(1)?));
    }
    interpolate_response(&pts, grid)
}

/// Read unit coordinates with header `unit,lon,lat`.
pub fn read_coords(path: &Path) -> Result<Vec<[f64; 2]>> {
    let rows = read_table(path, &["unit", "lon", "lat"])?;
    let mut coords = vec![None; rows.len()];
    for r in &rows {
        let u = r.usize_at(0)?;
        if u >= coords.len() {
            return Err(r.schema(format!("unit id {u} exceeds the number of rows")));
        }
        coords[u] = Some([r.f64_at(1)?, r.f64_at(2)?]);
    }
    coords
        .into_iter()
        .enumerate()
        .map(|(u, c)| c.ok_or_else(|| FnarError::MissingData(format!("no coordinates for unit {u}"))))
        .collect()
}
