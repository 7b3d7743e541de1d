//! Balanced panel data: the in-memory model, long-format CSV ingestion and
//! structural validation.
//!
//! Observations are stored densely in unit-major order: outcome `(i, t)` lives
//! at `i * T + t` and regressor `k` of `(i, t)` at `(i * T + t) * p + k`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("panel is unbalanced: no observation for unit {unit:?} at time {time:?}")]
    MissingCell { unit: String, time: String },
    #[error("duplicate observation for unit {unit:?} at time {time:?} (data row {row})")]
    DuplicateCell {
        unit: String,
        time: String,
        row: usize,
    },
    #[error("non-finite value in column {column:?} at data row {row}")]
    NonFiniteValue { row: usize, column: String },
    #[error("cannot parse {value:?} in column {column:?} at data row {row} as a number")]
    InvalidNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid panel: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which piece of an observation a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Outcome,
    Regressor(usize),
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Outcome => write!(f, "y"),
            Field::Regressor(k) => write!(f, "x{}", k + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Unit,
    Time,
}

/// A single broken `PanelData` invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDimension(&'static str),
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    NonFiniteValue {
        unit: usize,
        period: usize,
        field: Field,
    },
    DuplicateId {
        axis: Axis,
        label: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDimension(d) => write!(f, "{d} must be positive"),
            Violation::LengthMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what} has length {found}, expected {expected}"),
            Violation::NonFiniteValue {
                unit,
                period,
                field,
            } => write!(f, "non-finite {field} at ({unit}, {period})"),
            Violation::DuplicateId { axis, label } => {
                write!(f, "duplicate {axis:?} id {label:?}")
            }
        }
    }
}

/// A balanced N x T panel with p regressors (no intercept column).
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    n_units: usize,
    n_periods: usize,
    n_regressors: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
}

impl PanelData {
    /// Builds a panel and checks every invariant.
    pub fn new(
        n_units: usize,
        n_periods: usize,
        n_regressors: usize,
        y: Vec<f64>,
        x: Vec<f64>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
    ) -> Result<Self, PanelError> {
        let panel = Self::from_raw(n_units, n_periods, n_regressors, y, x, unit_ids, time_ids);
        let violations = validate(&panel);
        if violations.is_empty() {
            Ok(panel)
        } else {
            Err(PanelError::Invalid(violations))
        }
    }

    /// Builds a panel without validation. Use [`validate`] to inspect it.
    pub fn from_raw(
        n_units: usize,
        n_periods: usize,
        n_regressors: usize,
        y: Vec<f64>,
        x: Vec<f64>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
    ) -> Self {
        Self {
            n_units,
            n_periods,
            n_regressors,
            y,
            x,
            unit_ids,
            time_ids,
        }
    }

    /// Panel with labels `1..=N` and `1..=T`.
    pub fn with_default_ids(
        n_units: usize,
        n_periods: usize,
        n_regressors: usize,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self, PanelError> {
        let unit_ids = (1..=n_units).map(|i| i.to_string()).collect();
        let time_ids = (1..=n_periods).map(|t| t.to_string()).collect();
        Self::new(n_units, n_periods, n_regressors, y, x, unit_ids, time_ids)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_regressors(&self) -> usize {
        self.n_regressors
    }

    pub fn n_obs(&self) -> usize {
        self.n_units * self.n_periods
    }

    /// Outcomes in unit-major order.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Regressors in unit-major, then regressor-index order.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    #[inline]
    pub fn y_at(&self, unit: usize, period: usize) -> f64 {
        self.y[unit * self.n_periods + period]
    }

    #[inline]
    pub fn x_at(&self, unit: usize, period: usize) -> &[f64] {
        let p = self.n_regressors;
        let o = (unit * self.n_periods + period) * p;
        &self.x[o..o + p]
    }

    /// Regressor vector of flat observation `h = i * T + t`.
    #[inline]
    pub fn x_obs(&self, h: usize) -> &[f64] {
        let p = self.n_regressors;
        &self.x[h * p..(h + 1) * p]
    }

    /// The panel with outcomes replaced; used for transformed refits.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self, PanelError> {
        Self::new(
            self.n_units,
            self.n_periods,
            self.n_regressors,
            y,
            self.x.clone(),
            self.unit_ids.clone(),
            self.time_ids.clone(),
        )
    }
}

/// Returns every broken invariant; empty iff `panel` is valid.
pub fn validate(panel: &PanelData) -> Vec<Violation> {
    let mut out = Vec::new();
    let (n, t, p) = (panel.n_units, panel.n_periods, panel.n_regressors);
    if n == 0 {
        out.push(Violation::EmptyDimension("n_units"));
    }
    if t == 0 {
        out.push(Violation::EmptyDimension("n_periods"));
    }
    if p == 0 {
        out.push(Violation::EmptyDimension("n_regressors"));
    }
    let checks = [
        ("y", n * t, panel.y.len()),
        ("x", n * t * p, panel.x.len()),
        ("unit_ids", n, panel.unit_ids.len()),
        ("time_ids", t, panel.time_ids.len()),
    ];
    let mut lengths_ok = true;
    for (what, expected, found) in checks {
        if expected != found {
            lengths_ok = false;
            out.push(Violation::LengthMismatch {
                what,
                expected,
                found,
            });
        }
    }
    if lengths_ok {
        for i in 0..n {
            for s in 0..t {
                let h = i * t + s;
                if !panel.y[h].is_finite() {
                    out.push(Violation::NonFiniteValue {
                        unit: i,
                        period: s,
                        field: Field::Outcome,
                    });
                }
                for k in 0..p {
                    if !panel.x[h * p + k].is_finite() {
                        out.push(Violation::NonFiniteValue {
                            unit: i,
                            period: s,
                            field: Field::Regressor(k),
                        });
                    }
                }
            }
        }
    }
    for (axis, ids) in [(Axis::Unit, &panel.unit_ids), (Axis::Time, &panel.time_ids)] {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for id in ids.iter() {
            let count = seen.entry(id.as_str()).or_insert(0);
            *count += 1;
            if *count == 2 {
                out.push(Violation::DuplicateId {
                    axis,
                    label: id.clone(),
                });
            }
        }
    }
    out
}

/// `max |x_itk|` over the whole panel.
pub fn regressor_bound(panel: &PanelData) -> f64 {
    panel.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Column names of a long-format panel table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub unit: String,
    pub time: String,
    pub y: String,
    /// Regressor columns in order. `None` means `x1, x2, ...` detected from the
    /// header.
    pub x: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            y: "y".into(),
            x: None,
        }
    }
}

/// Orders labels numerically when both parse as integers, else as strings.
fn label_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn resolve_columns(header: &csv::StringRecord, schema: &Schema) -> Result<(usize, usize, usize, Vec<usize>), PanelError> {
    let names: Vec<&str> = header.iter().collect();
    let find = |name: &str| -> Result<usize, PanelError> {
        let hits: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| **n == name)
            .map(|(k, _)| k)
            .collect();
        match hits.as_slice() {
            [k] => Ok(*k),
            [] => Err(PanelError::SchemaMismatch(format!("missing column {name:?}"))),
            _ => Err(PanelError::SchemaMismatch(format!("column {name:?} appears more than once"))),
        }
    };
    let unit = find(&schema.unit)?;
    let time = find(&schema.time)?;
    let y = find(&schema.y)?;
    let x_names: Vec<String> = match &schema.x {
        Some(cols) => cols.clone(),
        None => {
            let mut cols = Vec::new();
            let mut k = 1;
            while names.contains(&format!("x{k}").as_str()) {
                cols.push(format!("x{k}"));
                k += 1;
            }
            cols
        }
    };
    if x_names.is_empty() {
        return Err(PanelError::SchemaMismatch(
            "no regressor columns (expected x1, x2, ...)".into(),
        ));
    }
    let x = x_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>, _>>()?;
    let used = 3 + x.len();
    if names.len() != used {
        let extra: Vec<&str> = names
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != unit && *k != time && *k != y && !x.contains(k))
            .map(|(_, n)| *n)
            .collect();
        return Err(PanelError::SchemaMismatch(format!("unexpected columns {extra:?}")));
    }
    Ok((unit, time, y, x))
}

fn parse_value(raw: &str, row: usize, column: &str) -> Result<f64, PanelError> {
    let v: f64 = raw.trim().parse().map_err(|_| PanelError::InvalidNumber {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(PanelError::NonFiniteValue {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

/// Reads a long-format CSV table (one row per `(unit, time)`).
///
/// Rows may come in any order; the result is sorted by `(unit, time)`. Data
/// rows are numbered from 1 in error messages.
pub fn load_panel<R: Read>(source: R, schema: &Schema) -> Result<PanelData, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let (uc, tc, yc, xc) = resolve_columns(&header, schema)?;
    let p = xc.len();

    struct Row {
        unit: String,
        time: String,
        y: f64,
        x: Vec<f64>,
        line: usize,
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = k + 1;
        let field = |c: usize| record.get(c).unwrap_or("");
        let y = parse_value(field(yc), line, &header[yc])?;
        let x = xc
            .iter()
            .map(|&c| parse_value(field(c), line, &header[c]))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(Row {
            unit: field(uc).to_string(),
            time: field(tc).to_string(),
            y,
            x,
            line,
        });
    }
    if rows.is_empty() {
        return Err(PanelError::SchemaMismatch("table has no data rows".into()));
    }

    let mut unit_ids: Vec<String> = rows.iter().map(|r| r.unit.clone()).collect();
    unit_ids.sort_by(|a, b| label_order(a, b));
    unit_ids.dedup();
    let mut time_ids: Vec<String> = rows.iter().map(|r| r.time.clone()).collect();
    time_ids.sort_by(|a, b| label_order(a, b));
    time_ids.dedup();
    let unit_index: HashMap<&str, usize> = unit_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let time_index: HashMap<&str, usize> = time_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let (n, t) = (unit_ids.len(), time_ids.len());
    let mut filled = vec![false; n * t];
    let mut y = vec![0.0; n * t];
    let mut x = vec![0.0; n * t * p];
    for row in &rows {
        let h = unit_index[row.unit.as_str()] * t + time_index[row.time.as_str()];
        if filled[h] {
            return Err(PanelError::DuplicateCell {
                unit: row.unit.clone(),
                time: row.time.clone(),
                row: row.line,
            });
        }
        filled[h] = true;
        y[h] = row.y;
        x[h * p..(h + 1) * p].copy_from_slice(&row.x);
    }
    if let Some(h) = filled.iter().position(|f| !f) {
        return Err(PanelError::MissingCell {
            unit: unit_ids[h / t].clone(),
            time: time_ids[h % t].clone(),
        });
    }
    PanelData::new(n, t, p, y, x, unit_ids, time_ids)
}

pub fn load_panel_path(path: impl AsRef<Path>, schema: &Schema) -> Result<PanelData, PanelError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PanelError::MissingFile(path.display().to_string()),
        _ => PanelError::Io(e),
    })?;
    load_panel(std::io::BufReader::new(file), schema)
}

/// Writes the panel as long-format CSV with 17 significant digits, the exact
/// inverse of [`load_panel`] with the default schema.
pub fn save_panel<W: Write>(panel: &PanelData, sink: W) -> Result<(), PanelError> {
    let mut writer = csv::Writer::from_writer(sink);
    let p = panel.n_regressors;
    let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
    header.extend((1..=p).map(|k| format!("x{k}")));
    writer.write_record(&header)?;
    let mut record = Vec::with_capacity(3 + p);
    for i in 0..panel.n_units {
        for s in 0..panel.n_periods {
            record.clear();
            record.push(panel.unit_ids[i].clone());
            record.push(panel.time_ids[s].clone());
            record.push(format!("{:.16e}", panel.y_at(i, s)));
            record.extend(panel.x_at(i, s).iter().map(|v| format!("{v:.16e}")));
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn save_panel_path(panel: &PanelData, path: impl AsRef<Path>) -> Result<(), PanelError> {
    let file = std::fs::File::create(path)?;
    save_panel(panel, std::io::BufWriter::new(file))
}
