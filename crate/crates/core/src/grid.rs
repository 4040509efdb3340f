//! Demand grid, supply infrastructure, and their CSV interchange formats.
//!
//! Demand points sit at integer cell centres `(col, row)` and are numbered in
//! row-major order. Supply points may sit anywhere in the same coordinate
//! frame.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEMAND_HEADER_PREFIX: &str = "demand_point_index,x,y";
pub const INFRA_HEADER: &str = "supply_point_index,x,y,parking_slots,existing_scs,existing_fcs";
const BASELINE_PREFIX: &str = "# baseline_year=";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    width: usize,
    height: usize,
}

impl GridSpec {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    /// `(col, row)` of demand point `index`.
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn center(&self, index: usize) -> (f64, f64) {
        let (c, r) = self.coords(index);
        (c as f64, r as f64)
    }
}

/// Yearly demand per cell; `values[i][t]` is demand at point `i` in `years[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandHistory {
    grid: GridSpec,
    years: Vec<i32>,
    values: Vec<Vec<f64>>,
}

impl DemandHistory {
    pub fn new(grid: GridSpec, years: Vec<i32>, values: Vec<Vec<f64>>) -> Result<Self> {
        if years.is_empty() {
            return Err(Error::InvalidHistory("no years".into()));
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidHistory(format!(
                "years must be consecutive and increasing: {years:?}"
            )));
        }
        if values.len() != grid.cell_count() {
            return Err(Error::InvalidHistory(format!(
                "{} rows for a {}x{} grid",
                values.len(),
                grid.width,
                grid.height
            )));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != years.len() {
                return Err(Error::InvalidHistory(format!(
                    "demand point {i} has {} values, expected {}",
                    row.len(),
                    years.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidHistory(format!(
                    "demand point {i} has invalid demand {v}"
                )));
            }
        }
        Ok(Self {
            grid,
            years,
            values,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn first_year(&self) -> i32 {
        self.years[0]
    }

    pub fn last_year(&self) -> i32 {
        *self.years.last().expect("history has at least one year")
    }

    /// Demand of every cell in the `t`-th year of the history.
    pub fn year_column(&self, t: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[t]).collect()
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = data_lines(text);
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 4 || cols[..3].join(",") != DEMAND_HEADER_PREFIX {
            return Err(Error::parse(
                hline,
                format!("header must start with `{DEMAND_HEADER_PREFIX}` and list at least one year"),
            ));
        }
        let years = cols[3..]
            .iter()
            .map(|c| {
                c.parse::<i32>()
                    .map_err(|_| Error::parse(hline, format!("invalid year `{c}` in header")))
            })
            .collect::<Result<Vec<_>>>()?;
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::parse(hline, "non-consecutive years in header"));
        }

        let mut rows: Vec<(usize, usize, usize, usize, Vec<f64>)> = Vec::new();
        let mut seen = BTreeSet::new();
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::parse(
                    ln,
                    format!("expected {} fields, found {}", cols.len(), fields.len()),
                ));
            }
            let index = parse_usize(fields[0], ln, "demand point index")?;
            let x = parse_usize(fields[1], ln, "x")?;
            let y = parse_usize(fields[2], ln, "y")?;
            if !seen.insert(index) {
                return Err(Error::parse(ln, format!("duplicate demand point index {index}")));
            }
            let mut vals = Vec::with_capacity(years.len());
            for f in &fields[3..] {
                let v = parse_f64(f, ln, "demand")?;
                if v < 0.0 {
                    return Err(Error::parse(ln, format!("negative demand {v}")));
                }
                vals.push(v);
            }
            rows.push((ln, index, x, y, vals));
        }
        if rows.is_empty() {
            return Err(Error::parse(hline, "no demand rows"));
        }
        let width = rows.iter().map(|r| r.2).max().unwrap_or(0) + 1;
        let height = rows.iter().map(|r| r.3).max().unwrap_or(0) + 1;
        let grid = GridSpec::new(width, height)?;
        let n = grid.cell_count();
        let mut values: Vec<Option<Vec<f64>>> = vec![None; n];
        for (ln, index, x, y, vals) in rows {
            if index >= n {
                return Err(Error::parse(
                    ln,
                    format!("demand point index {index} out of range for {width}x{height} grid"),
                ));
            }
            if grid.index(x, y) != index {
                return Err(Error::parse(
                    ln,
                    format!("demand point index {index} does not match row-major position ({x},{y})"),
                ));
            }
            values[index] = Some(vals);
        }
        if let Some(missing) = values.iter().position(Option::is_none) {
            return Err(Error::parse(
                text.lines().count(),
                format!("missing demand point index {missing}"),
            ));
        }
        DemandHistory::new(grid, years, values.into_iter().map(Option::unwrap).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(DEMAND_HEADER_PREFIX);
        for y in &self.years {
            let _ = write!(out, ",{y}");
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            let (c, r) = self.grid.coords(i);
            let _ = write!(out, "{i},{c},{r}");
            for v in row {
                let _ = write!(out, ",{}", fmt_real(*v));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupplyPoint {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub parking_slots: u32,
    pub existing_scs: u32,
    pub existing_fcs: u32,
}

impl SupplyPoint {
    pub fn validate(&self) -> Result<()> {
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(Error::InvalidInfrastructure(format!(
                "supply point {} has non-finite position",
                self.index
            )));
        }
        if self.existing_scs as u64 + self.existing_fcs as u64 > self.parking_slots as u64 {
            return Err(Error::InfeasibleInfrastructure {
                index: self.index,
                scs: self.existing_scs,
                fcs: self.existing_fcs,
                slots: self.parking_slots,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfrastructureState {
    supply_points: Vec<SupplyPoint>,
    baseline_year: Option<i32>,
}

impl InfrastructureState {
    pub fn new(supply_points: Vec<SupplyPoint>, baseline_year: Option<i32>) -> Result<Self> {
        for (k, sp) in supply_points.iter().enumerate() {
            if sp.index != k {
                return Err(Error::InvalidInfrastructure(format!(
                    "supply point indices must be contiguous from 0; position {k} holds index {}",
                    sp.index
                )));
            }
            sp.validate()?;
        }
        Ok(Self {
            supply_points,
            baseline_year,
        })
    }

    pub fn supply_points(&self) -> &[SupplyPoint] {
        &self.supply_points
    }

    pub fn len(&self) -> usize {
        self.supply_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supply_points.is_empty()
    }

    pub fn baseline_year(&self) -> Option<i32> {
        self.baseline_year
    }

    /// Same layout with the existing charger counts replaced.
    pub fn with_counts(&self, scs: &[u32], fcs: &[u32], year: Option<i32>) -> Result<Self> {
        if scs.len() != self.len() || fcs.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} supply points but {} / {} counts",
                self.len(),
                scs.len(),
                fcs.len()
            )));
        }
        let pts = self
            .supply_points
            .iter()
            .zip(scs.iter().zip(fcs))
            .map(|(sp, (&s, &f))| SupplyPoint {
                existing_scs: s,
                existing_fcs: f,
                ..*sp
            })
            .collect();
        Self::new(pts, year)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut baseline_year = None;
        let mut header_seen = false;
        let mut by_index: Vec<Option<SupplyPoint>> = Vec::new();
        let mut line_of: Vec<usize> = Vec::new();
        for (ln, raw) in text.lines().enumerate().map(|(k, l)| (k + 1, l.trim_end_matches('\r'))) {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                if let Some(rest) = line.strip_prefix(BASELINE_PREFIX) {
                    let y = rest
                        .trim()
                        .parse::<i32>()
                        .map_err(|_| Error::parse(ln, format!("invalid baseline year `{rest}`")))?;
                    baseline_year = Some(y);
                    continue;
                }
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols.join(",") != INFRA_HEADER {
                    return Err(Error::parse(ln, format!("header must be `{INFRA_HEADER}`")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(Error::parse(ln, format!("expected 6 fields, found {}", f.len())));
            }
            let sp = SupplyPoint {
                index: parse_usize(f[0], ln, "supply point index")?,
                x: parse_f64(f[1], ln, "x")?,
                y: parse_f64(f[2], ln, "y")?,
                parking_slots: parse_u32(f[3], ln, "parking_slots")?,
                existing_scs: parse_u32(f[4], ln, "existing_scs")?,
                existing_fcs: parse_u32(f[5], ln, "existing_fcs")?,
            };
            sp.validate().map_err(|e| Error::parse(ln, e.to_string()))?;
            if sp.index >= by_index.len() {
                by_index.resize(sp.index + 1, None);
                line_of.resize(sp.index + 1, 0);
            }
            if by_index[sp.index].is_some() {
                return Err(Error::parse(ln, format!("duplicate supply point index {}", sp.index)));
            }
            by_index[sp.index] = Some(sp);
            line_of[sp.index] = ln;
        }
        if !header_seen {
            return Err(Error::parse(1, "missing header"));
        }
        if let Some(missing) = by_index.iter().position(Option::is_none) {
            return Err(Error::parse(
                text.lines().count(),
                format!("missing supply point index {missing}"),
            ));
        }
        Self::new(by_index.into_iter().map(Option::unwrap).collect(), baseline_year)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(y) = self.baseline_year {
            let _ = writeln!(out, "{BASELINE_PREFIX}{y}");
        }
        out.push_str(INFRA_HEADER);
        out.push('\n');
        for sp in &self.supply_points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                sp.index,
                fmt_real(sp.x),
                fmt_real(sp.y),
                sp.parking_slots,
                sp.existing_scs,
                sp.existing_fcs
            );
        }
        out
    }
}

/// Euclidean distances from every cell centre to every supply point.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    cells: usize,
    supplies: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn compute(grid: GridSpec, supply: &InfrastructureState) -> Self {
        let m = supply.len();
        let n = grid.cell_count();
        let mut d = Vec::with_capacity(n * m);
        for i in 0..n {
            let (cx, cy) = grid.center(i);
            for sp in supply.supply_points() {
                d.push(euclid(cx, cy, sp.x, sp.y));
            }
        }
        Self {
            cells: n,
            supplies: m,
            d,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cells = rows.len();
        let supplies = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != supplies) {
            return Err(Error::ShapeMismatch("ragged distance rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("distances must be finite and nonnegative".into()));
        }
        Ok(Self {
            cells,
            supplies,
            d: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn get(&self, cell: usize, supply: usize) -> f64 {
        self.d[cell * self.supplies + supply]
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        &self.d[cell * self.supplies..(cell + 1) * self.supplies]
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn supplies(&self) -> usize {
        self.supplies
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            d: self.d.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

pub fn distance_matrix(grid: GridSpec, supply: &InfrastructureState) -> DistanceMatrix {
    DistanceMatrix::compute(grid, supply)
}

#[inline]
pub(crate) fn euclid(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let dx = ax - bx;
    let dy = ay - by;
    (dx * dx + dy * dy).sqrt()
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v}")
}

/// Non-blank lines with 1-based line numbers, CR stripped.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim_end_matches('\r').trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub(crate) fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64> {
    let v = s
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite {what} `{s}`")));
    }
    Ok(v)
}

pub(crate) fn parse_usize(s: &str, line: usize, what: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{s}`")))
}

pub(crate) fn parse_u32(s: &str, line: usize, what: &str) -> Result<u32> {
    s.parse::<u32>()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{s}`")))
}

pub(crate) fn parse_i32(s: &str, line: usize, what: &str) -> Result<i32> {
    s.parse::<i32>()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{s}`")))
}
