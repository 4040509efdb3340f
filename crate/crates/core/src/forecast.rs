//! Spatially smoothed cubic demand forecasting.
//!
//! Every cell's yearly demand is replaced by a weighted average over the whole
//! grid with weights `(1 + d)^-kappa` (`d` = distance between cell centres,
//! self included), a least-squares cubic is fitted per cell on the smoothed
//! series, and the cubic is extrapolated to the target years.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{data_lines, fmt_real, parse_f64, parse_i32, parse_usize, DemandHistory, GridSpec};

pub const DEFAULT_KAPPA_GRID: KappaGrid = KappaGrid {
    start: 0.0,
    stop: 10.0,
    step: 0.1,
};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SmoothingParam(f64);

impl SmoothingParam {
    pub fn new(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kappa must be finite and nonnegative, got {kappa}"
            )));
        }
        Ok(Self(kappa))
    }

    pub fn kappa(self) -> f64 {
        self.0
    }
}

/// `c0 + c1 t + c2 t^2 + c3 t^3` over `t = year - first_year`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyCoeffs(pub [f64; 4]);

impl PolyCoeffs {
    pub fn eval(&self, t: f64) -> f64 {
        let [c0, c1, c2, c3] = self.0;
        ((c3 * t + c2) * t + c1) * t + c0
    }
}

/// Evenly spaced kappa candidates `start, start + step, ..., <= stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl KappaGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.step <= 0.0 {
            return vec![self.start];
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        // Integer multiples keep 4.7 == 47 * 0.1 as close to the decimal as possible.
        let decimals = (1.0 / self.step).round();
        (0..=n)
            .map(|k| {
                let v = self.start + k as f64 * self.step;
                if (decimals * self.step - 1.0).abs() < 1e-12 {
                    (v * decimals).round() / decimals
                } else {
                    v
                }
            })
            .collect()
    }

    /// Parses `start:stop:step`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || Error::InvalidArgument(format!("kappa grid must be start:stop:step, got `{spec}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let p = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let g = Self {
            start: p(parts[0])?,
            stop: p(parts[1])?,
            step: p(parts[2])?,
        };
        if !(g.start >= 0.0 && g.stop >= g.start && g.step > 0.0 && g.stop.is_finite()) {
            return Err(bad());
        }
        Ok(g)
    }
}

impl std::fmt::Display for KappaGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

/// Precomputed inverse-distance weights for one kappa on one grid.
///
/// Weights depend only on the displacement `(|dx|, |dy|)`, so a `width x height`
/// table covers every cell pair.
pub struct Smoother {
    grid: GridSpec,
    table: Vec<f64>,
    denom: Vec<f64>,
}

impl Smoother {
    pub fn new(grid: GridSpec, kappa: SmoothingParam) -> Self {
        let (w, h) = (grid.width(), grid.height());
        let k = kappa.kappa();
        let mut table = vec![0.0; w * h];
        for dy in 0..h {
            for dx in 0..w {
                let d = ((dx * dx + dy * dy) as f64).sqrt();
                table[dy * w + dx] = if k == 0.0 { 1.0 } else { (1.0 + d).powf(-k) };
            }
        }
        // Row sums of the table seen from every column, then stacked over rows.
        let mut col_sums = vec![0.0; h * w];
        for dy in 0..h {
            let t = &table[dy * w..(dy + 1) * w];
            for kc in 0..w {
                let mut s = 0.0;
                for c in 0..w {
                    s += t[kc.abs_diff(c)];
                }
                col_sums[dy * w + kc] = s;
            }
        }
        let mut denom = vec![0.0; w * h];
        for kr in 0..h {
            for kc in 0..w {
                let mut s = 0.0;
                for r in 0..h {
                    s += col_sums[kr.abs_diff(r) * w + kc];
                }
                denom[kr * w + kc] = s;
            }
        }
        Self { grid, table, denom }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Smoothed value of every cell. Output is clipped to the input range so the
    /// convex-combination bound survives rounding.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.grid.cell_count(), "value count does not match grid");
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let w = self.grid.width();
        let h = self.grid.height();
        (0..values.len())
            .into_par_iter()
            .map(|k| {
                let (kc, kr) = (k % w, k / w);
                let mut num = 0.0;
                for r in 0..h {
                    let t = &self.table[kr.abs_diff(r) * w..][..w];
                    let row = &values[r * w..(r + 1) * w];
                    for (c, v) in row.iter().enumerate() {
                        num += t[kc.abs_diff(c)] * v;
                    }
                }
                (num / self.denom[k]).clamp(lo, hi)
            })
            .collect()
    }
}

pub fn smooth_demand(values: &[f64], grid: GridSpec, kappa: SmoothingParam) -> Vec<f64> {
    Smoother::new(grid, kappa).apply(values)
}

/// Householder QR of the cubic design matrix for a fixed set of abscissae.
/// Fitting many series over the same years reuses the factorisation.
#[derive(Debug, Clone)]
pub struct CubicFitter {
    n: usize,
    /// Householder vectors, column-major `n x 4`; `v[k][k..]` is meaningful.
    v: Vec<Vec<f64>>,
    beta: [f64; 4],
    r: [[f64; 4]; 4],
}

impl CubicFitter {
    pub fn new(ts: &[f64]) -> Result<Self> {
        let n = ts.len();
        if n < 4 {
            return Err(Error::InsufficientHistory { have: n, need: 4 });
        }
        let mut sorted = ts.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("fit abscissae must be distinct".into()));
        }
        let mut a: Vec<Vec<f64>> = (0..4)
            .map(|p| ts.iter().map(|t| t.powi(p as i32)).collect())
            .collect();
        let mut v = Vec::with_capacity(4);
        let mut beta = [0.0; 4];
        for k in 0..4 {
            let norm = a[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
            let alpha = if a[k][k] > 0.0 { -norm } else { norm };
            let mut vk = vec![0.0; n];
            vk[k..].copy_from_slice(&a[k][k..]);
            vk[k] -= alpha;
            let vtv: f64 = vk[k..].iter().map(|x| x * x).sum();
            beta[k] = if vtv == 0.0 { 0.0 } else { 2.0 / vtv };
            for col in a.iter_mut().skip(k) {
                let dot: f64 = vk[k..].iter().zip(&col[k..]).map(|(x, y)| x * y).sum();
                let s = beta[k] * dot;
                for (c, x) in col[k..].iter_mut().zip(&vk[k..]) {
                    *c -= s * x;
                }
            }
            v.push(vk);
        }
        let mut r = [[0.0; 4]; 4];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, rij) in row.iter_mut().enumerate().skip(i) {
                *rij = a[j][i];
            }
        }
        let scale = (0..4).map(|i| r[i][i].abs()).fold(0.0, f64::max);
        if (0..4).any(|i| r[i][i].abs() <= scale * 1e-13) {
            return Err(Error::InvalidArgument("cubic design matrix is rank deficient".into()));
        }
        Ok(Self { n, v, beta, r })
    }

    pub fn fit(&self, values: &[f64]) -> PolyCoeffs {
        assert_eq!(values.len(), self.n);
        let mut b = values.to_vec();
        for k in 0..4 {
            let vk = &self.v[k];
            let dot: f64 = vk[k..].iter().zip(&b[k..]).map(|(x, y)| x * y).sum();
            let s = self.beta[k] * dot;
            for (bi, x) in b[k..].iter_mut().zip(&vk[k..]) {
                *bi -= s * x;
            }
        }
        let mut c = [0.0; 4];
        for i in (0..4).rev() {
            let mut s = b[i];
            for j in i + 1..4 {
                s -= self.r[i][j] * c[j];
            }
            c[i] = s / self.r[i][i];
        }
        PolyCoeffs(c)
    }

    /// Weights `a` such that the fitted cubic evaluated at `t` equals `a . values`.
    pub fn extrapolation_weights(&self, t: f64) -> Vec<f64> {
        (0..self.n)
            .map(|s| {
                let mut e = vec![0.0; self.n];
                e[s] = 1.0;
                self.fit(&e).eval(t)
            })
            .collect()
    }
}

pub fn fit_cubic(series: &[(i32, f64)]) -> Result<PolyCoeffs> {
    if series.len() < 4 {
        return Err(Error::InsufficientHistory {
            have: series.len(),
            need: 4,
        });
    }
    let first = series.iter().map(|p| p.0).min().expect("nonempty");
    let ts: Vec<f64> = series.iter().map(|p| (p.0 - first) as f64).collect();
    let vs: Vec<f64> = series.iter().map(|p| p.1).collect();
    Ok(CubicFitter::new(&ts)?.fit(&vs))
}

/// Cubic evaluated at `target - first_year`, negative values clamped to zero.
pub fn predict_year(coeffs: &PolyCoeffs, first_year: i32, target: i32) -> f64 {
    coeffs.eval((target - first_year) as f64).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaSearch {
    pub best: SmoothingParam,
    pub best_mse: f64,
    pub curve: Vec<(f64, f64)>,
}

/// Holds out the last history year, forecasts it from the earlier years for
/// every candidate kappa, and keeps the kappa with the lowest mean squared
/// error against the raw held-out demand (ties go to the smaller kappa).
pub fn tune_kappa(history: &DemandHistory, kappa_grid: &[f64]) -> Result<KappaSearch> {
    let years = history.years().len();
    if years < 5 {
        return Err(Error::InsufficientHistory { have: years, need: 5 });
    }
    if kappa_grid.is_empty() {
        return Err(Error::InvalidArgument("empty kappa grid".into()));
    }
    let kappas = kappa_grid
        .iter()
        .map(|&k| SmoothingParam::new(k))
        .collect::<Result<Vec<_>>>()?;

    let train = years - 1;
    let ts: Vec<f64> = (0..train).map(|t| t as f64).collect();
    let fitter = CubicFitter::new(&ts)?;
    // The fit-then-evaluate map is linear in the series, and so is smoothing,
    // so extrapolating each raw series first and smoothing once is the same
    // prediction as smoothing every training year and fitting afterwards.
    let weights = fitter.extrapolation_weights(train as f64);
    let extrapolated: Vec<f64> = history
        .values()
        .iter()
        .map(|row| row[..train].iter().zip(&weights).map(|(v, a)| v * a).sum())
        .collect();
    let truth = history.year_column(train);
    let grid = history.grid();

    let curve: Vec<(f64, f64)> = kappas
        .par_iter()
        .map(|&k| {
            let pred = Smoother::new(grid, k).apply(&extrapolated);
            (k.kappa(), mse(&pred, &truth))
        })
        .collect();

    let mut best = 0;
    for (i, &(k, m)) in curve.iter().enumerate() {
        let (bk, bm) = curve[best];
        if m < bm || (m == bm && k < bk) {
            best = i;
        }
    }
    Ok(KappaSearch {
        best: kappas[best],
        best_mse: curve[best].1,
        curve,
    })
}

/// Mean squared error of clamped predictions, summed in index order.
fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    let mut s = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let e = p.max(0.0) - t;
        s += e * e;
    }
    s / pred.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandForecast {
    pub grid: GridSpec,
    pub target_years: Vec<i32>,
    /// `predicted[i][k]`: demand at point `i` in `target_years[k]`.
    pub predicted: Vec<Vec<f64>>,
    pub kappa_used: f64,
    pub holdout_mse: Option<f64>,
}

impl DemandForecast {
    pub fn year_column(&self, k: usize) -> Vec<f64> {
        self.predicted.iter().map(|row| row[k]).collect()
    }

    pub fn to_csv(&self) -> String {
        yearly_csv(&self.target_years, &self.predicted)
    }
}

pub fn forecast_demand(
    history: &DemandHistory,
    kappa: SmoothingParam,
    target_years: &[i32],
) -> Result<DemandForecast> {
    let last = history.last_year();
    if target_years.is_empty() {
        return Err(Error::InvalidArgument("no target years".into()));
    }
    if let Some(y) = target_years.iter().find(|&&y| y <= last) {
        return Err(Error::InvalidArgument(format!(
            "target year {y} is not after the last history year {last}"
        )));
    }
    let years = history.years().len();
    let ts: Vec<f64> = (0..years).map(|t| t as f64).collect();
    let fitter = CubicFitter::new(&ts)?;
    let smoother = Smoother::new(history.grid(), kappa);
    let smoothed: Vec<Vec<f64>> = (0..years)
        .map(|t| smoother.apply(&history.year_column(t)))
        .collect();
    let first = history.first_year();
    let predicted: Vec<Vec<f64>> = (0..history.grid().cell_count())
        .into_par_iter()
        .map(|i| {
            let series: Vec<f64> = smoothed.iter().map(|col| col[i]).collect();
            let c = fitter.fit(&series);
            target_years.iter().map(|&y| predict_year(&c, first, y)).collect()
        })
        .collect();

    let holdout_mse = if years >= 5 {
        Some(tune_kappa(history, &[kappa.kappa()])?.best_mse)
    } else {
        None
    };
    Ok(DemandForecast {
        grid: history.grid(),
        target_years: target_years.to_vec(),
        predicted,
        kappa_used: kappa.kappa(),
        holdout_mse,
    })
}

/// `demand_point_index,<year1>,...` table; shared by forecasts and ground truth.
pub fn yearly_csv(years: &[i32], values: &[Vec<f64>]) -> String {
    let mut out = String::from("demand_point_index");
    for y in years {
        let _ = write!(out, ",{y}");
    }
    out.push('\n');
    for (i, row) in values.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{}", fmt_real(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a [`yearly_csv`] table; every index in `0..cells` must appear once.
pub fn parse_yearly_csv(text: &str, cells: usize) -> Result<(Vec<i32>, Vec<Vec<f64>>)> {
    let mut lines = data_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "demand_point_index" {
        return Err(Error::parse(hline, "header must be `demand_point_index,<year>,...`"));
    }
    let years = cols[1..]
        .iter()
        .map(|c| parse_i32(c, hline, "year"))
        .collect::<Result<Vec<_>>>()?;
    let mut values: Vec<Option<Vec<f64>>> = vec![None; cells];
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(Error::parse(
                ln,
                format!("expected {} fields, found {}", cols.len(), f.len()),
            ));
        }
        let i = parse_usize(f[0], ln, "demand point index")?;
        if i >= cells {
            return Err(Error::parse(ln, format!("demand point index {i} out of range ({cells} cells)")));
        }
        if values[i].is_some() {
            return Err(Error::parse(ln, format!("duplicate demand point index {i}")));
        }
        let row = f[1..]
            .iter()
            .map(|s| {
                let v = parse_f64(s, ln, "demand")?;
                if v < 0.0 {
                    Err(Error::parse(ln, format!("negative demand {v}")))
                } else {
                    Ok(v)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        values[i] = Some(row);
    }
    if let Some(m) = values.iter().position(Option::is_none) {
        return Err(Error::parse(text.lines().count(), format!("missing demand point index {m}")));
    }
    Ok((years, values.into_iter().map(Option::unwrap).collect()))
}

/// Sidecar metadata written next to `forecast.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastMeta {
    pub grid_width: usize,
    pub grid_height: usize,
    pub kappa_used: f64,
    pub holdout_mse: Option<f64>,
    /// `start:stop:step`, or `fixed` when kappa was given explicitly.
    pub kappa_grid: String,
}

impl ForecastMeta {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid_width, self.grid_height)
    }

    pub fn to_text(&self) -> String {
        let mse = self
            .holdout_mse
            .map_or_else(|| "unavailable".to_string(), fmt_real);
        format!(
            "grid_width={}\ngrid_height={}\nkappa_used={}\nholdout_mse={}\nkappa_grid={}\n",
            self.grid_width,
            self.grid_height,
            fmt_real(self.kappa_used),
            mse,
            self.kappa_grid
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut w = None;
        let mut h = None;
        let mut k = None;
        let mut m = None;
        let mut g = None;
        for (ln, line) in data_lines(text) {
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(ln, "expected key=value"))?;
            let val = val.trim();
            match key.trim() {
                "grid_width" => w = Some(parse_usize(val, ln, "grid_width")?),
                "grid_height" => h = Some(parse_usize(val, ln, "grid_height")?),
                "kappa_used" => k = Some(parse_f64(val, ln, "kappa_used")?),
                "holdout_mse" => {
                    m = Some(if val == "unavailable" {
                        None
                    } else {
                        Some(parse_f64(val, ln, "holdout_mse")?)
                    })
                }
                "kappa_grid" => g = Some(val.to_string()),
                other => return Err(Error::parse(ln, format!("unknown key `{other}`"))),
            }
        }
        let missing = |name: &str| Error::parse(text.lines().count().max(1), format!("missing key `{name}`"));
        Ok(Self {
            grid_width: w.ok_or_else(|| missing("grid_width"))?,
            grid_height: h.ok_or_else(|| missing("grid_height"))?,
            kappa_used: k.ok_or_else(|| missing("kappa_used"))?,
            holdout_mse: m.ok_or_else(|| missing("holdout_mse"))?,
            kappa_grid: g.ok_or_else(|| missing("kappa_grid"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    /// Direct double sum over all cell pairs.
    fn smooth_oracle(values: &[f64], grid: GridSpec, kappa: f64) -> Vec<f64> {
        let n = grid.cell_count();
        (0..n)
            .map(|k| {
                let (kx, ky) = grid.center(k);
                let (mut num, mut den) = (0.0, 0.0);
                for j in 0..n {
                    let (jx, jy) = grid.center(j);
                    let d = ((kx - jx).powi(2) + (ky - jy).powi(2)).sqrt();
                    let w = 1.0 / (1.0 + d).powf(kappa);
                    num += values[j] * w;
                    den += w;
                }
                num / den
            })
            .collect()
    }

    fn kp(k: f64) -> SmoothingParam {
        SmoothingParam::new(k).unwrap()
    }

    #[test]
    fn two_cell_hand_example() {
        let grid = GridSpec::new(2, 1).unwrap();
        let out = smooth_demand(&[0.0, 3.0], grid, kp(1.0));
        let oracle = smooth_oracle(&[0.0, 3.0], grid, 1.0);
        assert!((oracle[0] - 1.0).abs() < 1e-15);
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!((out[1] - oracle[1]).abs() < 1e-15);
    }

    #[test]
    fn kappa_limits() {
        let grid = GridSpec::new(5, 4).unwrap();
        let vals: Vec<f64> = (0..20).map(|i| (i * 7 % 11) as f64 + 0.25).collect();
        let mean = vals.iter().sum::<f64>() / 20.0;
        for v in smooth_demand(&vals, grid, kp(0.0)) {
            assert!((v - mean).abs() <= 1e-12 * mean);
        }
        let ident = smooth_demand(&vals, grid, kp(1e6));
        for (a, b) in ident.iter().zip(&vals) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
    }

    #[test]
    fn matches_pairwise_oracle() {
        let grid = GridSpec::new(7, 5).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let vals: Vec<f64> = (0..35).map(|_| rng.gen_range(0.0..100.0)).collect();
        for k in [0.3, 1.0, 2.5, 4.7, 9.0] {
            let a = smooth_demand(&vals, grid, kp(k));
            let b = smooth_oracle(&vals, grid, k);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "kappa {k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn exact_polynomials_recovered() {
        let line: Vec<(i32, f64)> = (0..6).map(|t| (2010 + t, 2.0 + t as f64)).collect();
        let c = fit_cubic(&line).unwrap();
        for (a, b) in c.0.iter().zip([2.0, 1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        let cube: Vec<(i32, f64)> = (0..9).map(|t| (2010 + t, (t as f64).powi(3))).collect();
        let c = fit_cubic(&cube).unwrap();
        for (a, b) in c.0.iter().zip([0.0, 0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_needs_four_points() {
        let err = fit_cubic(&[(2010, 1.0), (2011, 2.0), (2012, 3.0)]).unwrap_err();
        assert!(err.to_string().contains("insufficient history"));
        assert!(fit_cubic(&[(2010, 1.0), (2010, 2.0), (2011, 3.0), (2012, 3.0)]).is_err());
    }

    #[test]
    fn predict_examples() {
        let c = PolyCoeffs([2.0, 1.0, 0.0, 0.0]);
        assert_eq!(predict_year(&c, 2010, 2018), 10.0);
        assert_eq!(predict_year(&PolyCoeffs([-5.0, 0.0, 0.0, 0.0]), 2010, 2030), 0.0);
    }

    #[test]
    fn single_cell_linear_forecast() {
        let grid = GridSpec::new(1, 1).unwrap();
        let h = DemandHistory::new(grid, (2010..=2018).collect(), vec![(1..=9).map(f64::from).collect()]).unwrap();
        for k in [0.0, 1.0, 4.7] {
            let f = forecast_demand(&h, kp(k), &[2019, 2020]).unwrap();
            assert!((f.predicted[0][0] - 10.0).abs() < 1e-6);
            assert!((f.predicted[0][1] - 11.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_history_zero_forecast() {
        let grid = GridSpec::new(3, 3).unwrap();
        let h = DemandHistory::new(grid, (2010..2016).collect(), vec![vec![0.0; 6]; 9]).unwrap();
        let f = forecast_demand(&h, kp(2.0), &[2016, 2017]).unwrap();
        assert!(f.predicted.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(f.holdout_mse, Some(0.0));
    }

    #[test]
    fn target_years_must_follow_history() {
        let grid = GridSpec::new(1, 1).unwrap();
        let h = DemandHistory::new(grid, (2010..2015).collect(), vec![vec![1.0; 5]]).unwrap();
        assert!(forecast_demand(&h, kp(1.0), &[2014]).is_err());
    }

    #[test]
    fn tune_requires_five_years_and_handles_flat_fields() {
        let grid = GridSpec::new(3, 2).unwrap();
        let short = DemandHistory::new(grid, (2010..2014).collect(), vec![vec![1.0; 4]; 6]).unwrap();
        assert!(matches!(
            tune_kappa(&short, &[1.0]),
            Err(Error::InsufficientHistory { have: 4, need: 5 })
        ));
        // Spatially constant field with a bumpy temporal profile.
        let series = vec![3.0, 5.0, 4.0, 8.0, 7.0, 12.0];
        let flat = DemandHistory::new(grid, (2010..2016).collect(), vec![series; 6]).unwrap();
        let s = tune_kappa(&flat, &[2.0, 0.5, 7.0]).unwrap();
        assert_eq!(s.best.kappa(), 0.5);
        let m0 = s.curve[0].1;
        assert!(s.curve.iter().all(|(_, m)| (m - m0).abs() <= 1e-12 * m0.max(1.0)));
        let single = tune_kappa(&flat, &[4.7]).unwrap();
        assert_eq!(single.best.kappa(), 4.7);
    }

    #[test]
    fn default_grid_has_101_points() {
        let v = DEFAULT_KAPPA_GRID.values();
        assert_eq!(v.len(), 101);
        assert_eq!(v[47], 4.7);
        assert_eq!(v[100], 10.0);
        assert_eq!(KappaGrid::parse("0:10:0.1").unwrap(), DEFAULT_KAPPA_GRID);
        assert!(KappaGrid::parse("1:0:0.1").is_err());
    }

    #[test]
    fn meta_roundtrip() {
        let m = ForecastMeta {
            grid_width: 4,
            grid_height: 3,
            kappa_used: 4.7,
            holdout_mse: Some(0.125),
            kappa_grid: "0:10:0.1".into(),
        };
        assert_eq!(ForecastMeta::parse(&m.to_text()).unwrap(), m);
        let m2 = ForecastMeta { holdout_mse: None, ..m };
        assert_eq!(ForecastMeta::parse(&m2.to_text()).unwrap(), m2);
    }

    proptest! {
        #[test]
        fn convex_combination_and_permutation(
            vals in proptest::collection::vec(0.0f64..1e4, 12),
            kappa in 0.0f64..12.0,
        ) {
            let grid = GridSpec::new(4, 3).unwrap();
            let out = smooth_demand(&vals, grid, kp(kappa));
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.iter().all(|v| *v >= lo && *v <= hi));
            // Mirroring the grid left-right relabels cells without changing distances.
            let mirror = |i: usize| { let (c, r) = grid.coords(i); grid.index(3 - c, r) };
            let permuted: Vec<f64> = (0..12).map(|i| vals[mirror(i)]).collect();
            let out_p = smooth_demand(&permuted, grid, kp(kappa));
            for i in 0..12 {
                prop_assert!((out_p[i] - out[mirror(i)]).abs() <= 1e-12 * hi.max(1.0));
            }
        }

        #[test]
        fn exact_cubics_any_abscissae(
            c in proptest::array::uniform4(-5.0f64..5.0),
            start in 1990i32..2020,
            extra in 0usize..6,
        ) {
            let pts: Vec<(i32, f64)> = (0..4 + extra as i32)
                .map(|k| (start + k, PolyCoeffs(c).eval(k as f64)))
                .collect();
            let fit = fit_cubic(&pts).unwrap();
            for (a, b) in fit.0.iter().zip(c) {
                prop_assert!((a - b).abs() <= 1e-9, "{:?} vs {:?}", fit.0, c);
            }
        }
    }
}
