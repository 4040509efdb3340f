//! Seeded synthetic instances with known future demand.
//!
//! The random stream is `Xoshiro256PlusPlus` seeded through `seed_from_u64`
//! (SplitMix64 expansion); draws happen in a fixed order, so an instance is a
//! pure function of its config.
//!
//! Demand model, per cell `j` and year offset `t`:
//!
//! ```text
//! level                      uniform baseline demand, the same in every cell
//! growth_j(t) = B_j * (tau_j(t) - 1)
//! tau_j(t)    = 1 + a_j t + b_j t^2 + c_j t^3
//! ```
//!
//! `B` is a rough lognormal origin field. Up to the penultimate history year
//! the growth is recorded at its origin cell; from the last history year on it
//! is realised spread over the neighbourhood, i.e. smoothed with `base_kappa`.
//! A forecaster that smooths the extrapolated origin series with the same
//! kappa therefore reproduces the held-out year exactly when noise is zero.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::forecast::{Smoother, SmoothingParam};
use crate::grid::{DemandHistory, GridSpec, InfrastructureState, SupplyPoint};
use crate::optimizer::CostParams;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub n_supply: usize,
    pub first_year: i32,
    pub history_years: usize,
    pub future_years: usize,
    /// Spatial spread of realised demand growth.
    pub base_kappa: f64,
    /// Ranges for the linear, quadratic and cubic trend coefficients.
    pub trend: [(f64, f64); 3],
    /// Additive Gaussian noise, as a fraction of `demand_scale`.
    pub noise_sigma: f64,
    /// Mean of the origin field before any rescaling.
    pub demand_scale: f64,
    /// Uniform level as a fraction of `demand_scale`.
    pub base_level: f64,
    /// Inclusive parking-slot range per supply point.
    pub slot_range: (u32, u32),
    /// Share of final-history-year local demand covered by existing chargers.
    pub preexisting_fraction: f64,
    /// Peak-year total demand as a share of maximum buildable capacity.
    pub target_utilization: Option<f64>,
    /// Replace additive noise by multiplicative lognormal noise.
    pub model_mismatch: bool,
    pub params: CostParams,
}

impl SynthConfig {
    pub fn new(seed: u64, grid: GridSpec, n_supply: usize) -> Self {
        Self {
            seed,
            grid,
            n_supply,
            first_year: 2010,
            history_years: 9,
            future_years: 2,
            base_kappa: 4.7,
            trend: [(0.05, 0.25), (0.0, 0.03), (0.0, 0.002)],
            noise_sigma: 0.002,
            demand_scale: 50.0,
            base_level: 0.2,
            slot_range: (8, 24),
            preexisting_fraction: 0.6,
            target_utilization: Some(0.4),
            model_mismatch: false,
            params: CostParams::default(),
        }
    }

    /// 64x64 grid with 100 supply points, 2010-2018 history, 2019-2020 truth.
    pub fn full_scale(seed: u64) -> Self {
        Self::new(seed, GridSpec::square(64).expect("nonzero"), 100)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_supply == 0 {
            return bad("n_supply must be positive");
        }
        if self.history_years == 0 {
            return bad("history_years must be positive");
        }
        if !(self.base_kappa.is_finite() && self.base_kappa >= 0.0) {
            return bad("base_kappa must be finite and nonnegative");
        }
        if self.trend.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return bad("trend ranges must be finite with lo <= hi");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be nonnegative");
        }
        if !(self.demand_scale.is_finite() && self.demand_scale > 0.0) {
            return bad("demand_scale must be positive");
        }
        if !(self.base_level.is_finite() && self.base_level >= 0.0) {
            return bad("base_level must be nonnegative");
        }
        if self.slot_range.0 > self.slot_range.1 || self.slot_range.1 == 0 {
            return bad("slot_range must be a nonempty interval with a positive maximum");
        }
        if !(0.0..=1.0).contains(&self.preexisting_fraction) {
            return bad("preexisting_fraction must lie in [0, 1]");
        }
        if let Some(u) = self.target_utilization {
            if !(u > 0.0 && u <= 1.0) {
                return bad("target_utilization must lie in (0, 1]");
            }
        }
        Ok(())
    }

    pub fn history_year_list(&self) -> Vec<i32> {
        (0..self.history_years as i32).map(|k| self.first_year + k).collect()
    }

    pub fn future_year_list(&self) -> Vec<i32> {
        let start = self.first_year + self.history_years as i32;
        (0..self.future_years as i32).map(|k| start + k).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub history: DemandHistory,
    pub infrastructure: InfrastructureState,
    pub future_years: Vec<i32>,
    /// `ground_truth[i][k]`: true demand at point `i` in `future_years[k]`.
    pub ground_truth: Vec<Vec<f64>>,
}

impl SynthInstance {
    pub fn ground_truth_column(&self, k: usize) -> Vec<f64> {
        self.ground_truth.iter().map(|row| row[k]).collect()
    }
}

pub fn generate_instance(config: &SynthConfig) -> Result<SynthInstance> {
    config.validate()?;
    let grid = config.grid;
    let n = grid.cell_count();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);

    let origin: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.demand_scale * (z - 0.5).exp()
        })
        .collect();
    let trends: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            let mut c = [0.0; 3];
            for (k, &(lo, hi)) in config.trend.iter().enumerate() {
                c[k] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            }
            c
        })
        .collect();

    let smoother = Smoother::new(grid, SmoothingParam::new(config.base_kappa)?);
    let level = config.base_level * config.demand_scale;
    let total_years = config.history_years + config.future_years;
    let spread_from = config.history_years - 1;
    // clean[t][j], noise-free demand
    let clean: Vec<Vec<f64>> = (0..total_years)
        .map(|t| {
            let tt = t as f64;
            let growth: Vec<f64> = origin
                .iter()
                .zip(&trends)
                .map(|(b, [a1, a2, a3])| b * (((a3 * tt + a2) * tt + a1) * tt))
                .collect();
            let placed = if t >= spread_from {
                smoother.apply(&growth)
            } else {
                growth
            };
            placed.into_iter().map(|g| level + g).collect()
        })
        .collect();
    let mut noisy = clean;
    for year in noisy.iter_mut() {
        for v in year.iter_mut() {
            if config.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                if config.model_mismatch {
                    let s = config.noise_sigma;
                    *v *= (s * z - 0.5 * s * s).exp();
                } else {
                    *v += config.noise_sigma * config.demand_scale * z;
                }
            }
            *v = v.max(0.0);
        }
    }

    let (w, h) = (grid.width() as f64, grid.height() as f64);
    let mut points: Vec<SupplyPoint> = (0..config.n_supply)
        .map(|index| {
            let x = rng.gen_range(0.0..1.0) * (w - 1.0).max(0.0);
            let y = rng.gen_range(0.0..1.0) * (h - 1.0).max(0.0);
            let slots = rng.gen_range(config.slot_range.0..=config.slot_range.1);
            SupplyPoint {
                index,
                x,
                y,
                parking_slots: slots,
                existing_scs: 0,
                existing_fcs: 0,
            }
        })
        .collect();
    let slow_first: Vec<bool> = (0..config.n_supply).map(|_| rng.gen_bool(0.5)).collect();

    // Scale so the busiest year uses the requested share of buildable capacity.
    let p = &config.params;
    let peak = |d: &[Vec<f64>]| d.iter().map(|y| y.iter().sum::<f64>()).fold(0.0, f64::max);
    if let Some(u) = config.target_utilization {
        let cap: f64 = points.iter().map(|sp| sp.parking_slots as f64 * p.cap_fcs).sum();
        let pk = peak(&noisy);
        if pk > 0.0 {
            let s = u * cap / pk;
            noisy.iter_mut().flatten().for_each(|v| *v *= s);
        }
    }

    // Existing chargers cover a share of each point's nearest-cell demand.
    let last_hist = &noisy[config.history_years - 1];
    let mut local = vec![0.0; points.len()];
    for (i, &dem) in last_hist.iter().enumerate() {
        let (cx, cy) = grid.center(i);
        let nearest = points
            .iter()
            .map(|sp| crate::grid::euclid(cx, cy, sp.x, sp.y))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .expect("n_supply > 0");
        local[nearest] += dem;
    }
    for (sp, (&need, &slow)) in points.iter_mut().zip(local.iter().zip(&slow_first)) {
        let target = config.preexisting_fraction * need;
        let slots = sp.parking_slots;
        let (mut s, mut f);
        if slow {
            s = ((target / p.cap_scs).ceil() as u32).min(slots);
            let rest = (target - s as f64 * p.cap_scs).max(0.0);
            f = ((rest / p.cap_fcs).ceil() as u32).min(slots - s);
        } else {
            f = ((target / p.cap_fcs).floor() as u32).min(slots);
            let rest = (target - f as f64 * p.cap_fcs).max(0.0);
            s = ((rest / p.cap_scs).ceil() as u32).min(slots - f);
        }
        // Keep at least a quarter of the lot free for expansion.
        while s + f > 0 && 4 * (s + f) > 3 * slots {
            if s > 0 {
                s -= 1;
            } else {
                f -= 1;
            }
        }
        sp.existing_scs = s;
        sp.existing_fcs = f;
    }

    // Existing slow chargers can never be removed, which lowers the reachable
    // capacity; rescale once more if the peak year would not fit.
    let max_cap: f64 = points
        .iter()
        .map(|sp| max_capacity(sp, p))
        .sum();
    let pk = peak(&noisy);
    if pk > 0.95 * max_cap {
        let s = 0.95 * max_cap / pk;
        noisy.iter_mut().flatten().for_each(|v| *v *= s);
    }

    let hist_years = config.history_year_list();
    let mut values = vec![Vec::with_capacity(config.history_years); n];
    for year in &noisy[..config.history_years] {
        for (row, v) in values.iter_mut().zip(year) {
            row.push(*v);
        }
    }
    let mut truth = vec![Vec::with_capacity(config.future_years); n];
    for year in &noisy[config.history_years..] {
        for (row, v) in truth.iter_mut().zip(year) {
            row.push(*v);
        }
    }
    Ok(SynthInstance {
        history: DemandHistory::new(grid, hist_years, values)?,
        infrastructure: InfrastructureState::new(points, Some(config.first_year + spread_from as i32))?,
        future_years: config.future_year_list(),
        ground_truth: truth,
    })
}

/// Largest capacity reachable at a supply point without removing chargers.
pub fn max_capacity(sp: &SupplyPoint, p: &CostParams) -> f64 {
    let free = (sp.parking_slots - sp.existing_scs - sp.existing_fcs) as f64;
    let base = sp.existing_scs as f64 * p.cap_scs + sp.existing_fcs as f64 * p.cap_fcs;
    base + free * p.cap_scs.max(p.cap_fcs)
}
