//! Cost components, constraint validation and per-year scoring.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::grid::{fmt_real, DistanceMatrix};
use crate::optimizer::{Assignment, CostParams, PlacementModel, PlacementSolution, FEASIBILITY_TOL};

pub const SCORE_HEADER: &str = "year,customer_dissatisfaction,demand_mismatch,infrastructure,total,mismatch_available";

/// Default absolute tolerance shared with the optimizer.
pub const DEFAULT_TOL: f64 = FEASIBILITY_TOL;

/// `alpha * sum x_ij d_ij`, summed in `(cell, supply)` order.
pub fn customer_dissatisfaction(x: &[Assignment], d: &DistanceMatrix, alpha: f64) -> f64 {
    let mut sorted: Vec<&Assignment> = x.iter().collect();
    sorted.sort_by_key(|a| (a.cell, a.supply));
    alpha * sorted.iter().map(|a| a.flow * d.get(a.cell, a.supply)).sum::<f64>()
}

pub fn demand_mismatch(predicted: &[f64], actual: &[f64], beta: f64) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted values against {} actual",
            predicted.len(),
            actual.len()
        )));
    }
    Ok(beta * predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>())
}

pub fn infrastructure_cost(n_scs: &[i64], n_fcs: &[i64], gamma: f64, r: f64) -> f64 {
    gamma * n_scs.iter().zip(n_fcs).map(|(&s, &f)| s as f64 + r * f as f64).sum::<f64>()
}

/// Charger counts and assignment as read back for checking. Counts are signed
/// so that negative entries can be reported rather than rejected at parse time.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub n_scs: Vec<i64>,
    pub n_fcs: Vec<i64>,
    pub assignment: Vec<Assignment>,
}

impl From<&PlacementSolution> for Placement {
    fn from(s: &PlacementSolution) -> Self {
        Self {
            n_scs: s.n_scs.iter().map(|&v| v as i64).collect(),
            n_fcs: s.n_fcs.iter().map(|&v| v as i64).collect(),
            assignment: s.assignment.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Assignment { cell: usize, supply: usize },
    Supply(usize),
    Cell(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Assignment { cell, supply } => write!(f, "assignment {cell}->{supply}"),
            Location::Supply(j) => write!(f, "supply point {j}"),
            Location::Cell(i) => write!(f, "demand point {i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    /// 1: x >= 0, 2: counts >= 0, 3: slots, 4: baseline, 5: capacity, 6: demand.
    pub constraint: u8,
    pub location: Location,
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.constraint {
            1 => "negative assignment",
            2 => "negative charger count",
            3 => "parking slots exceeded",
            4 => "charger count below existing",
            5 => "capacity exceeded",
            _ => "demand not met exactly",
        };
        write!(f, "constraint {} ({what}) at {}: magnitude {}", self.constraint, self.location, self.magnitude)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

pub fn validate_solution(model: &PlacementModel, plan: &Placement, tol: f64) -> Result<ValidationReport> {
    let m = model.supply_count();
    let n = model.cell_count();
    if plan.n_scs.len() != m || plan.n_fcs.len() != m {
        return Err(Error::ShapeMismatch(format!("counts for {} supply points, model has {m}", plan.n_scs.len())));
    }
    if let Some(a) = plan.assignment.iter().find(|a| a.cell >= n || a.supply >= m) {
        return Err(Error::ShapeMismatch(format!(
            "assignment {}->{} outside {n} demand points x {m} supply points",
            a.cell, a.supply
        )));
    }
    let mut v = Vec::new();
    let mut sorted = plan.assignment.clone();
    sorted.sort_by_key(|a| (a.cell, a.supply));
    for a in &sorted {
        if a.flow < -tol {
            v.push(Violation {
                constraint: 1,
                location: Location::Assignment {
                    cell: a.cell,
                    supply: a.supply,
                },
                magnitude: -a.flow,
            });
        }
    }
    let p = model.params();
    let mut served = vec![0.0; m];
    let mut met = vec![0.0; n];
    for a in &sorted {
        served[a.supply] += a.flow;
        met[a.cell] += a.flow;
    }
    let points = model.infrastructure().supply_points();
    for (j, sp) in points.iter().enumerate() {
        let (s, f) = (plan.n_scs[j], plan.n_fcs[j]);
        for c in [s, f] {
            if c < 0 {
                v.push(Violation {
                    constraint: 2,
                    location: Location::Supply(j),
                    magnitude: -c as f64,
                });
            }
        }
        let over = s + f - sp.parking_slots as i64;
        if over > 0 {
            v.push(Violation {
                constraint: 3,
                location: Location::Supply(j),
                magnitude: over as f64,
            });
        }
        for (c, base) in [(s, sp.existing_scs), (f, sp.existing_fcs)] {
            if c < base as i64 {
                v.push(Violation {
                    constraint: 4,
                    location: Location::Supply(j),
                    magnitude: (base as i64 - c) as f64,
                });
            }
        }
        let cap = s as f64 * p.cap_scs + f as f64 * p.cap_fcs;
        if served[j] > cap + tol {
            v.push(Violation {
                constraint: 5,
                location: Location::Supply(j),
                magnitude: served[j] - cap,
            });
        }
    }
    for (i, (&got, &want)) in met.iter().zip(model.demand()).enumerate() {
        if (got - want).abs() > tol {
            v.push(Violation {
                constraint: 6,
                location: Location::Cell(i),
                magnitude: (got - want).abs(),
            });
        }
    }
    Ok(ValidationReport {
        passed: v.is_empty(),
        violations: v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub customer_dissatisfaction: f64,
    pub demand_mismatch: f64,
    pub infrastructure: f64,
    pub total: f64,
    /// False when no ground truth was supplied and the mismatch is reported as 0.
    pub mismatch_available: bool,
}

pub fn total_score(plan: &Placement, model: &PlacementModel, actual: Option<&[f64]>) -> Result<CostBreakdown> {
    let p: &CostParams = model.params();
    let cd = customer_dissatisfaction(&plan.assignment, model.distances(), p.alpha);
    let dm = match actual {
        Some(a) => demand_mismatch(model.demand(), a, p.beta)?,
        None => 0.0,
    };
    let infra = infrastructure_cost(&plan.n_scs, &plan.n_fcs, p.gamma, p.r);
    Ok(CostBreakdown {
        customer_dissatisfaction: cd,
        demand_mismatch: dm,
        infrastructure: infra,
        total: cd + dm + infra,
        mismatch_available: actual.is_some(),
    })
}

pub fn score_csv(rows: &[(i32, CostBreakdown)]) -> String {
    let mut s = String::from(SCORE_HEADER);
    s.push('\n');
    for (y, b) in rows {
        let _ = writeln!(
            s,
            "{y},{},{},{},{},{}",
            fmt_real(b.customer_dissatisfaction),
            fmt_real(b.demand_mismatch),
            fmt_real(b.infrastructure),
            fmt_real(b.total),
            b.mismatch_available
        );
    }
    s
}
