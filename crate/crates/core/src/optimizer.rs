//! Charger placement: the mixed-integer model, its exact flow relaxation and
//! a branch-and-bound search over charger counts.
//!
//! Every supply point contributes a capacity-cost envelope: the cheapest
//! charger mix reaching a given capacity is a step function, and its lower
//! convex hull becomes a chain of parallel tranche arcs into the sink. With no
//! branching bounds the hull is exactly the continuous relaxation, so the root
//! bound is the LP optimum. Branching tightens per-point capacity bounds,
//! which only changes the tranches of that point.
//!
//! Flows run on integers (demand x 1e6, unit cost x 1e6). Bounds are not taken
//! from the integer objective: the node potentials are priced against the
//! real-valued costs and demands, which yields a valid dual bound regardless
//! of rounding.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::flow::{verify_certificate, CertificateViolation, FlowNetwork, FlowSolution};
use crate::grid::{data_lines, fmt_real, parse_f64, parse_i32, parse_usize};
use crate::grid::{distance_matrix, DistanceMatrix, GridSpec, InfrastructureState};

/// Integer flow units per demand unit.
pub const DEMAND_UNITS: f64 = 1e6;
/// Integer cost units per unit cost.
pub const COST_UNITS: f64 = 1e6;
/// Absolute tolerance on continuous constraint rows.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Assignment arcs seeded per demand cell before pricing adds the rest.
const NEAREST: usize = 8;

pub const SOLUTION_HEADER: &str = "year,supply_point_index,n_scs,n_fcs";
pub const ASSIGNMENT_HEADER: &str = "year,demand_point_index,supply_point_index,flow";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub r: f64,
    pub cap_scs: f64,
    pub cap_fcs: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 25.0,
            gamma: 600.0,
            r: 1.5,
            cap_scs: 200.0,
            cap_fcs: 400.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("r", self.r),
            ("cap_scs", self.cap_scs),
            ("cap_fcs", self.cap_fcs),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scs_cost(&self) -> f64 {
        self.gamma
    }

    pub fn fcs_cost(&self) -> f64 {
        self.gamma * self.r
    }

    /// Whether a unit of fast capacity is no dearer than a unit of slow.
    pub fn fast_dominates(&self) -> bool {
        self.fcs_cost() / self.cap_fcs <= self.scs_cost() / self.cap_scs
    }

    pub fn charger_cost(&self, scs: u32, fcs: u32) -> f64 {
        self.gamma * (scs as f64 + self.r * fcs as f64)
    }

    pub fn capacity(&self, scs: u32, fcs: u32) -> f64 {
        scs as f64 * self.cap_scs + fcs as f64 * self.cap_fcs
    }
}

/// One admissible charger mix at a supply point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Config {
    scs: u32,
    fcs: u32,
    units: i64,
    cap: f64,
    cost: f64,
}

/// A piece of the capacity-cost hull: `width` flow units at `slope` per demand unit.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Tranche {
    units: i64,
    width: f64,
    slope: f64,
}

/// Undominated mixes (capacity and cost both strictly increasing) and their hull.
#[derive(Debug, Clone)]
struct Envelope {
    frontier: Vec<Config>,
    /// Hull vertices as indices into `frontier`, the first is always 0.
    hull: Vec<usize>,
    tranches: Vec<Tranche>,
}

impl Envelope {
    fn fixed_cost(&self) -> f64 {
        self.frontier[0].cost
    }

    fn max_units(&self) -> i64 {
        self.frontier.last().map_or(0, |c| c.units)
    }

    /// Cheapest mix whose capacity covers `units`.
    fn cover(&self, units: i64) -> &Config {
        let k = self.frontier.partition_point(|c| c.units < units);
        &self.frontier[k.min(self.frontier.len() - 1)]
    }

    /// Relaxed cost of carrying `u` demand units.
    fn hull_cost(&self, u: f64) -> f64 {
        let mut cost = self.fixed_cost();
        let mut rest = u;
        for t in &self.tranches {
            if rest <= 0.0 {
                break;
            }
            let take = rest.min(t.width);
            cost += take * t.slope;
            rest -= take;
        }
        cost
    }

    /// Convex combination of hull mixes that realises `units` of capacity.
    fn fractional(&self, units: i64) -> (f64, f64) {
        let first = &self.frontier[0];
        if units <= first.units {
            return (first.scs as f64, first.fcs as f64);
        }
        for w in self.hull.windows(2) {
            let (a, b) = (&self.frontier[w[0]], &self.frontier[w[1]]);
            if units <= b.units {
                let lam = (units - a.units) as f64 / (b.units - a.units) as f64;
                return (
                    a.scs as f64 + lam * (b.scs as f64 - a.scs as f64),
                    a.fcs as f64 + lam * (b.fcs as f64 - a.fcs as f64),
                );
            }
        }
        let last = &self.frontier[*self.hull.last().expect("nonempty hull")];
        (last.scs as f64, last.fcs as f64)
    }
}

/// The placement problem for one target year.
#[derive(Debug, Clone)]
pub struct PlacementModel {
    distances: DistanceMatrix,
    demand: Vec<f64>,
    infra: InfrastructureState,
    params: CostParams,
    units: Vec<i64>,
    /// Cells with positive scaled demand, in index order.
    active: Vec<usize>,
    unit_caps: [i64; 2],
    nearest: Vec<Vec<u32>>,
}

pub fn build_model(
    grid: GridSpec,
    demand: &[f64],
    infra: &InfrastructureState,
    params: CostParams,
) -> Result<PlacementModel> {
    PlacementModel::new(distance_matrix(grid, infra), demand.to_vec(), infra.clone(), params)
}

impl PlacementModel {
    pub fn new(
        distances: DistanceMatrix,
        demand: Vec<f64>,
        infra: InfrastructureState,
        params: CostParams,
    ) -> Result<Self> {
        params.validate()?;
        if demand.len() != distances.cells() {
            return Err(Error::ShapeMismatch(format!(
                "{} demand values for {} cells",
                demand.len(),
                distances.cells()
            )));
        }
        if infra.len() != distances.supplies() {
            return Err(Error::ShapeMismatch(format!(
                "{} supply points but distances for {}",
                infra.len(),
                distances.supplies()
            )));
        }
        if let Some((i, v)) = demand.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("demand at cell {i} is {v}")));
        }
        let units: Vec<i64> = demand.iter().map(|v| (v * DEMAND_UNITS).round_ties_even() as i64).collect();
        let active: Vec<usize> = (0..units.len()).filter(|&i| units[i] > 0).collect();
        let unit_caps = [
            (params.cap_scs * DEMAND_UNITS).floor() as i64,
            (params.cap_fcs * DEMAND_UNITS).floor() as i64,
        ];
        let m = infra.len();
        let nearest = active
            .iter()
            .map(|&i| {
                let row = distances.row(i);
                let mut idx: Vec<u32> = (0..m as u32).collect();
                idx.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]).then(a.cmp(&b)));
                idx.truncate(NEAREST);
                idx.sort_unstable();
                idx
            })
            .collect();
        let model = Self {
            distances,
            demand,
            infra,
            params,
            units,
            active,
            unit_caps,
            nearest,
        };
        let total: f64 = model.demand.iter().sum();
        let need: i64 = model.units.iter().sum();
        let have: i64 = (0..m).map(|j| model.config_max_units(j)).sum();
        if need > have {
            let capacity = (0..m).map(|j| model.max_capacity(j)).sum();
            return Err(Error::InfeasibleInstance { demand: total, capacity });
        }
        Ok(model)
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn infrastructure(&self) -> &InfrastructureState {
        &self.infra
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn supply_count(&self) -> usize {
        self.infra.len()
    }

    pub fn cell_count(&self) -> usize {
        self.demand.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.demand.iter().sum()
    }

    /// Largest capacity reachable at supply point `j` without removing chargers.
    pub fn max_capacity(&self, j: usize) -> f64 {
        let sp = &self.infra.supply_points()[j];
        let free = sp.parking_slots - sp.existing_scs - sp.existing_fcs;
        let best = self.params.cap_scs.max(self.params.cap_fcs);
        self.params.capacity(sp.existing_scs, sp.existing_fcs) + free as f64 * best
    }

    fn config_max_units(&self, j: usize) -> i64 {
        let sp = &self.infra.supply_points()[j];
        let free = (sp.parking_slots - sp.existing_scs - sp.existing_fcs) as i64;
        sp.existing_scs as i64 * self.unit_caps[0]
            + sp.existing_fcs as i64 * self.unit_caps[1]
            + free * self.unit_caps[0].max(self.unit_caps[1])
    }

    fn unit_capacity(&self, scs: u32, fcs: u32) -> i64 {
        scs as i64 * self.unit_caps[0] + fcs as i64 * self.unit_caps[1]
    }

    fn arc_cost(&self, i: usize, j: usize) -> i64 {
        (self.params.alpha * self.distances.get(i, j) * COST_UNITS).round() as i64
    }

    /// Undominated mixes at `j` whose unit capacity lies in `[lo, hi]`.
    fn envelope(&self, j: usize, lo: i64, hi: i64) -> Option<Envelope> {
        let sp = &self.infra.supply_points()[j];
        let mut configs = Vec::new();
        for scs in sp.existing_scs..=sp.parking_slots - sp.existing_fcs {
            for fcs in sp.existing_fcs..=sp.parking_slots - scs {
                let units = self.unit_capacity(scs, fcs);
                if units < lo || units > hi {
                    continue;
                }
                configs.push(Config {
                    scs,
                    fcs,
                    units,
                    cap: self.params.capacity(scs, fcs),
                    cost: self.params.charger_cost(scs, fcs),
                });
            }
        }
        if configs.is_empty() {
            return None;
        }
        configs.sort_by(|a, b| {
            b.units
                .cmp(&a.units)
                .then(a.cost.total_cmp(&b.cost))
                .then(a.scs.cmp(&b.scs))
        });
        let mut frontier: Vec<Config> = Vec::new();
        for c in configs {
            if frontier.last().is_none_or(|f| c.cost < f.cost) {
                if frontier.last().is_some_and(|f| f.units == c.units) {
                    continue;
                }
                frontier.push(c);
            }
        }
        frontier.reverse();

        // Lower hull of (0, cost_0) and the frontier corners.
        let base = frontier[0].cost;
        let point = |k: usize| -> (i64, f64) {
            if k == 0 {
                (0, base)
            } else {
                (frontier[k - 1].units, frontier[k - 1].cost)
            }
        };
        // Hull over virtual points 0..=len: point 0 is the origin, k>0 is frontier[k-1].
        let mut hull: Vec<usize> = Vec::new();
        for k in 0..=frontier.len() {
            let (xk, yk) = point(k);
            if k > 0 && xk == 0 {
                continue;
            }
            while hull.len() >= 2 {
                let (xa, ya) = point(hull[hull.len() - 2]);
                let (xb, yb) = point(hull[hull.len() - 1]);
                // Drop b if it lies on or above the chord a-k.
                let lhs = (yb - ya) * (xk - xa) as f64;
                let rhs = (yk - ya) * (xb - xa) as f64;
                if lhs >= rhs {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(k);
        }
        let mut tranches = Vec::with_capacity(hull.len());
        let mut vertices = vec![0usize];
        for w in hull.windows(2) {
            let (xa, ya) = point(w[0]);
            let (xb, yb) = point(w[1]);
            let cap_a = if w[0] == 0 { 0.0 } else { frontier[w[0] - 1].cap };
            let cap_b = frontier[w[1] - 1].cap;
            let width = cap_b - cap_a;
            tranches.push(Tranche {
                units: xb - xa,
                width,
                slope: (yb - ya) / width,
            });
            if w[1] - 1 != 0 {
                vertices.push(w[1] - 1);
            }
        }
        Some(Envelope {
            frontier,
            hull: vertices,
            tranches,
        })
    }

    fn root_bounds(&self) -> Vec<(i64, i64)> {
        vec![(0, i64::MAX); self.supply_count()]
    }

    /// Real-valued objective of a candidate placement.
    pub fn objective(&self, scs: &[u32], fcs: &[u32], assignment: &[Assignment]) -> f64 {
        self.transport_cost(assignment) + self.infrastructure_cost(scs, fcs)
    }

    pub fn transport_cost(&self, assignment: &[Assignment]) -> f64 {
        self.params.alpha
            * assignment
                .iter()
                .map(|a| a.flow * self.distances.get(a.cell, a.supply))
                .sum::<f64>()
    }

    pub fn infrastructure_cost(&self, scs: &[u32], fcs: &[u32]) -> f64 {
        scs.iter()
            .zip(fcs)
            .map(|(&s, &f)| self.params.charger_cost(s, f))
            .sum()
    }
}

/// Demand `flow` at `cell` served by `supply`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub cell: usize,
    pub supply: usize,
    pub flow: f64,
}

/// A solved assignment flow and the potentials that certify it.
#[derive(Debug, Clone)]
pub struct FlowCertificate {
    /// The restricted network actually solved.
    pub network: FlowNetwork,
    pub solution: FlowSolution,
    /// `(cell, supply)` for every assignment arc in `network`, in arc order.
    arc_pairs: Vec<(usize, usize)>,
    /// Node of each active cell, then supplies, then the sink.
    cell_nodes: Vec<usize>,
    supply_base: usize,
}

impl FlowCertificate {
    /// Checks the solved network and prices every omitted assignment arc.
    pub fn verify(&self, model: &PlacementModel) -> std::result::Result<(), CertificateViolation> {
        verify_certificate(&self.network, &self.solution)?;
        let pi = &self.solution.potential;
        let m = model.supply_count();
        let mut present = vec![false; m];
        let mut start = 0;
        for (k, &node) in self.cell_nodes.iter().enumerate() {
            let i = model.active[k];
            let end = start + self.arc_pairs[start..].iter().take_while(|p| p.0 == i).count();
            for p in &self.arc_pairs[start..end] {
                present[p.1] = true;
            }
            for (j, seen) in present.iter_mut().enumerate() {
                if !*seen {
                    let rc = model.arc_cost(i, j) + pi[node] - pi[self.supply_base + j];
                    if rc < 0 {
                        return Err(CertificateViolation::ReducedCost {
                            arc: usize::MAX,
                            reduced_cost: rc,
                            flow: 0,
                        });
                    }
                }
                *seen = false;
            }
            start = end;
        }
        Ok(())
    }
}

/// Result of one flow solve over per-supply tranche chains.
struct FlowRun {
    /// Units leaving each supply point.
    through: Vec<i64>,
    assignment: Vec<Assignment>,
    /// Dual bound on the real-valued problem, excluding fixed costs.
    dual_bound: f64,
    certificate: FlowCertificate,
}

/// Min-cost flow from active cells through supply points to a sink, with
/// `chains[j]` as the arcs from supply `j` into the sink. Assignment arcs start
/// from `pool` and grow by pricing until no omitted arc has negative reduced
/// cost. Returns `None` if demand cannot be routed.
fn run_flow(
    model: &PlacementModel,
    chains: &[Vec<(i64, i64, f64, f64)>],
    pool: &[Vec<u32>],
) -> Result<(Option<FlowRun>, Vec<Vec<u32>>)> {
    let k_cells = model.active.len();
    let m = model.supply_count();
    let sink = k_cells + m;
    let mut pool: Vec<Vec<u32>> = pool.to_vec();
    let max_cell_cost = model
        .active
        .iter()
        .flat_map(|&i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| model.arc_cost(i, j))
        .max()
        .unwrap_or(0);
    let max_chain_cost = chains.iter().flatten().map(|c| c.1).max().unwrap_or(0);
    let big_m = (max_cell_cost.max(max_chain_cost) + 1).saturating_mul((sink + 1) as i64);

    loop {
        let mut net = FlowNetwork::new(sink + 1);
        let mut arc_pairs = Vec::new();
        for (k, &i) in model.active.iter().enumerate() {
            let d = model.units[i];
            net.set_supply(k, d);
            for &j in &pool[k] {
                net.add_arc(k, k_cells + j as usize, d, model.arc_cost(i, j as usize));
                arc_pairs.push((i, j as usize));
            }
        }
        for (j, chain) in chains.iter().enumerate() {
            for &(units, cost, _, _) in chain {
                net.add_arc(k_cells + j, sink, units, cost);
            }
        }
        let first_art = net.arcs().len();
        for (k, &i) in model.active.iter().enumerate() {
            net.add_arc(k, sink, model.units[i], big_m);
        }
        let total: i64 = model.active.iter().map(|&i| model.units[i]).sum();
        net.set_supply(sink, -total);
        let sol = net
            .solve()
            .map_err(|e| Error::InfeasibleRelaxation(e.to_string()))?;
        let pi = &sol.potential;

        let mut added = false;
        let mut mark = vec![false; m];
        for (k, &i) in model.active.iter().enumerate() {
            for &j in &pool[k] {
                mark[j as usize] = true;
            }
            let mut extra = Vec::new();
            for (j, seen) in mark.iter().enumerate() {
                if !*seen && model.arc_cost(i, j) + pi[k] - pi[k_cells + j] < 0 {
                    extra.push(j as u32);
                }
            }
            for &j in &pool[k] {
                mark[j as usize] = false;
            }
            if !extra.is_empty() {
                added = true;
                pool[k].extend(extra);
                pool[k].sort_unstable();
            }
        }
        if added {
            continue;
        }

        if sol.flow[first_art..].iter().any(|&f| f > 0) {
            return Ok((None, pool));
        }
        let mut through = vec![0i64; m];
        let mut assignment = Vec::new();
        for (a, &(i, j)) in arc_pairs.iter().enumerate() {
            let f = sol.flow[a];
            if f > 0 {
                through[j] += f;
                assignment.push(Assignment {
                    cell: i,
                    supply: j,
                    flow: f as f64 / DEMAND_UNITS,
                });
            }
        }
        // Dual bound with real data: -sum pi_v b_v + sum_e u_e min(0, rc_e).
        let p = |v: usize| pi[v] as f64 / COST_UNITS;
        let mut bound = 0.0;
        for (k, &i) in model.active.iter().enumerate() {
            let d = model.demand[i];
            bound -= p(k) * d;
            let row = model.distances.row(i);
            for j in 0..m {
                let rc = model.params.alpha * row[j] + p(k) - p(k_cells + j);
                if rc < 0.0 {
                    bound += d * rc;
                }
            }
        }
        bound += p(sink) * model.total_demand_active();
        for (j, chain) in chains.iter().enumerate() {
            for &(_, _, width, slope) in chain {
                let rc = slope + p(k_cells + j) - p(sink);
                if rc < 0.0 {
                    bound += width * rc;
                }
            }
        }
        return Ok((
            Some(FlowRun {
                through,
                assignment,
                dual_bound: bound,
                certificate: FlowCertificate {
                    network: net,
                    solution: sol,
                    arc_pairs,
                    cell_nodes: (0..k_cells).collect(),
                    supply_base: k_cells,
                },
            }),
            pool,
        ));
    }
}

impl PlacementModel {
    fn total_demand_active(&self) -> f64 {
        self.active.iter().map(|&i| self.demand[i]).sum()
    }
}

/// Continuous relaxation optimum.
#[derive(Debug, Clone)]
pub struct LpRelaxation {
    pub lower_bound: f64,
    pub scs: Vec<f64>,
    pub fcs: Vec<f64>,
    pub assignment: Vec<Assignment>,
    pub certificate: FlowCertificate,
}

pub fn solve_lp_relaxation(model: &PlacementModel) -> Result<LpRelaxation> {
    let node = evaluate(model, &model.root_bounds(), &model.nearest)?
        .0
        .ok_or_else(|| Error::InfeasibleRelaxation("demand cannot be routed".into()))?;
    let (scs, fcs) = node
        .envelopes
        .iter()
        .zip(&node.through)
        .map(|(e, &u)| e.fractional(u))
        .unzip();
    Ok(LpRelaxation {
        lower_bound: node.bound,
        scs,
        fcs,
        assignment: node.assignment,
        certificate: node.certificate,
    })
}

#[derive(Debug, Clone)]
pub struct Transportation {
    pub assignment: Vec<Assignment>,
    pub cost: f64,
    pub certificate: FlowCertificate,
}

/// Optimal assignment for fixed charger counts.
pub fn solve_transportation(model: &PlacementModel, scs: &[u32], fcs: &[u32]) -> Result<Transportation> {
    transportation_with_pool(model, scs, fcs, &model.nearest).map(|t| t.0)
}

fn transportation_with_pool(
    model: &PlacementModel,
    scs: &[u32],
    fcs: &[u32],
    pool: &[Vec<u32>],
) -> Result<(Transportation, Vec<Vec<u32>>)> {
    let m = model.supply_count();
    if scs.len() != m || fcs.len() != m {
        return Err(Error::ShapeMismatch(format!("counts for {} of {m} supply points", scs.len().min(fcs.len()))));
    }
    let chains: Vec<Vec<(i64, i64, f64, f64)>> = (0..m)
        .map(|j| vec![(model.unit_capacity(scs[j], fcs[j]), 0, model.params.capacity(scs[j], fcs[j]), 0.0)])
        .collect();
    let need: i64 = model.units.iter().sum();
    let have: i64 = chains.iter().map(|c| c[0].0).sum();
    if need > have {
        return Err(Error::CountsInfeasible {
            demand: model.total_demand(),
            capacity: (0..m).map(|j| model.params.capacity(scs[j], fcs[j])).sum(),
        });
    }
    let (run, pool) = run_flow(model, &chains, pool)?;
    let run = run.ok_or(Error::CountsInfeasible {
        demand: model.total_demand(),
        capacity: (0..m).map(|j| model.params.capacity(scs[j], fcs[j])).sum(),
    })?;
    let cost = model.transport_cost(&run.assignment);
    Ok((
        Transportation {
            assignment: run.assignment,
            cost,
            certificate: run.certificate,
        },
        pool,
    ))
}

/// Evaluated branch-and-bound node.
#[derive(Clone)]
struct NodeEval {
    bound: f64,
    through: Vec<i64>,
    envelopes: Vec<Envelope>,
    assignment: Vec<Assignment>,
    certificate: FlowCertificate,
    /// Supply point to branch on and its cost excess, if any.
    branch: Option<(usize, f64)>,
}

impl NodeEval {
    /// Cheapest mixes covering the node flow; feasible for the full model.
    fn rounded(&self) -> (Vec<u32>, Vec<u32>) {
        self.envelopes
            .iter()
            .zip(&self.through)
            .map(|(e, &u)| {
                let c = e.cover(u);
                (c.scs, c.fcs)
            })
            .unzip()
    }
}

fn evaluate(
    model: &PlacementModel,
    bounds: &[(i64, i64)],
    pool: &[Vec<u32>],
) -> Result<(Option<NodeEval>, Vec<Vec<u32>>)> {
    let mut envelopes = Vec::with_capacity(bounds.len());
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        match model.envelope(j, lo, hi) {
            Some(e) => envelopes.push(e),
            None => return Ok((None, pool.to_vec())),
        }
    }
    let need: i64 = model.units.iter().sum();
    if envelopes.iter().map(Envelope::max_units).sum::<i64>() < need {
        return Ok((None, pool.to_vec()));
    }
    let chains: Vec<Vec<(i64, i64, f64, f64)>> = envelopes
        .iter()
        .map(|e| {
            e.tranches
                .iter()
                .map(|t| (t.units, (t.slope * COST_UNITS).round() as i64, t.width, t.slope))
                .collect()
        })
        .collect();
    let (run, pool) = run_flow(model, &chains, pool)?;
    let Some(run) = run else {
        return Ok((None, pool));
    };
    let fixed: f64 = envelopes.iter().map(Envelope::fixed_cost).sum();
    let mut branch: Option<(usize, f64)> = None;
    for (j, (e, &u)) in envelopes.iter().zip(&run.through).enumerate() {
        let true_cost = e.cover(u).cost;
        let relaxed = e.hull_cost(u as f64 / DEMAND_UNITS);
        let excess = true_cost - relaxed;
        if excess > 1e-9 * true_cost.max(1.0) && branch.is_none_or(|(_, b)| excess > b) {
            branch = Some((j, excess));
        }
    }
    Ok((
        Some(NodeEval {
            bound: run.dual_bound + fixed,
            through: run.through,
            envelopes,
            assignment: run.assignment,
            certificate: run.certificate,
            branch,
        }),
        pool,
    ))
}

/// Where the node flow at `j` sits between two capacity steps, as
/// `(lower step, upper step, fraction of the way up)`.
fn step_position(env: &Envelope, u: i64) -> Option<(i64, i64, f64)> {
    let k = env.frontier.partition_point(|c| c.units < u);
    if k == 0 || k == env.frontier.len() {
        return None;
    }
    let (a, b) = (env.frontier[k - 1].units, env.frontier[k].units);
    Some((a, b, (u - a) as f64 / (b - a) as f64))
}

/// LP-guided rounding. Points that sit almost on a capacity step are pushed
/// to it, then the least ambiguous remaining point is rounded to its nearer
/// step and the relaxation is solved again, until it is integral.
fn dive(
    model: &PlacementModel,
    bounds: &[(i64, i64)],
    start: &NodeEval,
    pool: &mut Vec<Vec<u32>>,
    deadline: Instant,
) -> Result<Option<NodeEval>> {
    let mut bounds = bounds.to_vec();
    let mut cur = start.clone();
    while cur.branch.is_some() {
        if Instant::now() >= deadline {
            return Ok(None);
        }
        let mut pick: Option<(usize, i64, i64, f64)> = None;
        let mut ups = Vec::new();
        for (j, (e, &u)) in cur.envelopes.iter().zip(&cur.through).enumerate() {
            let Some((a, b, frac)) = step_position(e, u) else {
                continue;
            };
            if e.cover(u).cost - e.hull_cost(u as f64 / DEMAND_UNITS) <= 1e-9 * e.cover(u).cost.max(1.0) {
                continue;
            }
            if frac >= 0.9 {
                ups.push((j, b));
            }
            let sure = frac.max(1.0 - frac);
            if pick.is_none_or(|p| sure > p.3.max(1.0 - p.3)) {
                pick = Some((j, a, b, frac));
            }
        }
        let Some((j, a, b, frac)) = pick else { break };
        let saved = bounds.clone();
        for (k, step) in ups {
            bounds[k].0 = bounds[k].0.max(step);
        }
        let down = frac < 0.5;
        if down {
            bounds[j].1 = bounds[j].1.min(a);
        } else {
            bounds[j].0 = bounds[j].0.max(b);
        }
        let (next, p) = evaluate(model, &bounds, pool)?;
        merge_pool(pool, p);
        match next {
            Some(n) => cur = n,
            None if down => {
                bounds = saved;
                bounds[j].0 = bounds[j].0.max(b);
                let (next, p) = evaluate(model, &bounds, pool)?;
                merge_pool(pool, p);
                match next {
                    Some(n) => cur = n,
                    None => return Ok(None),
                }
            }
            None => return Ok(None),
        }
    }
    Ok(Some(cur))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub gap_tol: f64,
    pub time_limit: Duration,
    /// Evaluate sibling nodes one after another instead of in parallel.
    pub deterministic: bool,
    /// Open nodes kept before switching from best-bound to depth-first.
    pub node_budget: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            time_limit: Duration::from_secs(600),
            deterministic: false,
            node_budget: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementSolution {
    pub n_scs: Vec<u32>,
    pub n_fcs: Vec<u32>,
    /// Nonzero flows sorted by `(cell, supply)`.
    pub assignment: Vec<Assignment>,
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub node_count: u64,
    pub wall_time: Duration,
}

impl PlacementSolution {
    /// Dense per-supply served demand.
    pub fn served(&self, supplies: usize) -> Vec<f64> {
        let mut s = vec![0.0; supplies];
        for a in &self.assignment {
            s[a.supply] += a.flow;
        }
        s
    }
}

pub fn relative_gap(objective: f64, lower_bound: f64) -> f64 {
    ((objective - lower_bound) / lower_bound.max(1e-12)).max(0.0)
}

struct Open {
    bound: f64,
    bounds: Vec<(i64, i64)>,
    /// Branching point and the flow through it at this node.
    branch: (usize, i64),
}

struct Incumbent {
    scs: Vec<u32>,
    fcs: Vec<u32>,
    assignment: Vec<Assignment>,
    objective: f64,
}

pub fn solve_mip(model: &PlacementModel, options: &SolveOptions) -> Result<PlacementSolution> {
    if !(options.gap_tol > 0.0) {
        return Err(Error::InvalidArgument("gap_tol must be positive".into()));
    }
    let start = Instant::now();
    let mut pool = model.nearest.clone();
    let root_bounds = model.root_bounds();
    let (root, p) = evaluate(model, &root_bounds, &pool)?;
    pool = p;
    let root = root.ok_or_else(|| Error::InfeasibleRelaxation("demand cannot be routed".into()))?;
    let mut node_count = 1u64;
    let mut incumbent: Option<Incumbent> = None;
    // Smallest bound among nodes closed without branching.
    let mut closed_floor = f64::INFINITY;

    let offer = |eval: &NodeEval, pool: &mut Vec<Vec<u32>>, inc: &mut Option<Incumbent>| -> Result<()> {
        let (scs, fcs) = eval.rounded();
        let z = model.objective(&scs, &fcs, &eval.assignment);
        if inc.as_ref().is_some_and(|i| i.objective <= z) {
            return Ok(());
        }
        let mut best = Incumbent {
            scs,
            fcs,
            assignment: eval.assignment.clone(),
            objective: z,
        };
        if eval.branch.is_some() {
            let (t, p) = transportation_with_pool(model, &best.scs, &best.fcs, pool)?;
            *pool = p;
            let z2 = t.cost + model.infrastructure_cost(&best.scs, &best.fcs);
            if z2 < best.objective {
                best.assignment = t.assignment;
                best.objective = z2;
            }
        }
        *inc = Some(best);
        Ok(())
    };

    offer(&root, &mut pool, &mut incumbent)?;
    if root.branch.is_some() {
        if let Some(d) = dive(model, &root_bounds, &root, &mut pool, start + options.time_limit)? {
            offer(&d, &mut pool, &mut incumbent)?;
        }
    }
    let mut open: BTreeSet<(OrdF64, u64)> = BTreeSet::new();
    let mut store: std::collections::HashMap<u64, Open> = std::collections::HashMap::new();
    let mut next_id = 1u64;
    if root.branch.is_some() {
        open.insert((OrdF64(root.bound), 0));
        let (j, _) = root.branch.expect("checked above");
        store.insert(
            0,
            Open {
                bound: root.bound,
                bounds: root_bounds,
                branch: (j, root.through[j]),
            },
        );
    } else {
        closed_floor = root.bound;
    }

    loop {
        let z = incumbent.as_ref().map_or(f64::INFINITY, |i| i.objective);
        let best_open = open.first().map_or(f64::INFINITY, |k| k.0 .0);
        let lb = best_open.min(closed_floor).min(z);
        if open.is_empty() || relative_gap(z, lb) <= options.gap_tol || start.elapsed() >= options.time_limit {
            break;
        }
        let key = if open.len() > options.node_budget {
            let id = store.keys().copied().max().expect("open nodes");
            (OrdF64(store[&id].bound), id)
        } else {
            *open.first().expect("open nodes")
        };
        open.remove(&key);
        let node = store.remove(&key.1).expect("stored node");
        if node.bound >= z {
            closed_floor = closed_floor.min(node.bound);
            continue;
        }
        let (j, u) = node.branch;
        let (lo, hi) = node.bounds[j];
        let mut down = node.bounds.clone();
        down[j] = (lo, hi.min(u - 1));
        let mut up = node.bounds;
        up[j] = (lo.max(u), hi);
        let children = [down, up];
        let evals: Vec<Result<(Option<NodeEval>, Vec<Vec<u32>>)>> = if options.deterministic {
            children.iter().map(|b| evaluate(model, b, &pool)).collect()
        } else {
            let (a, b) = rayon::join(|| evaluate(model, &children[0], &pool), || evaluate(model, &children[1], &pool));
            vec![a, b]
        };
        for (bounds, res) in children.into_iter().zip(evals) {
            let (eval, p) = res?;
            node_count += 1;
            merge_pool(&mut pool, p);
            let Some(eval) = eval else { continue };
            offer(&eval, &mut pool, &mut incumbent)?;
            let z = incumbent.as_ref().map_or(f64::INFINITY, |i| i.objective);
            if eval.branch.is_none() || eval.bound >= z {
                closed_floor = closed_floor.min(eval.bound);
                continue;
            }
            let id = next_id;
            next_id += 1;
            let (j, _) = eval.branch.expect("checked above");
            open.insert((OrdF64(eval.bound), id));
            store.insert(
                id,
                Open {
                    bound: eval.bound,
                    bounds,
                    branch: (j, eval.through[j]),
                },
            );
        }
    }

    let inc = incumbent.ok_or(Error::NoIncumbent)?;
    let best_open = open.first().map_or(f64::INFINITY, |k| k.0 .0);
    let lower_bound = best_open.min(closed_floor).min(inc.objective);
    let mut assignment = inc.assignment;
    assignment.sort_by(|a, b| (a.cell, a.supply).cmp(&(b.cell, b.supply)));
    Ok(PlacementSolution {
        gap: relative_gap(inc.objective, lower_bound),
        n_scs: inc.scs,
        n_fcs: inc.fcs,
        assignment,
        objective: inc.objective,
        lower_bound,
        node_count,
        wall_time: start.elapsed(),
    })
}

fn merge_pool(pool: &mut [Vec<u32>], other: Vec<Vec<u32>>) {
    for (mine, theirs) in pool.iter_mut().zip(other) {
        if theirs.len() != mine.len() {
            mine.extend(theirs);
            mine.sort_unstable();
            mine.dedup();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Solves target years in order, each starting from the previous year's counts.
pub fn solve_multi_year(
    distances: &DistanceMatrix,
    years: &[i32],
    forecasts: &[Vec<f64>],
    infra: &InfrastructureState,
    params: CostParams,
    options: &SolveOptions,
) -> Result<Vec<PlacementSolution>> {
    if years.is_empty() || years.len() != forecasts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} target years for {} demand maps",
            years.len(),
            forecasts.len()
        )));
    }
    let mut state = infra.clone();
    let mut out = Vec::with_capacity(years.len());
    for (&year, demand) in years.iter().zip(forecasts) {
        let label = |e| Error::Year {
            year,
            source: Box::new(e),
        };
        let model = PlacementModel::new(distances.clone(), demand.clone(), state.clone(), params).map_err(label)?;
        let sol = solve_mip(&model, options).map_err(label)?;
        state = state.with_counts(&sol.n_scs, &sol.n_fcs, Some(year)).map_err(label)?;
        out.push(sol);
    }
    Ok(out)
}

pub fn solution_csv(years: &[i32], solutions: &[PlacementSolution]) -> String {
    let mut s = String::from(SOLUTION_HEADER);
    s.push('\n');
    for (&y, sol) in years.iter().zip(solutions) {
        for (j, (a, b)) in sol.n_scs.iter().zip(&sol.n_fcs).enumerate() {
            let _ = writeln!(s, "{y},{j},{a},{b}");
        }
    }
    s
}

pub fn assignment_csv(years: &[i32], solutions: &[PlacementSolution]) -> String {
    let mut s = String::from(ASSIGNMENT_HEADER);
    s.push('\n');
    for (&y, sol) in years.iter().zip(solutions) {
        for a in &sol.assignment {
            let _ = writeln!(s, "{y},{},{},{}", a.cell, a.supply, fmt_real(a.flow));
        }
    }
    s
}

/// Per-year charger counts read from a solution file.
#[derive(Debug, Clone, PartialEq)]
pub struct YearCounts {
    pub year: i32,
    /// Signed so that a corrupted file still parses and can be validated.
    pub n_scs: Vec<i64>,
    pub n_fcs: Vec<i64>,
}

pub fn parse_solution_csv(text: &str, supplies: usize) -> Result<Vec<YearCounts>> {
    let mut out: Vec<YearCounts> = Vec::new();
    for (line, row) in data_lines(text) {
        if row.starts_with("year,") {
            if row != SOLUTION_HEADER {
                return Err(Error::parse(line, format!("expected header `{SOLUTION_HEADER}`")));
            }
            continue;
        }
        let f: Vec<&str> = row.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(line, format!("expected 4 fields, found {}", f.len())));
        }
        let year = parse_i32(f[0], line, "year")?;
        let j = parse_usize(f[1], line, "supply_point_index")?;
        let scs = parse_i32(f[2], line, "n_scs")? as i64;
        let fcs = parse_i32(f[3], line, "n_fcs")? as i64;
        if j >= supplies {
            return Err(Error::parse(line, format!("supply point {j} out of range (have {supplies})")));
        }
        if out.last().is_none_or(|y| y.year != year) {
            if out.iter().any(|y| y.year == year) {
                return Err(Error::parse(line, format!("rows for year {year} are not contiguous")));
            }
            out.push(YearCounts {
                year,
                n_scs: vec![0; supplies],
                n_fcs: vec![0; supplies],
            });
        }
        let cur = out.last_mut().expect("pushed above");
        cur.n_scs[j] = scs;
        cur.n_fcs[j] = fcs;
    }
    Ok(out)
}

/// Assignments per year, in file order of first appearance.
pub fn parse_assignment_csv(text: &str) -> Result<Vec<(i32, Vec<Assignment>)>> {
    let mut out: Vec<(i32, Vec<Assignment>)> = Vec::new();
    for (line, row) in data_lines(text) {
        if row.starts_with("year,") {
            if row != ASSIGNMENT_HEADER {
                return Err(Error::parse(line, format!("expected header `{ASSIGNMENT_HEADER}`")));
            }
            continue;
        }
        let f: Vec<&str> = row.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(line, format!("expected 4 fields, found {}", f.len())));
        }
        let year = parse_i32(f[0], line, "year")?;
        let a = Assignment {
            cell: parse_usize(f[1], line, "demand_point_index")?,
            supply: parse_usize(f[2], line, "supply_point_index")?,
            flow: parse_f64(f[3], line, "flow")?,
        };
        match out.iter_mut().find(|(y, _)| *y == year) {
            Some((_, v)) => v.push(a),
            None => out.push((year, vec![a])),
        }
    }
    Ok(out)
}

pub fn summary_line(year: i32, sol: &PlacementSolution) -> String {
    format!(
        "year {year}: Z={:.6} lower_bound={:.6} gap={:.3e} nodes={} wall_time={:.3}s",
        sol.objective,
        sol.lower_bound,
        sol.gap,
        sol.node_count,
        sol.wall_time.as_secs_f64()
    )
}
