//! Independent oracles shared by integration tests. Nothing here calls the
//! solver under test.

#![allow(dead_code)]

use evplace::flow::{FlowNetwork, FlowSolution};
use evplace::grid::{DistanceMatrix, InfrastructureState, SupplyPoint};
use evplace::optimizer::{CostParams, PlacementModel};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TestRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> TestRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// `(x, y, slots, existing_scs, existing_fcs)` per supply point.
pub fn infra(points: &[(f64, f64, u32, u32, u32)]) -> InfrastructureState {
    let sps = points
        .iter()
        .enumerate()
        .map(|(index, &(x, y, parking_slots, existing_scs, existing_fcs))| SupplyPoint {
            index,
            x,
            y,
            parking_slots,
            existing_scs,
            existing_fcs,
        })
        .collect();
    InfrastructureState::new(sps, None).unwrap()
}

/// A random feasible instance with cells and supply points scattered on a
/// 6 x 6 square. Demands are multiples of 1/8 so they are exact in any unit.
pub fn random_model(rng: &mut TestRng, max_supply: usize, max_cells: usize, max_slots: u32, params: CostParams) -> PlacementModel {
    loop {
        let m = rng.gen_range(1..=max_supply);
        let n = rng.gen_range(1..=max_cells);
        let pts: Vec<(f64, f64, u32, u32, u32)> = (0..m)
            .map(|_| {
                let p = rng.gen_range(1..=max_slots);
                let s0 = rng.gen_range(0..=p.min(1));
                let f0 = if rng.gen_bool(0.2) { rng.gen_range(0..=p - s0) } else { 0 };
                (rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0), p, s0, f0)
            })
            .collect();
        let cells: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0))).collect();
        let rows = cells
            .iter()
            .map(|&(cx, cy)| pts.iter().map(|&(x, y, ..)| ((cx - x).powi(2) + (cy - y).powi(2)).sqrt()).collect())
            .collect();
        let scale = 150.0 * max_slots as f64 * m as f64 / n as f64;
        let demand = (0..n)
            .map(|_| if rng.gen_bool(0.1) { 0.0 } else { (rng.gen_range(0.0..scale) * 8.0).round() / 8.0 })
            .collect();
        let d = DistanceMatrix::from_rows(rows).unwrap();
        if let Ok(model) = PlacementModel::new(d, demand, infra(&pts), params) {
            return model;
        }
    }
}

/// Minimum transport cost `sum alpha * d_ij * x_ij` with cell demands met and
/// supply capacities respected, by successive shortest paths with
/// Bellman-Ford on real-valued data. `None` if capacity is short.
pub fn ssp_transport(d: &DistanceMatrix, alpha: f64, demand: &[f64], caps: &[f64]) -> Option<f64> {
    let (n, m) = (d.cells(), d.supplies());
    let eps = 1e-9;
    if demand.iter().sum::<f64>() > caps.iter().sum::<f64>() + eps {
        return None;
    }
    let mut x = vec![vec![0.0f64; m]; n];
    let mut need = demand.to_vec();
    let mut room = caps.to_vec();
    // Nodes: cells 0..n, supplies n..n+m.
    loop {
        if need.iter().all(|&r| r <= eps) {
            break;
        }
        let mut dist = vec![f64::INFINITY; n + m];
        let mut pred = vec![usize::MAX; n + m];
        for i in 0..n {
            if need[i] > eps {
                dist[i] = 0.0;
            }
        }
        for _ in 0..n + m {
            let mut changed = false;
            for i in 0..n {
                for j in 0..m {
                    let c = alpha * d.get(i, j);
                    if dist[i] + c < dist[n + j] - 1e-12 {
                        dist[n + j] = dist[i] + c;
                        pred[n + j] = i;
                        changed = true;
                    }
                    if x[i][j] > eps && dist[n + j] - c < dist[i] - 1e-12 {
                        dist[i] = dist[n + j] - c;
                        pred[i] = n + j;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let end = (0..m).filter(|&j| room[j] > eps && dist[n + j].is_finite()).min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]))?;
        // Walk back to the starting cell, collecting the bottleneck.
        let mut path = vec![n + end];
        let mut v = n + end;
        while pred[v] != usize::MAX {
            v = pred[v];
            path.push(v);
        }
        path.reverse();
        let start = path[0];
        let mut delta = need[start].min(room[end]);
        for w in path.windows(2) {
            if w[0] >= n {
                delta = delta.min(x[w[1]][w[0] - n]);
            }
        }
        for w in path.windows(2) {
            if w[0] < n {
                x[w[0]][w[1] - n] += delta;
            } else {
                x[w[1]][w[0] - n] -= delta;
            }
        }
        need[start] -= delta;
        room[end] -= delta;
    }
    let mut cost = 0.0;
    for (i, row) in x.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            cost += alpha * d.get(i, j) * v;
        }
    }
    Some(cost)
}

/// Every charger mix per supply point, each priced by [`ssp_transport`].
pub fn brute_force(model: &PlacementModel) -> f64 {
    let p = model.params();
    let pts = model.infrastructure().supply_points();
    let mixes: Vec<Vec<(u32, u32)>> = pts
        .iter()
        .map(|sp| {
            let mut v = Vec::new();
            for s in sp.existing_scs..=sp.parking_slots {
                for f in sp.existing_fcs..=sp.parking_slots - s {
                    v.push((s, f));
                }
            }
            v
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; pts.len()];
    loop {
        let chosen: Vec<(u32, u32)> = idx.iter().zip(&mixes).map(|(&k, v)| v[k]).collect();
        let caps: Vec<f64> = chosen.iter().map(|&(s, f)| s as f64 * p.cap_scs + f as f64 * p.cap_fcs).collect();
        if let Some(t) = ssp_transport(model.distances(), p.alpha, model.demand(), &caps) {
            let build: f64 = chosen.iter().map(|&(s, f)| p.gamma * s as f64 + p.gamma * p.r * f as f64).sum();
            best = best.min(t + build);
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return best;
            }
            idx[k] += 1;
            if idx[k] < mixes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Feasibility plus complementary slackness, recomputed from scratch.
pub fn certificate_holds(net: &FlowNetwork, sol: &FlowSolution) -> bool {
    if sol.flow.len() != net.arcs().len() || sol.potential.len() != net.node_count() {
        return false;
    }
    let mut excess: Vec<i128> = net.supply().iter().map(|&s| s as i128).collect();
    let mut cost: i128 = 0;
    for (a, &f) in net.arcs().iter().zip(&sol.flow) {
        if f < 0 || f > a.capacity {
            return false;
        }
        excess[a.source] -= f as i128;
        excess[a.target] += f as i128;
        cost += a.cost as i128 * f as i128;
        let rc = a.cost as i128 + sol.potential[a.source] as i128 - sol.potential[a.target] as i128;
        if (rc < 0 && f != a.capacity) || (rc > 0 && f != 0) {
            return false;
        }
    }
    excess.iter().all(|&e| e == 0) && cost == sol.cost
}

/// Least-squares cubic by the normal equations and Gaussian elimination with
/// partial pivoting. Coefficients are in ascending powers of `t`.
pub fn normal_equations_cubic(ts: &[f64], vs: &[f64]) -> [f64; 4] {
    let mut a = [[0.0f64; 5]; 4];
    for (&t, &v) in ts.iter().zip(vs) {
        let pw = [1.0, t, t * t, t * t * t];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][4] += pw[r] * v;
        }
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..5 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let mut s = a[r][4];
        for c in r + 1..4 {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    x
}
