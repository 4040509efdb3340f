//! Exact minimum-cost flow on integer data.
//!
//! A primal network simplex with a strongly feasible spanning-tree basis and
//! block-search pricing. Flows, capacities and costs are all `i64`, so every
//! pivot is exact and the reported potentials certify optimality without any
//! tolerance. The tree bookkeeping (parent / thread / successor counts)
//! follows the classic LEMON layout.

use std::fmt;

/// Index of an arc inside a [`FlowNetwork`].
pub type ArcId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arc {
    pub source: usize,
    pub target: usize,
    pub capacity: i64,
    pub cost: i64,
}

/// A directed network with node supplies (positive = source, negative = sink).
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    supply: Vec<i64>,
    arcs: Vec<Arc>,
}

impl FlowNetwork {
    pub fn new(node_count: usize) -> Self {
        Self {
            supply: vec![0; node_count],
            arcs: Vec::new(),
        }
    }

    pub fn add_node(&mut self) -> usize {
        self.supply.push(0);
        self.supply.len() - 1
    }

    pub fn add_arc(&mut self, source: usize, target: usize, capacity: i64, cost: i64) -> ArcId {
        assert!(source < self.supply.len() && target < self.supply.len());
        assert!(capacity >= 0, "negative arc capacity");
        self.arcs.push(Arc {
            source,
            target,
            capacity,
            cost,
        });
        self.arcs.len() - 1
    }

    pub fn set_supply(&mut self, node: usize, supply: i64) {
        self.supply[node] = supply;
    }

    pub fn add_supply(&mut self, node: usize, supply: i64) {
        self.supply[node] += supply;
    }

    pub fn node_count(&self) -> usize {
        self.supply.len()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, id: ArcId) -> &Arc {
        &self.arcs[id]
    }

    pub fn supply(&self) -> &[i64] {
        &self.supply
    }

    /// Total flow that must leave the positive-supply nodes.
    pub fn total_supply(&self) -> i64 {
        self.supply.iter().filter(|s| **s > 0).sum()
    }

    pub fn solve(&self) -> Result<FlowSolution, FlowError> {
        NetworkSimplex::new(self)?.run()
    }
}

/// Optimal flow together with the node potentials that prove it optimal.
///
/// Reduced cost convention: `r(e) = cost(e) + potential(source) - potential(target)`.
/// The flow is optimal iff `r(e) >= 0` whenever `flow(e) < capacity(e)` and
/// `r(e) <= 0` whenever `flow(e) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub flow: Vec<i64>,
    pub potential: Vec<i64>,
    pub cost: i128,
    pub pivots: u64,
}

impl FlowSolution {
    pub fn reduced_cost(&self, net: &FlowNetwork, arc: ArcId) -> i64 {
        let a = net.arc(arc);
        a.cost + self.potential[a.source] - self.potential[a.target]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlowError {
    /// Node supplies do not sum to zero.
    Unbalanced(i64),
    Infeasible,
    Unbounded,
}

impl fmt::Display for FlowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowError::Unbalanced(s) => write!(f, "node supplies sum to {s}, expected 0"),
            FlowError::Infeasible => write!(f, "no feasible flow"),
            FlowError::Unbounded => write!(f, "unbounded negative-cost cycle"),
        }
    }
}

impl std::error::Error for FlowError {}

/// A single failed optimality or feasibility condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CertificateViolation {
    Capacity { arc: ArcId, flow: i64 },
    Conservation { node: usize, imbalance: i64 },
    ReducedCost { arc: ArcId, reduced_cost: i64, flow: i64 },
    Shape,
}

/// Checks feasibility and complementary slackness of `sol` in O(arcs + nodes).
pub fn verify_certificate(net: &FlowNetwork, sol: &FlowSolution) -> Result<(), CertificateViolation> {
    if sol.flow.len() != net.arcs.len() || sol.potential.len() != net.node_count() {
        return Err(CertificateViolation::Shape);
    }
    let mut balance = net.supply.clone();
    for (id, (a, &x)) in net.arcs.iter().zip(&sol.flow).enumerate() {
        if x < 0 || x > a.capacity {
            return Err(CertificateViolation::Capacity { arc: id, flow: x });
        }
        balance[a.source] -= x;
        balance[a.target] += x;
        let rc = a.cost + sol.potential[a.source] - sol.potential[a.target];
        if (x < a.capacity && rc < 0) || (x > 0 && rc > 0) {
            return Err(CertificateViolation::ReducedCost {
                arc: id,
                reduced_cost: rc,
                flow: x,
            });
        }
    }
    if let Some((node, &imbalance)) = balance.iter().enumerate().find(|(_, b)| **b != 0) {
        return Err(CertificateViolation::Conservation { node, imbalance });
    }
    Ok(())
}

const STATE_UPPER: i8 = -1;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

struct NetworkSimplex {
    node_num: usize,
    arc_num: usize,

    source: Vec<usize>,
    target: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
    flow: Vec<i64>,
    state: Vec<i8>,

    pi: Vec<i64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,

    block_size: usize,
    next_arc: usize,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: i64,
}

const NONE: usize = usize::MAX;
const INF: i64 = i64::MAX;

impl NetworkSimplex {
    fn new(net: &FlowNetwork) -> Result<Self, FlowError> {
        let sum: i64 = net.supply.iter().sum();
        if sum != 0 {
            return Err(FlowError::Unbalanced(sum));
        }
        let node_num = net.node_count();
        let arc_num = net.arcs.len();
        let all = arc_num + node_num;
        let root = node_num;

        let mut ns = NetworkSimplex {
            node_num,
            arc_num,
            source: Vec::with_capacity(all),
            target: Vec::with_capacity(all),
            cap: Vec::with_capacity(all),
            cost: Vec::with_capacity(all),
            flow: vec![0; all],
            state: vec![STATE_LOWER; all],
            pi: vec![0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            block_size: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            next_arc: 0,
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0,
        };
        let mut max_cost: i64 = 0;
        for a in &net.arcs {
            ns.source.push(a.source);
            ns.target.push(a.target);
            ns.cap.push(a.capacity);
            ns.cost.push(a.cost);
            max_cost = max_cost.max(a.cost.abs());
        }
        let art_cost = max_cost
            .checked_add(1)
            .and_then(|c| c.checked_mul(node_num as i64 + 1))
            .expect("arc costs too large for artificial big-M");

        ns.parent[root] = NONE;
        ns.pred[root] = NONE;
        ns.thread[root] = 0;
        ns.rev_thread[0] = root;
        ns.succ_num[root] = node_num + 1;
        ns.last_succ[root] = if node_num == 0 { root } else { root - 1 };
        ns.pi[root] = 0;
        if node_num == 0 {
            ns.thread[root] = root;
            ns.rev_thread[root] = root;
        }

        for u in 0..node_num {
            let e = arc_num + u;
            ns.parent[u] = root;
            ns.pred[u] = e;
            ns.thread[u] = u + 1;
            ns.rev_thread[u + 1] = u;
            ns.succ_num[u] = 1;
            ns.last_succ[u] = u;
            ns.cap.push(INF);
            ns.state[e] = STATE_TREE;
            let s = net.supply[u];
            if s >= 0 {
                ns.pred_dir[u] = DIR_UP;
                ns.pi[u] = 0;
                ns.source.push(u);
                ns.target.push(root);
                ns.flow[e] = s;
                ns.cost.push(0);
            } else {
                ns.pred_dir[u] = DIR_DOWN;
                ns.pi[u] = art_cost;
                ns.source.push(root);
                ns.target.push(u);
                ns.flow[e] = -s;
                ns.cost.push(art_cost);
            }
        }
        Ok(ns)
    }

    fn reduced(&self, e: usize) -> i64 {
        self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]]
    }

    /// Block search: scan arcs cyclically, return the most negative candidate
    /// of the first block that contains one.
    fn find_entering_arc(&mut self) -> bool {
        if self.arc_num == 0 {
            return false;
        }
        let mut min: i64 = 0;
        let mut cnt = self.block_size;
        let mut found = NONE;
        let start = self.next_arc;
        let mut e = start;
        loop {
            let c = self.state[e] as i64 * self.reduced(e);
            if c < min {
                min = c;
                found = e;
            }
            e += 1;
            if e == self.arc_num {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if min < 0 {
                    break;
                }
                cnt = self.block_size;
            }
            if e == start {
                break;
            }
        }
        if min >= 0 {
            return false;
        }
        self.in_arc = found;
        self.next_arc = e;
        true
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Returns whether the basis changes (false: the entering arc just flips bound).
    fn find_leaving_arc(&mut self) -> bool {
        let (first, second) = if self.state[self.in_arc] == STATE_LOWER {
            (self.source[self.in_arc], self.target[self.in_arc])
        } else {
            (self.target[self.in_arc], self.source[self.in_arc])
        };
        self.delta = self.cap[self.in_arc];
        let mut result = 0;

        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            let mut d = self.flow[e];
            if self.pred_dir[u] == DIR_DOWN {
                let c = self.cap[e];
                d = if c == INF { INF } else { c - d };
            }
            if d < self.delta {
                self.delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }

        let mut u = second;
        while u != self.join {
            let e = self.pred[u];
            let mut d = self.flow[e];
            if self.pred_dir[u] == DIR_UP {
                let c = self.cap[e];
                d = if c == INF { INF } else { c - d };
            }
            if d <= self.delta {
                self.delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }

        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self, change: bool) {
        if self.delta > 0 {
            let val = self.state[self.in_arc] as i64 * self.delta;
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
        }
        if change {
            self.state[self.in_arc] = STATE_TREE;
            let out = self.pred[self.u_out];
            self.state[out] = if self.flow[out] == 0 {
                STATE_LOWER
            } else {
                STATE_UPPER
            };
        } else {
            self.state[self.in_arc] = -self.state[self.in_arc];
        }
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc: isize = 0;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] as isize - self.succ_num[p] as isize;
                self.succ_num[u] = tmp_sc as usize;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma =
            self.pi[self.v_in] - self.pi[u_in] - self.pred_dir[u_in] as i64 * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(mut self) -> Result<FlowSolution, FlowError> {
        let mut pivots = 0u64;
        while self.find_entering_arc() {
            self.find_join_node();
            let change = self.find_leaving_arc();
            if self.delta == INF {
                return Err(FlowError::Unbounded);
            }
            self.change_flow(change);
            if change {
                self.update_tree_structure();
                self.update_potential();
            }
            pivots += 1;
        }
        for e in self.arc_num..self.arc_num + self.node_num {
            if self.flow[e] != 0 {
                return Err(FlowError::Infeasible);
            }
        }
        let flow: Vec<i64> = self.flow[..self.arc_num].to_vec();
        let cost = flow
            .iter()
            .zip(&self.cost)
            .map(|(&x, &c)| x as i128 * c as i128)
            .sum();
        // Shift so the smallest potential is zero; keeps emitted values compact.
        let mut potential = self.pi[..self.node_num].to_vec();
        if let Some(&m) = potential.iter().min() {
            potential.iter_mut().for_each(|p| *p -= m);
        }
        Ok(FlowSolution {
            flow,
            potential,
            cost,
            pivots,
        })
    }
}
