//! Exact balanced optimal transport between point masses in the plane.
//!
//! The transportation problem is solved with a primal network simplex on the
//! complete bipartite graph, started from a big-M basis in which every node
//! hangs off an artificial root. Entering arcs come from block search over
//! the reduced costs; the leaving arc follows the strongly feasible tree
//! rule, which rules out cycling on degenerate pivots.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Nonnegative weights on distinct points, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct MassDistribution {
    points: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

impl MassDistribution {
    pub fn new(points: Vec<(f64, f64)>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "mass distribution needs matching nonempty support and weights, got {} and {}",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mass weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mass weights sum to {total}, not 1")));
        }
        let mut sorted = points.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("mass support has repeated points".into()));
        }
        Ok(MassDistribution { points, weights })
    }

    /// Normalises nonnegative `values` at `points`, dropping entries whose
    /// normalised weight is below `prune`. `None` if the total is zero.
    pub fn from_values(points: &[(f64, f64)], values: &[f64], prune: f64) -> Option<Result<Self>> {
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let (mut pts, mut ws) = (Vec::new(), Vec::new());
        for (p, v) in points.iter().zip(values) {
            let w = v / total;
            if w >= prune {
                pts.push(*p);
                ws.push(w);
            }
        }
        let kept: f64 = ws.iter().sum();
        for w in &mut ws {
            *w /= kept;
        }
        Some(MassDistribution::new(pts, ws))
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Minimum cost of moving `supply` onto `demand` under Euclidean ground
/// distance. Because the ground cost is a metric, mass the two distributions
/// share at a point never needs to move, so only the residuals are
/// transported.
pub fn optimal_transport_cost(supply: &MassDistribution, demand: &MassDistribution) -> Result<f64> {
    let key = |p: (f64, f64)| (p.0.to_bits(), p.1.to_bits());
    let at: HashMap<(u64, u64), usize> = demand.points.iter().enumerate().map(|(j, &p)| (key(p), j)).collect();
    let mut rest_demand = demand.weights.clone();
    let mut rest_supply = supply.weights.clone();
    for (i, &p) in supply.points.iter().enumerate() {
        if let Some(&j) = at.get(&key(p)) {
            let common = rest_supply[i].min(rest_demand[j]);
            rest_supply[i] -= common;
            rest_demand[j] -= common;
        }
    }
    let keep = |w: &[f64]| -> Vec<usize> { (0..w.len()).filter(|&k| w[k] > 0.0).collect() };
    let (rows, cols) = (keep(&rest_supply), keep(&rest_demand));
    if rows.is_empty() || cols.is_empty() {
        return Ok(0.0);
    }
    let cost: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| euclid(supply.points[i], demand.points[j])))
        .collect();
    let s: Vec<f64> = rows.iter().map(|&i| rest_supply[i]).collect();
    let d: Vec<f64> = cols.iter().map(|&j| rest_demand[j]).collect();
    Ok(TransportSimplex::new(&s, &d, cost).solve()?.cost)
}

/// Optimal plan as `(supply index, demand index, mass)` triples plus its cost.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub cost: f64,
    pub flows: Vec<(usize, usize, f64)>,
}

/// Solves a balanced transportation problem with a dense `m x n` cost matrix.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: Vec<f64>) -> Result<TransportPlan> {
    if supply.is_empty() || demand.is_empty() || cost.len() != supply.len() * demand.len() {
        return Err(Error::InvalidArgument("transport problem needs nonempty sides and an m x n cost matrix".into()));
    }
    TransportSimplex::new(supply, demand, cost).solve()
}

const NONE: usize = usize::MAX;

/// `min_j (costs[j] - pi[j])`, written lane-wise so it vectorises.
fn row_min(costs: &[f64], pi: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [f64::INFINITY; LANES];
    let (cc, cr) = (costs.chunks_exact(LANES), costs.chunks_exact(LANES).remainder());
    let (pc, pr) = (pi.chunks_exact(LANES), pi.chunks_exact(LANES).remainder());
    for (c, p) in cc.zip(pc) {
        for k in 0..LANES {
            let v = c[k] - p[k];
            acc[k] = if v < acc[k] { v } else { acc[k] };
        }
    }
    let mut out = acc.iter().fold(f64::INFINITY, |a, &b| if b < a { b } else { a });
    for (c, p) in cr.iter().zip(pr) {
        let v = c - p;
        if v < out {
            out = v;
        }
    }
    out
}

fn ends_of(m: usize, n: usize, arc: usize) -> (usize, usize) {
    let root = m + n;
    if arc < m * n {
        (arc / n, m + arc % n)
    } else if arc < m * n + m {
        (arc - m * n, root)
    } else {
        (root, m + (arc - m * n - m))
    }
}

struct TransportSimplex {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    art_cost: f64,
    /// Flow on every arc; real arcs first (`i * n + j`), then `i -> root`
    /// for each supply node, then `root -> j` for each demand node.
    flow: Vec<f64>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    depth: Vec<usize>,
    /// Tree arcs incident to each node.
    adj: Vec<Vec<usize>>,
    next_arc: usize,
    block: usize,
    tol: f64,
}

impl TransportSimplex {
    fn new(supply: &[f64], demand: &[f64], cost: Vec<f64>) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let root = m + n;
        let max_cost = cost.iter().fold(0.0f64, |a, &c| a.max(c));
        // any route through the root costs more than a direct arc
        let art_cost = max_cost + 1.0;
        let arcs = m * n + m + n;
        let mut s = TransportSimplex {
            m,
            n,
            cost,
            art_cost,
            flow: vec![0.0; arcs],
            pi: vec![0.0; m + n + 1],
            parent: vec![NONE; m + n + 1],
            pred: vec![NONE; m + n + 1],
            depth: vec![0; m + n + 1],
            adj: vec![Vec::new(); m + n + 1],
            next_arc: 0,
            block: ((arcs as f64).sqrt() as usize).max(10),
            tol: 1e-12 * art_cost,
        };
        for i in 0..m {
            let a = m * n + i;
            s.flow[a] = supply[i];
            s.link(i, root, a);
            s.pi[i] = -art_cost;
        }
        for j in 0..n {
            let a = m * n + m + j;
            s.flow[a] = demand[j];
            s.link(m + j, root, a);
            s.pi[m + j] = art_cost;
        }
        s
    }

    fn link(&mut self, child: usize, parent: usize, arc: usize) {
        self.parent[child] = parent;
        self.pred[child] = arc;
        self.depth[child] = self.depth[parent] + 1;
        self.adj[child].push(arc);
        self.adj[parent].push(arc);
    }

    fn ends(&self, arc: usize) -> (usize, usize) {
        ends_of(self.m, self.n, arc)
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.m * self.n {
            self.cost[arc]
        } else {
            self.art_cost
        }
    }

    fn reduced(&self, arc: usize) -> f64 {
        let (a, b) = self.ends(arc);
        self.arc_cost(arc) + self.pi[a] - self.pi[b]
    }

    /// Block search: scan cost rows cyclically (one row per supply node,
    /// then the root's arcs) and, once a block's worth of arcs has been
    /// seen, return the most negative reduced cost found so far.
    fn entering(&mut self) -> Option<usize> {
        let (m, n) = (self.m, self.n);
        let root = m + n;
        let mut best = NONE;
        let mut best_rc = -self.tol;
        let mut seen = 0;
        let mut row = self.next_arc;
        for _ in 0..=m {
            let (pi_demand, pi_rest) = (&self.pi[m..root], self.pi[root]);
            if row < m {
                let base = self.pi[row];
                let costs = &self.cost[row * n..(row + 1) * n];
                // threshold in cost units so the hot loop is a plain min
                let bound = best_rc - base;
                if row_min(costs, pi_demand) < bound {
                    for (j, (&c, &p)) in costs.iter().zip(pi_demand).enumerate() {
                        let rc = c + base - p;
                        if rc < best_rc {
                            best_rc = rc;
                            best = row * n + j;
                        }
                    }
                }
                let rc = self.art_cost + base - pi_rest;
                if rc < best_rc {
                    best_rc = rc;
                    best = m * n + row;
                }
            } else {
                for (j, &p) in pi_demand.iter().enumerate() {
                    let rc = self.art_cost + pi_rest - p;
                    if rc < best_rc {
                        best_rc = rc;
                        best = m * n + m + j;
                    }
                }
            }
            seen += n + 1;
            row = if row == m { 0 } else { row + 1 };
            if seen >= self.block && best != NONE {
                break;
            }
        }
        self.next_arc = row;
        (best != NONE).then_some(best)
    }

    /// Whether the tree arc above `u` points from `u` to its parent.
    fn points_up(&self, u: usize) -> bool {
        self.ends(self.pred[u]).0 == u
    }

    fn pivot(&mut self, enter: usize) {
        let (first, second) = self.ends(enter);
        let (mut a, mut b) = (first, second);
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        let join = a;

        // strongly feasible rule: last blocking arc along the cycle oriented
        // join -> first -> second -> join
        let mut delta = f64::INFINITY;
        let mut out = NONE;
        let mut u = first;
        while u != join {
            if self.points_up(u) {
                let f = self.flow[self.pred[u]];
                if f < delta {
                    delta = f;
                    out = u;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if !self.points_up(u) {
                let f = self.flow[self.pred[u]];
                if f <= delta {
                    delta = f;
                    out = u;
                }
            }
            u = self.parent[u];
        }
        debug_assert!(out != NONE, "transport cycles are always blocked");

        if delta > 0.0 {
            self.flow[enter] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                if self.points_up(u) {
                    self.flow[e] -= delta;
                } else {
                    self.flow[e] += delta;
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = self.pred[u];
                if self.points_up(u) {
                    self.flow[e] += delta;
                } else {
                    self.flow[e] -= delta;
                }
                u = self.parent[u];
            }
        }

        // detach the subtree below the leaving arc and hang it from the
        // entering arc
        let leave = self.pred[out];
        let above = self.parent[out];
        self.adj[out].retain(|&e| e != leave);
        self.adj[above].retain(|&e| e != leave);
        self.flow[leave] = 0.0;
        let in_first = {
            let mut u = first;
            loop {
                if u == out {
                    break true;
                }
                if u == join {
                    break false;
                }
                u = self.parent[u];
            }
        };
        let rc = self.reduced(enter);
        let (new_root, new_parent, shift) = if in_first { (first, second, -rc) } else { (second, first, rc) };
        self.adj[new_root].push(enter);
        self.adj[new_parent].push(enter);

        let mut stack = vec![(new_root, new_parent, enter)];
        while let Some((v, p, e)) = stack.pop() {
            self.parent[v] = p;
            self.pred[v] = e;
            self.depth[v] = self.depth[p] + 1;
            self.pi[v] += shift;
            for &f in &self.adj[v] {
                if f == e {
                    continue;
                }
                let (x, y) = self.ends(f);
                let w = if x == v { y } else { x };
                stack.push((w, v, f));
            }
        }
    }

    fn solve(mut self) -> Result<TransportPlan> {
        let limit = 50 * self.flow.len() + 10_000;
        let mut iterations = 0;
        while let Some(enter) = self.entering() {
            self.pivot(enter);
            iterations += 1;
            if iterations > limit {
                return Err(Error::SolverStalled { iterations });
            }
        }
        let mn = self.m * self.n;
        let leftover: f64 = self.flow[mn..].iter().sum();
        if leftover > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "transport problem is unbalanced: {leftover} mass left on artificial arcs"
            )));
        }
        let mut flows = Vec::new();
        let mut cost = 0.0;
        for arc in 0..mn {
            let f = self.flow[arc];
            if f > 0.0 {
                cost += f * self.cost[arc];
                flows.push((arc / self.n, arc % self.n, f));
            }
        }
        Ok(TransportPlan { cost, flows })
    }
}
