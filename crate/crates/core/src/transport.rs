//! Exact solver for the balanced transportation problem.
//!
//! Primal network simplex on the bipartite supply/demand graph. The basis is a
//! spanning tree of `m + n - 1` cells, seeded with the north-west corner rule.
//! Entering cells are chosen with block pricing; the tree potentials are
//! recomputed after every pivot, which is cheap next to pricing.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const REDUCED_COST_TOL: f64 = 1e-12;

/// Optimal plan returned by [`solve`].
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub cost: f64,
    /// Non-zero flows as `(supply index, demand index, amount)`.
    pub flows: Vec<(usize, usize, f64)>,
}

/// Minimises `sum c(i, j) * x(i, j)` subject to row sums `supply` and column
/// sums `demand`. Both sides must be non-negative with equal totals (a relative
/// difference up to 1e-9 is absorbed into the last demand).
pub fn solve(
    supply: &[f64],
    demand: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> Result<TransportPlan> {
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if supply
        .iter()
        .chain(demand)
        .any(|v| !v.is_finite() || *v < 0.0)
    {
        return Err(Error::InvalidValue(
            "transport masses must be finite and non-negative".into(),
        ));
    }
    if !(total_s > 0.0) || !(total_d > 0.0) {
        return Err(Error::ZeroMass);
    }
    if (total_s - total_d).abs() > 1e-9 * total_s.max(total_d) {
        return Err(Error::InvalidValue(format!(
            "unbalanced transport problem: {total_s} vs {total_d}"
        )));
    }

    // Zero-mass nodes never carry flow.
    let rows: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0.0).collect();
    let s: Vec<f64> = rows.iter().map(|&i| supply[i]).collect();
    let mut d: Vec<f64> = cols.iter().map(|&j| demand[j]).collect();
    let n_cols = cols.len();
    let last = d.len() - 1;
    d[last] += total_s - total_d;
    if d[last] < 0.0 {
        d[last] = 0.0;
    }

    let costs: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost(i, j))
        .collect();

    let mut solver = Simplex::new(&s, &d, costs);
    solver.run();

    let mut flows = Vec::new();
    let mut total = 0.0;
    for (k, &(r, c)) in solver.basis.iter().enumerate() {
        let x = solver.flow[k];
        if x > 0.0 {
            total += x * solver.cost[r * n_cols + c];
            flows.push((rows[r], cols[c], x));
        }
    }
    flows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(TransportPlan { cost: total, flows })
}

struct Simplex {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    /// Basic cells `(row, col)`; always `m + n - 1` entries.
    basis: Vec<(usize, usize)>,
    flow: Vec<f64>,
    in_basis: Vec<bool>,
    // Tree data, rebuilt after each pivot. Nodes `0..m` are rows, `m..m+n` columns.
    potential: Vec<f64>,
    parent_arc: Vec<usize>,
    parent: Vec<usize>,
    depth: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    cursor: usize,
}

impl Simplex {
    fn new(supply: &[f64], demand: &[f64], cost: Vec<f64>) -> Self {
        let m = supply.len();
        let n = demand.len();
        let mut basis = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        let mut in_basis = vec![false; m * n];

        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            basis.push((i, j));
            flow.push(x);
            in_basis[i * n + j] = true;
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        // Rounding can leave a sliver on the final cell; it is the only free one.
        let k = basis.len() - 1;
        flow[k] = (flow[k] + s[m - 1].max(0.0)).max(0.0);

        let nodes = m + n;
        Self {
            m,
            n,
            cost,
            basis,
            flow,
            in_basis,
            potential: vec![0.0; nodes],
            parent_arc: vec![usize::MAX; nodes],
            parent: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            adjacency: vec![Vec::new(); nodes],
            cursor: 0,
        }
    }

    fn run(&mut self) {
        let cells = self.m * self.n;
        let block = ((cells as f64).sqrt().ceil() as usize).max(16).min(cells);
        loop {
            self.rebuild_tree();
            let Some(entering) = self.price(block) else {
                return;
            };
            self.pivot(entering);
        }
    }

    fn rebuild_tree(&mut self) {
        let m = self.m;
        for list in &mut self.adjacency {
            list.clear();
        }
        for (k, &(r, c)) in self.basis.iter().enumerate() {
            self.adjacency[r].push(k);
            self.adjacency[m + c].push(k);
        }
        self.parent.fill(usize::MAX);
        let mut queue = VecDeque::with_capacity(self.adjacency.len());
        self.potential[0] = 0.0;
        self.depth[0] = 0;
        self.parent[0] = 0;
        self.parent_arc[0] = usize::MAX;
        queue.push_back(0);
        while let Some(node) = queue.pop_front() {
            for &k in &self.adjacency[node] {
                let (r, c) = self.basis[k];
                let other = if node < m { m + c } else { r };
                if self.parent[other] != usize::MAX {
                    continue;
                }
                let cost = self.cost[r * self.n + c];
                // u_r + v_c = cost on basic cells.
                self.potential[other] = cost - self.potential[node];
                self.parent[other] = node;
                self.parent_arc[other] = k;
                self.depth[other] = self.depth[node] + 1;
                queue.push_back(other);
            }
        }
    }

    fn price(&mut self, block: usize) -> Option<(usize, usize)> {
        let cells = self.m * self.n;
        let mut best: Option<(usize, f64)> = None;
        let mut seen = 0;
        let mut in_block = 0;
        while seen < cells {
            let idx = self.cursor;
            self.cursor = if self.cursor + 1 == cells {
                0
            } else {
                self.cursor + 1
            };
            seen += 1;
            in_block += 1;
            if !self.in_basis[idx] {
                let (r, c) = (idx / self.n, idx % self.n);
                let reduced = self.cost[idx] - self.potential[r] - self.potential[self.m + c];
                let scale = 1.0 + self.cost[idx].abs();
                if reduced < -REDUCED_COST_TOL * scale && best.map_or(true, |(_, b)| reduced < b) {
                    best = Some((idx, reduced));
                }
            }
            if in_block == block {
                if best.is_some() {
                    break;
                }
                in_block = 0;
            }
        }
        best.map(|(idx, _)| (idx / self.n, idx % self.n))
    }

    fn pivot(&mut self, (row, col): (usize, usize)) {
        let m = self.m;
        // Tree path from column node up to the LCA, then from the row node.
        let mut a = m + col;
        let mut b = row;
        let mut from_col = Vec::new();
        let mut from_row = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_col.push(self.parent_arc[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            from_row.push(self.parent_arc[b]);
            b = self.parent[b];
        }
        while a != b {
            from_col.push(self.parent_arc[a]);
            a = self.parent[a];
            from_row.push(self.parent_arc[b]);
            b = self.parent[b];
        }
        from_row.reverse();
        let cycle: Vec<usize> = from_col.into_iter().chain(from_row).collect();

        // Cells at even positions lose flow, odd positions gain.
        let mut leaving = cycle[0];
        let mut theta = f64::INFINITY;
        for (pos, &k) in cycle.iter().enumerate() {
            if pos % 2 == 0 && self.flow[k] < theta {
                theta = self.flow[k];
                leaving = k;
            }
        }
        for (pos, &k) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                self.flow[k] -= theta;
            } else {
                self.flow[k] += theta;
            }
        }
        let (lr, lc) = self.basis[leaving];
        self.in_basis[lr * self.n + lc] = false;
        self.in_basis[row * self.n + col] = true;
        self.basis[leaving] = (row, col);
        self.flow[leaving] = theta;
    }
}
