use std::collections::VecDeque;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{check_cost_shape, validate_marginal, TransportPlan};
use crate::{Error, Result};

/// Exact Wasserstein-1 distance between two 1-D empirical distributions.
///
/// Integrates `|F_a⁻¹(t) − F_b⁻¹(t)|` over `t ∈ [0, 1]`, where both quantile
/// functions are step functions. Unequal sample counts are handled by merging
/// the two breakpoint grids, so the result is exact for any pair of sizes.
pub fn w1_exact_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());

    if n == m {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / n as f64);
    }

    // Breakpoints at (i+1)/n and (j+1)/m, compared in integer arithmetic.
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut acc = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b) as f64 / (n * m) as f64;
        acc += (next - t) * (a[i] - b[j]).abs();
        t = next;
        if next_a <= next_b {
            i += 1;
        }
        if next_b <= next_a {
            j += 1;
        }
    }
    Ok(acc)
}

/// Exact discrete optimal transport by the transportation simplex.
///
/// Starts from a north-west corner basis and pivots on the most negative
/// reduced cost, falling back to Bland's rule after a run of degenerate
/// pivots so the method cannot cycle.
pub fn ot_exact_discrete(
    cost: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> Result<TransportPlan> {
    validate_marginal("row marginal", a)?;
    validate_marginal("column marginal", b)?;
    check_cost_shape(cost, a.len(), b.len())?;
    if cost.iter().any(|&c| c < 0.0) {
        return Err(Error::InvalidArgument("cost matrix has negative entries".into()));
    }
    let (flow, pivots) = TransportSimplex::new(cost, a, b).solve()?;
    Ok(TransportPlan::new(flow, a, b, cost, pivots))
}

struct TransportSimplex<'a> {
    cost: ArrayView2<'a, f64>,
    n: usize,
    m: usize,
    flow: Array2<f64>,
    basic: Array2<bool>,
}

impl<'a> TransportSimplex<'a> {
    fn new(cost: ArrayView2<'a, f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Self {
        let (n, m) = (a.len(), b.len());
        let mut flow = Array2::zeros((n, m));
        let mut basic = Array2::from_elem((n, m), false);
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = supply[i].min(demand[j]);
            flow[[i, j]] = q;
            basic[[i, j]] = true;
            supply[i] -= q;
            demand[j] -= q;
            if i == n - 1 && j == m - 1 {
                break;
            }
            // Exactly one index advances per cell, giving n + m - 1 basic cells.
            let row_done = supply[i] <= demand[j];
            if j == m - 1 || (row_done && i < n - 1) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            cost,
            n,
            m,
            flow,
            basic,
        }
    }

    fn solve(mut self) -> Result<(Array2<f64>, usize)> {
        let (n, m) = (self.n, self.m);
        let scale = 1.0 + self.cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
        let tol = 1e-12 * scale;
        let max_pivots = 50 * (n + m) * (n + m) + 1000;
        let mut degenerate_run = 0usize;
        let mut pivots = 0usize;

        loop {
            let (u, v) = self.potentials();
            let bland = degenerate_run > 2 * (n + m);
            let mut entering: Option<(usize, usize)> = None;
            let mut best = -tol;
            'scan: for i in 0..n {
                for j in 0..m {
                    if self.basic[[i, j]] {
                        continue;
                    }
                    let r = self.cost[[i, j]] - u[i] - v[j];
                    if r < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = r;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return Ok((self.flow, pivots));
            };
            if pivots >= max_pivots {
                return Err(Error::PivotLimit(max_pivots));
            }
            pivots += 1;

            let path = self.tree_path(ei, ej);
            // Edges alternate starting with a decrease on the edge leaving row `ei`.
            let mut theta = f64::INFINITY;
            let mut leaving = None;
            for (pos, &(i, j)) in path.iter().enumerate() {
                if pos % 2 == 0 && self.flow[[i, j]] < theta {
                    theta = self.flow[[i, j]];
                    leaving = Some((i, j));
                } else if pos % 2 == 0 && bland && self.flow[[i, j]] == theta {
                    if let Some(l) = leaving {
                        if (i, j) < l {
                            leaving = Some((i, j));
                        }
                    }
                }
            }
            let leaving = leaving.expect("cycle has at least one decreasing edge");
            for (pos, &(i, j)) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[[i, j]] = (self.flow[[i, j]] - theta).max(0.0);
                } else {
                    self.flow[[i, j]] += theta;
                }
            }
            self.flow[[ei, ej]] = theta;
            self.flow[leaving] = 0.0;
            self.basic[leaving] = false;
            self.basic[[ei, ej]] = true;
            if theta == 0.0 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
        }
    }

    /// Dual potentials with `u[0] = 0` from the spanning-tree basis.
    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; m];
        u[0] = 0.0;
        let mut queue = VecDeque::from([Node::Row(0)]);
        while let Some(node) = queue.pop_front() {
            match node {
                Node::Row(i) => {
                    for j in 0..m {
                        if self.basic[[i, j]] && v[j].is_nan() {
                            v[j] = self.cost[[i, j]] - u[i];
                            queue.push_back(Node::Col(j));
                        }
                    }
                }
                Node::Col(j) => {
                    for i in 0..n {
                        if self.basic[[i, j]] && u[i].is_nan() {
                            u[i] = self.cost[[i, j]] - v[j];
                            queue.push_back(Node::Row(i));
                        }
                    }
                }
            }
        }
        (u, v)
    }

    /// Basic cells on the tree path from row `from` to column `to`, in order.
    fn tree_path(&self, from: usize, to: usize) -> Vec<(usize, usize)> {
        let (n, m) = (self.n, self.m);
        let mut row_parent: Vec<Option<usize>> = vec![None; n];
        let mut col_parent: Vec<Option<usize>> = vec![None; m];
        let mut row_seen = vec![false; n];
        row_seen[from] = true;
        let mut queue = VecDeque::from([Node::Row(from)]);
        'bfs: while let Some(node) = queue.pop_front() {
            match node {
                Node::Row(i) => {
                    for j in 0..m {
                        if self.basic[[i, j]] && col_parent[j].is_none() {
                            col_parent[j] = Some(i);
                            if j == to {
                                break 'bfs;
                            }
                            queue.push_back(Node::Col(j));
                        }
                    }
                }
                Node::Col(j) => {
                    for i in 0..n {
                        if self.basic[[i, j]] && !row_seen[i] {
                            row_seen[i] = true;
                            row_parent[i] = Some(j);
                            queue.push_back(Node::Row(i));
                        }
                    }
                }
            }
        }
        let mut rev = Vec::new();
        let mut j = to;
        loop {
            let i = col_parent[j].expect("basis is a spanning tree");
            rev.push((i, j));
            if i == from {
                break;
            }
            j = row_parent[i].expect("basis is a spanning tree");
            rev.push((i, j));
        }
        rev.reverse();
        rev
    }
}

#[derive(Clone, Copy)]
enum Node {
    Row(usize),
    Col(usize),
}
