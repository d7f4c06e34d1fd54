//! Dense transportation simplex for small optimal-transport programs.
//!
//! Solves `min <plan, cost>` over nonnegative plans with fixed row sums `a`
//! and column sums `b`. The caller (the module root) validates marginals and
//! replaces infinite costs with a large finite cap before calling in here.
//!
//! The algorithm is the classical primal transportation simplex: a
//! north-west-corner basis of exactly `n + k - 1` cells, tree potentials,
//! most-negative reduced cost entering rule, and a leaving rule that picks
//! the first blocking cell along the unique basis cycle.

use crate::{Error, Result};

pub(crate) struct SimplexOutcome {
    /// Row-major `n x k` plan.
    pub plan: Vec<f64>,
    /// Number of pivots performed.
    pub pivots: usize,
}

/// Bipartite tree node: rows are `0..n`, columns are `n..n + k`.
fn col_node(n: usize, j: usize) -> usize {
    n + j
}

pub(crate) fn solve(cost: &[f64], a: &[f64], b: &[f64], max_pivots: usize) -> Result<SimplexOutcome> {
    let n = a.len();
    let k = b.len();
    debug_assert_eq!(cost.len(), n * k);
    debug_assert!(cost.iter().all(|c| c.is_finite()));

    let mut plan = vec![0.0; n * k];
    let mut in_basis = vec![false; n * k];
    let mut rows_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut cols_adj: Vec<Vec<usize>> = vec![Vec::new(); k];

    // North-west corner start. Each step advances exactly one of (i, j), so
    // the walk from (0,0) to (n-1,k-1) marks exactly n + k - 1 basic cells,
    // some possibly carrying zero mass (degenerate basis entries).
    {
        let mut ar = a.to_vec();
        let mut bc = b.to_vec();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let m = ar[i].min(bc[j]).max(0.0);
            plan[i * k + j] = m;
            in_basis[i * k + j] = true;
            rows_adj[i].push(j);
            cols_adj[j].push(i);
            ar[i] -= m;
            bc[j] -= m;
            if i == n - 1 && j == k - 1 {
                break;
            }
            if (ar[i] <= bc[j] && i < n - 1) || j == k - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; k];
    let mut visited = vec![false; n + k];
    let mut parent = vec![usize::MAX; n + k];
    let mut pivots = 0usize;

    loop {
        // Potentials from the spanning tree: u_i + v_j = c_ij on basic cells.
        visited.iter_mut().for_each(|f| *f = false);
        let mut stack = vec![0usize];
        visited[0] = true;
        u[0] = 0.0;
        while let Some(node) = stack.pop() {
            if node < n {
                for &j in &rows_adj[node] {
                    let cn = col_node(n, j);
                    if !visited[cn] {
                        visited[cn] = true;
                        v[j] = cost[node * k + j] - u[node];
                        stack.push(cn);
                    }
                }
            } else {
                let j = node - n;
                for &i in &cols_adj[j] {
                    if !visited[i] {
                        visited[i] = true;
                        u[i] = cost[i * k + j] - v[j];
                        stack.push(i);
                    }
                }
            }
        }
        if visited.iter().any(|f| !f) {
            return Err(Error::invalid("internal: transport basis is not a spanning tree"));
        }

        // Entering cell: most negative reduced cost, with a scale-aware
        // threshold so rounding noise on capped-sentinel magnitudes does not
        // keep the solver pivoting forever.
        let mut enter: Option<(usize, usize)> = None;
        let mut best = 0.0;
        for i in 0..n {
            for j in 0..k {
                if in_basis[i * k + j] {
                    continue;
                }
                let c = cost[i * k + j];
                let r = c - u[i] - v[j];
                let tol = 1e-9 * (1.0 + c.abs() + u[i].abs() + v[j].abs());
                if r < -tol && r < best {
                    best = r;
                    enter = Some((i, j));
                }
            }
        }
        let (ei, ej) = match enter {
            Some(cell) => cell,
            None => break,
        };

        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::SolverStalled(max_pivots));
        }

        // Unique tree path from the entering column node to the entering row
        // node; its edges plus the entering cell form the pivot cycle.
        visited.iter_mut().for_each(|f| *f = false);
        let start = col_node(n, ej);
        visited[start] = true;
        parent[start] = usize::MAX;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == ei {
                break;
            }
            if node < n {
                for &j in &rows_adj[node] {
                    let cn = col_node(n, j);
                    if !visited[cn] {
                        visited[cn] = true;
                        parent[cn] = node;
                        queue.push_back(cn);
                    }
                }
            } else {
                let j = node - n;
                for &i in &cols_adj[j] {
                    if !visited[i] {
                        visited[i] = true;
                        parent[i] = node;
                        queue.push_back(i);
                    }
                }
            }
        }
        if !visited[ei] {
            return Err(Error::invalid("internal: transport pivot cycle not found"));
        }
        let mut nodes = vec![ei];
        while *nodes.last().unwrap() != start {
            nodes.push(parent[*nodes.last().unwrap()]);
        }
        nodes.reverse(); // column node of the entering cell ... entering row node

        // Edges along the node path, as (i, j) cells. Walking away from the
        // entering column, signs alternate -, +, -, ... so mass pushed onto
        // the entering cell is drained consistently around the cycle.
        let mut edges = Vec::with_capacity(nodes.len() - 1);
        for w in nodes.windows(2) {
            let (p, q) = (w[0], w[1]);
            let (i, j) = if p < n { (p, q - n) } else { (q, p - n) };
            edges.push((i, j));
        }

        let mut theta = f64::INFINITY;
        let mut leave_idx = usize::MAX;
        for (idx, &(i, j)) in edges.iter().enumerate() {
            if idx % 2 == 0 && plan[i * k + j] < theta {
                theta = plan[i * k + j];
                leave_idx = idx;
            }
        }
        debug_assert!(leave_idx != usize::MAX);

        plan[ei * k + ej] += theta;
        for (idx, &(i, j)) in edges.iter().enumerate() {
            if idx % 2 == 0 {
                plan[i * k + j] -= theta;
            } else {
                plan[i * k + j] += theta;
            }
        }

        let (li, lj) = edges[leave_idx];
        plan[li * k + lj] = 0.0;
        in_basis[li * k + lj] = false;
        rows_adj[li].retain(|&j| j != lj);
        cols_adj[lj].retain(|&i| i != li);
        in_basis[ei * k + ej] = true;
        rows_adj[ei].push(ej);
        cols_adj[ej].push(ei);
    }

    // Drain any negative rounding dust.
    for m in plan.iter_mut() {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    Ok(SimplexOutcome { plan, pivots })
}
