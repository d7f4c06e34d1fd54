//! Log-domain Sinkhorn iterations for entropically regularized transport.
//!
//! Works entirely with dual potentials `f`, `g` so small `epsilon` values do
//! not underflow the scaling vectors. The module root validates inputs; this
//! file assumes finite costs and balanced nonnegative marginals.

use crate::util::logsumexp;

pub(crate) struct SinkhornOutcome {
    /// Row-major `n x k` plan.
    pub plan: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn solve(
    cost: &[f64],
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> SinkhornOutcome {
    let n = a.len();
    let k = b.len();
    debug_assert_eq!(cost.len(), n * k);

    // eps * ln w, with ln 0 = -inf giving empty rows/columns zero mass.
    let log_a: Vec<f64> = a.iter().map(|w| epsilon * w.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|w| epsilon * w.ln()).collect();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; k];
    let mut plan = vec![0.0; n * k];
    let mut scratch = vec![0.0; n.max(k)];

    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iters {
        iterations = it;
        for i in 0..n {
            for (j, s) in scratch[..k].iter_mut().enumerate() {
                *s = (g[j] - cost[i * k + j]) / epsilon;
            }
            f[i] = log_a[i] - epsilon * logsumexp(&scratch[..k]);
        }
        for j in 0..k {
            for (i, s) in scratch[..n].iter_mut().enumerate() {
                *s = (f[i] - cost[i * k + j]) / epsilon;
            }
            g[j] = log_b[j] - epsilon * logsumexp(&scratch[..n]);
        }

        fill_plan(&mut plan, cost, &f, &g, epsilon);
        if marginal_violation(&plan, a, b) < tol {
            converged = true;
            break;
        }
    }
    SinkhornOutcome {
        plan,
        converged,
        iterations,
    }
}

fn fill_plan(plan: &mut [f64], cost: &[f64], f: &[f64], g: &[f64], epsilon: f64) {
    let k = g.len();
    for i in 0..f.len() {
        for j in 0..k {
            plan[i * k + j] = ((f[i] + g[j] - cost[i * k + j]) / epsilon).exp();
        }
    }
}

/// Largest absolute deviation of any row or column sum from its marginal.
pub(crate) fn marginal_violation(plan: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let k = b.len();
    let mut worst = 0.0f64;
    for (i, ai) in a.iter().enumerate() {
        let row: f64 = plan[i * k..(i + 1) * k].iter().sum();
        worst = worst.max((row - ai).abs());
    }
    for (j, bj) in b.iter().enumerate() {
        let col: f64 = (0..n).map(|i| plan[i * k + j]).sum();
        worst = worst.max((col - bj).abs());
    }
    worst
}
