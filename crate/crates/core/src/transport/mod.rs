//! Optimal-transport distances and couplings between weighted point clouds
//! in representation space.
//!
//! Two solvers are provided: an exact transportation simplex for small
//! programs and log-domain Sinkhorn iterations for everything larger. On top
//! of them sit the two cost constructions used by the rest of the crate — a
//! class-constrained squared-Euclidean cost whose optimal value is the
//! squared label-aware 2-Wasserstein distance, and a joint feature+label
//! cost used by the matching regularizer — plus the class-conditional
//! distance itself, computed class-by-class so the infinite cross-class
//! sentinel never enters solver arithmetic.

mod exact;
mod sinkhorn;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netcore::RepPoint;
use crate::util::sq_dist;
use crate::{Error, Result};

/// Largest `n * k` accepted by [`exact_ot`].
pub const EXACT_OT_CAP: usize = 4096;
/// Mass allowed on an infinite-cost cell before the program is declared
/// infeasible.
pub const INFEASIBLE_MASS_TOL: f64 = 1e-9;
/// Finite stand-in for the infinite sentinel inside the linear program.
const BIG_COST: f64 = 1e12;

pub const DEFAULT_SINKHORN_EPSILON: f64 = 1e-2;
pub const DEFAULT_SINKHORN_MAX_ITERS: usize = 10_000;
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-9;

/// A weighted sample of labeled representation points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub points: Vec<RepPoint>,
    /// Nonnegative, summing to 1 within 1e-9.
    pub weights: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Uniform weights `1/n`.
    pub fn uniform(points: Vec<RepPoint>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::invalid("empirical distribution needs at least one point"));
        }
        let dist = EmpiricalDistribution {
            points,
            weights: vec![1.0 / n as f64; n],
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn weighted(points: Vec<RepPoint>, weights: Vec<f64>) -> Result<Self> {
        let dist = EmpiricalDistribution { points, weights };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("empirical distribution needs at least one point"));
        }
        if self.weights.len() != self.points.len() {
            return Err(Error::invalid("weight count must match point count"));
        }
        if !self.weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
        }
        let dim = self.points[0].z.len();
        if self.points.iter().any(|p| p.z.len() != dim) {
            return Err(Error::invalid("points must share one representation dimension"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].z.len()
    }

    /// Total weight per class, in ascending class order.
    pub fn class_masses(&self) -> BTreeMap<usize, f64> {
        let mut masses = BTreeMap::new();
        for (p, w) in self.points.iter().zip(&self.weights) {
            *masses.entry(p.y).or_insert(0.0) += w;
        }
        masses
    }
}

/// A coupling between two weighted samples together with its transport cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`, nonnegative, marginals matching the inputs.
    pub plan: Vec<f64>,
    /// `<plan, cost>` evaluated on the cost matrix handed to the solver
    /// (cells with zero mass are skipped, so infinite sentinels contribute
    /// nothing).
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.plan[i * self.cols..(i + 1) * self.cols].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.plan[i * self.cols + j]).sum())
            .collect()
    }
}

/// Solver selection for [`w2_class_conditional`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OtMethod {
    /// Transportation simplex; errors above [`EXACT_OT_CAP`] entries.
    Exact,
    /// Entropic approximation.
    Sinkhorn {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_max_iters")]
        max_iters: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// Exact when every sub-problem fits under the cap, Sinkhorn otherwise.
    #[default]
    Auto,
}

fn default_epsilon() -> f64 {
    DEFAULT_SINKHORN_EPSILON
}
fn default_max_iters() -> usize {
    DEFAULT_SINKHORN_MAX_ITERS
}
fn default_tol() -> f64 {
    DEFAULT_SINKHORN_TOL
}

/// Squared Euclidean cost within a class, infinite across classes, so the
/// optimal transport value equals the squared label-aware 2-Wasserstein
/// distance.
pub fn cost_matrix_class_constrained(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    let mut cost = Vec::with_capacity(a.n() * b.n());
    for pa in &a.points {
        for pb in &b.points {
            cost.push(if pa.y == pb.y {
                sq_dist(&pa.z, &pb.z)
            } else {
                f64::INFINITY
            });
        }
    }
    Ok(cost)
}

/// Squared feature distance plus `lambda` times the squared distance of
/// one-hot labels (0 for equal classes, 2 otherwise).
pub fn cost_matrix_joint(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("label weight lambda must be finite and >= 0"));
    }
    check_dims(a, b)?;
    let mut cost = Vec::with_capacity(a.n() * b.n());
    for pa in &a.points {
        for pb in &b.points {
            let label = if pa.y == pb.y { 0.0 } else { 2.0 };
            cost.push(sq_dist(&pa.z, &pb.z) + lambda * label);
        }
    }
    Ok(cost)
}

fn check_dims(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "representation dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn validate_marginals(cost_len: usize, a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("marginals must be non-empty"));
    }
    if cost_len != a.len() * b.len() {
        return Err(Error::invalid(format!(
            "cost matrix has {} entries, expected {} x {}",
            cost_len,
            a.len(),
            b.len()
        )));
    }
    for w in a.iter().chain(b) {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::invalid("marginals must be finite and nonnegative"));
        }
    }
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if sa <= 0.0 || sb <= 0.0 {
        return Err(Error::invalid("marginals must carry positive total mass"));
    }
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::invalid(format!(
            "marginals are unbalanced: {sa} vs {sb}"
        )));
    }
    Ok(())
}

/// Exact optimal transport via the transportation simplex.
///
/// Infinite cost entries are tolerated: they are capped to a large finite
/// value inside the linear program and must end up with at most
/// [`INFEASIBLE_MASS_TOL`] mass, otherwise the program is reported
/// infeasible. The returned cost is evaluated against the original matrix
/// over cells with positive mass.
pub fn exact_ot(cost: &[f64], a: &[f64], b: &[f64]) -> Result<TransportPlan> {
    validate_marginals(cost.len(), a, b)?;
    let (n, k) = (a.len(), b.len());
    if n * k > EXACT_OT_CAP {
        return Err(Error::invalid(format!(
            "exact transport instance has {} entries, cap is {EXACT_OT_CAP}",
            n * k
        )));
    }
    if cost.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
        return Err(Error::invalid("cost entries must not be NaN or -inf"));
    }

    // Feasibility pre-check: a positive-mass row or column made entirely of
    // the infinite sentinel can never be served.
    for (i, ai) in a.iter().enumerate() {
        if *ai > 0.0 && cost[i * k..(i + 1) * k].iter().all(|c| c.is_infinite()) {
            return Err(Error::InfeasibleTransport(format!(
                "source {i} has positive mass but only infinite-cost targets"
            )));
        }
    }
    for (j, bj) in b.iter().enumerate() {
        if *bj > 0.0 && (0..n).all(|i| cost[i * k + j].is_infinite()) {
            return Err(Error::InfeasibleTransport(format!(
                "target {j} has positive mass but only infinite-cost sources"
            )));
        }
    }

    let capped: Vec<f64> = cost
        .iter()
        .map(|c| if c.is_infinite() { BIG_COST } else { *c })
        .collect();
    let max_pivots = 50 * (n + k) * (n + k);
    let out = exact::solve(&capped, a, b, max_pivots)?;

    let mut plan = out.plan;
    let mut value = 0.0;
    for (idx, c) in cost.iter().enumerate() {
        if c.is_infinite() {
            if plan[idx] > INFEASIBLE_MASS_TOL {
                return Err(Error::InfeasibleTransport(format!(
                    "optimal plan leaves mass {} on a forbidden pairing",
                    plan[idx]
                )));
            }
            plan[idx] = 0.0;
        } else if plan[idx] > 0.0 {
            value += plan[idx] * c;
        }
    }

    Ok(TransportPlan {
        rows: n,
        cols: k,
        plan,
        cost: value,
        converged: true,
        iterations: out.pivots,
    })
}

/// Entropically regularized transport in the log domain.
///
/// Costs must already be finite — callers mask infinite sentinels to a large
/// cap first. Failure to reach `tol` within `max_iters` is not an error; the
/// plan is returned with `converged = false`. The reported cost is the plain
/// `<plan, cost>` without the entropy term.
pub fn sinkhorn(
    cost: &[f64],
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    validate_marginals(cost.len(), a, b)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("sinkhorn epsilon must be finite and > 0"));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid("sinkhorn tolerance must be finite and > 0"));
    }
    if max_iters == 0 {
        return Err(Error::invalid("sinkhorn needs at least one iteration"));
    }
    if !cost.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid(
            "sinkhorn requires finite costs; mask infinite sentinels first",
        ));
    }
    let out = sinkhorn::solve(cost, a, b, epsilon, max_iters, tol);
    let value = out.plan.iter().zip(cost).map(|(p, c)| p * c).sum();
    Ok(TransportPlan {
        rows: a.len(),
        cols: b.len(),
        plan: out.plan,
        cost: value,
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// Per-class breakdown of the label-aware 2-Wasserstein distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Report {
    /// The distance itself.
    pub w2: f64,
    /// Its square: the optimal value of the class-constrained program.
    pub ot_sq: f64,
    /// Optimal transport value of each class sub-problem on class-normalized
    /// marginals; the total is the class-mass-weighted sum.
    pub per_class: BTreeMap<usize, f64>,
}

/// Label-aware 2-Wasserstein distance between two weighted samples.
///
/// Couplings may only pair points with equal labels, so the distance
/// decomposes over classes; each class sub-problem is solved on normalized
/// marginals and weighted by its class mass. Class masses of the two sides
/// must agree within 1e-6 or the constrained program is infeasible.
pub fn w2_class_conditional(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    method: OtMethod,
) -> Result<f64> {
    Ok(w2_class_conditional_report(a, b, method)?.w2)
}

/// As [`w2_class_conditional`], returning the squared value and per-class
/// terms as well.
pub fn w2_class_conditional_report(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    method: OtMethod,
) -> Result<W2Report> {
    check_dims(a, b)?;
    let masses_a = a.class_masses();
    let masses_b = b.class_masses();

    let mut classes: Vec<usize> = masses_a.keys().chain(masses_b.keys()).copied().collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = BTreeMap::new();
    let mut total = 0.0;
    for y in classes {
        let wa = masses_a.get(&y).copied().unwrap_or(0.0);
        let wb = masses_b.get(&y).copied().unwrap_or(0.0);
        if (wa - wb).abs() > 1e-6 {
            return Err(Error::InfeasibleTransport(format!(
                "class {y} carries mass {wa} on one side and {wb} on the other"
            )));
        }
        // Sub-tolerance class mass on either side contributes (at most
        // 1e-6-weighted) nothing; skipping avoids dividing by zero mass.
        if wa <= 0.0 || wb <= 0.0 {
            continue;
        }

        let idx_a: Vec<usize> = (0..a.n()).filter(|&i| a.points[i].y == y).collect();
        let idx_b: Vec<usize> = (0..b.n()).filter(|&j| b.points[j].y == y).collect();
        let sub_a: Vec<f64> = idx_a.iter().map(|&i| a.weights[i] / wa).collect();
        let sub_b: Vec<f64> = idx_b.iter().map(|&j| b.weights[j] / wb).collect();
        let mut cost = Vec::with_capacity(idx_a.len() * idx_b.len());
        for &i in &idx_a {
            for &j in &idx_b {
                cost.push(sq_dist(&a.points[i].z, &b.points[j].z));
            }
        }

        let use_exact = match method {
            OtMethod::Exact => true,
            OtMethod::Sinkhorn { .. } => false,
            OtMethod::Auto => idx_a.len() * idx_b.len() <= EXACT_OT_CAP,
        };
        let value = if use_exact {
            exact_ot(&cost, &sub_a, &sub_b)?.cost
        } else {
            let (epsilon, max_iters, tol) = match method {
                OtMethod::Sinkhorn {
                    epsilon,
                    max_iters,
                    tol,
                } => (epsilon, max_iters, tol),
                _ => (
                    DEFAULT_SINKHORN_EPSILON,
                    DEFAULT_SINKHORN_MAX_ITERS,
                    DEFAULT_SINKHORN_TOL,
                ),
            };
            sinkhorn(&cost, &sub_a, &sub_b, epsilon, max_iters, tol)?.cost
        };
        // Entropic smoothing can report a slightly negative value on
        // identical supports; the squared distance is nonnegative.
        let value = value.max(0.0);
        per_class.insert(y, value);
        total += wa * value;
    }

    Ok(W2Report {
        w2: total.sqrt(),
        ot_sq: total,
        per_class,
    })
}
