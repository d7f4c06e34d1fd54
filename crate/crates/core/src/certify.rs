//! Worst-case loss certificates over Wasserstein balls.
//!
//! For a ball of radius `rho` (in label-aware 2-Wasserstein distance) around
//! the empirical source distribution, the worst-case mean loss has the dual
//! form `inf_{gamma >= 0} { gamma rho^2 + mean_i phi_gamma(z0_i, y_i) }` with
//! the penalized surrogate `phi_gamma(z0, y) = sup_z { loss(z, y) -
//! gamma ||z - z0||^2 }`. Any `gamma >= 0` paired with the exact sup gives a
//! sound upper bound (weak duality); the certifier alternates gradient
//! ascent on buffered maximizer candidates with a projected descent step on
//! `gamma`, then reports the objective at the final state.
//!
//! The 0/1 loss admits an exact closed form: its surrogate depends only on
//! each point's distance to the decision boundary, and the dual objective is
//! piecewise linear in `gamma`, minimized exactly over breakpoints.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::{boundary_distance, closest_misclassified, NormalizedRadius, DEFAULT_OVERSHOOT};
use crate::netcore::{
    forward_rep_cached, grad_loss_z, loss, rep_backprop, LabeledPoint, LinearHead, LossFamily,
    ModelParams, RepPoint,
};
use crate::util::{axpy, sq_dist};
use crate::{Error, Result};

/// Squared-distortion cap per representation dimension; exceeding it aborts
/// with an unbounded-surrogate error (the penalty weight is too small for
/// the loss family's growth).
pub const DIVERGENCE_CAP_PER_DIM: f64 = 1e6;

/// Scalar search bounds of the closed-form 0/1 certificate.
pub const GAMMA_01_MIN: f64 = 1e-20;
pub const GAMMA_01_MAX: f64 = 100.0;

/// Knobs of the dual-ascent certifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertConfig {
    /// Outer epochs over the source sample.
    pub t1: usize,
    /// Inner ascent steps per point per batch visit.
    pub t2: usize,
    /// Ascent rate on maximizer candidates (clamped to 0.5/gamma for
    /// stability at large penalties).
    pub alpha_step: f64,
    /// Descent rate on gamma.
    pub beta_step: f64,
    pub gamma_init: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub batch: usize,
    /// RNG stream root for consumers that batch or subsample around the
    /// certifier; certification itself draws no randomness.
    pub seed: u64,
    /// Keep maximizer candidates across epochs and across sweep radii;
    /// when false they restart from the source points every epoch.
    pub track_perturbations: bool,
    /// Absolute `|rho^2 - mean squared distortion|` above which a
    /// certificate is flagged unconverged (unless gamma is pinned at a bound
    /// with the matching slackness sign).
    pub dual_gap_tol: f64,
}

impl Default for CertConfig {
    fn default() -> Self {
        CertConfig {
            t1: 5,
            t2: 1,
            alpha_step: 0.1,
            beta_step: 0.05,
            gamma_init: 1.0,
            gamma_min: 1e-6,
            gamma_max: 1e4,
            batch: 128,
            seed: 0,
            track_perturbations: true,
            dual_gap_tol: 0.25,
        }
    }
}

impl CertConfig {
    pub fn validate(&self) -> Result<()> {
        let g = [self.gamma_min, self.gamma_init, self.gamma_max];
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("gamma values must be finite"));
        }
        if !(0.0 < self.gamma_min && self.gamma_min <= self.gamma_init && self.gamma_init <= self.gamma_max)
        {
            return Err(Error::invalid(
                "gamma bounds must satisfy 0 < gamma_min <= gamma_init <= gamma_max",
            ));
        }
        if !(self.alpha_step > 0.0 && self.alpha_step.is_finite()) {
            return Err(Error::invalid("alpha_step must be finite and > 0"));
        }
        if !(self.beta_step > 0.0 && self.beta_step.is_finite()) {
            return Err(Error::invalid("beta_step must be finite and > 0"));
        }
        if self.t1 == 0 || self.t2 == 0 {
            return Err(Error::invalid("t1 and t2 must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.dual_gap_tol > 0.0 && self.dual_gap_tol.is_finite()) {
            return Err(Error::invalid("dual_gap_tol must be finite and > 0"));
        }
        Ok(())
    }
}

/// Mutable state of the dual certifier: the penalty weight and one buffered
/// maximizer candidate per source point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub gamma: f64,
    /// One perturbed representation per source point, same order.
    pub z_perturbed: Vec<Vec<f64>>,
    /// Squared distances of each candidate from its source point.
    pub distortions_sq: Vec<f64>,
}

impl DualState {
    fn fresh(source: &[RepPoint], gamma: f64) -> Self {
        DualState {
            gamma,
            z_perturbed: source.iter().map(|p| p.z.clone()).collect(),
            distortions_sq: vec![0.0; source.len()],
        }
    }
}

/// A certified upper bound on the worst-case mean loss over the ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub radius: NormalizedRadius,
    pub loss_family: LossFamily,
    /// `gamma_opt * rho^2 + mean phi` at the final dual state.
    pub worst_case_loss: f64,
    pub gamma_opt: f64,
    /// Mean squared movement of the surrogate maximizers actually used in
    /// the final evaluation.
    pub mean_sq_distortion: f64,
    /// `|rho^2 - mean_sq_distortion|`; zero at an interior dual optimum.
    pub dual_gap_diag: f64,
    /// Total inner ascent steps executed.
    pub iterations_used: usize,
    /// False when the dual gap exceeds the configured tolerance without a
    /// boundary (pinned-gamma) justification.
    pub converged: bool,
    /// Effective lower gamma bound used for this run (raised above the
    /// configured bound by the concavity floor for cross-entropy).
    pub gamma_floor: f64,
}

/// The penalized objective `loss(z, y0) - gamma ||z - z0||^2` at a candidate
/// `z` (not yet the sup over `z`).
pub fn surrogate_value(
    head: &LinearHead,
    z0: &RepPoint,
    z: &[f64],
    gamma: f64,
    family: &LossFamily,
) -> Result<f64> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma must be finite and >= 0"));
    }
    Ok(loss(head, z, z0.y, family)? - gamma * sq_dist(z, &z0.z))
}

/// Smallest penalty weight making the cross-entropy surrogate concave: the
/// logit Hessian through a linear head is bounded by
/// `max_{y != k} ||W_y - W_k||^2 / 4`, and concavity needs `2 gamma` above
/// it.
pub fn concavity_floor(head: &LinearHead) -> f64 {
    let mut worst = 0.0f64;
    for y in 0..head.n_classes {
        for k in y + 1..head.n_classes {
            worst = worst.max(sq_dist(head.row(y), head.row(k)));
        }
    }
    worst / 8.0
}

fn divergence_cap(dim: usize) -> f64 {
    DIVERGENCE_CAP_PER_DIM * dim as f64
}

/// One ascent step on the surrogate, in place. The effective step is clamped
/// to `0.5/gamma` so the quadratic penalty never overshoots.
fn ascent_step(
    head: &LinearHead,
    z: &mut [f64],
    z0: &[f64],
    y: usize,
    gamma: f64,
    alpha: f64,
    family: &LossFamily,
) -> Result<()> {
    let mut g = grad_loss_z(head, z, y, family)?;
    for (gi, (zi, z0i)) in g.iter_mut().zip(z.iter().zip(z0)) {
        *gi -= 2.0 * gamma * (zi - z0i);
    }
    let step = alpha.min(0.5 / gamma);
    axpy(z, step, &g);
    let d2 = sq_dist(z, z0);
    let cap = divergence_cap(z.len());
    if d2 > cap {
        return Err(Error::UnboundedSurrogate {
            distortion_sq: d2,
            cap,
        });
    }
    Ok(())
}

/// Gradient ascent on the surrogate from `warm_start` (default: the source
/// point), returning the best iterate seen and its surrogate value. The
/// source point itself is always a candidate, so the result is never below
/// the plain loss.
pub fn maximize_surrogate_rep(
    head: &LinearHead,
    z0: &RepPoint,
    gamma: f64,
    steps: usize,
    alpha_step: f64,
    family: &LossFamily,
    warm_start: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    check_maximize_args(gamma, alpha_step, family)?;
    let mut cur = warm_start.unwrap_or(&z0.z).to_vec();
    if cur.len() != z0.z.len() {
        return Err(Error::invalid("warm start dimension mismatch"));
    }
    let mut best = z0.z.clone();
    let mut best_phi = surrogate_value(head, z0, &z0.z, gamma, family)?;
    let phi_cur = surrogate_value(head, z0, &cur, gamma, family)?;
    if phi_cur > best_phi {
        best_phi = phi_cur;
        best = cur.clone();
    }
    for _ in 0..steps {
        ascent_step(head, &mut cur, &z0.z, z0.y, gamma, alpha_step, family)?;
        let phi = surrogate_value(head, z0, &cur, gamma, family)?;
        if phi > best_phi {
            best_phi = phi;
            best = cur.clone();
        }
    }
    Ok((best, best_phi))
}

/// Input-space surrogate: ascent over `x` through the representation
/// network, with the penalty measured in representation space,
/// `loss(g(x), y0) - gamma ||g(x) - g(x0)||^2`.
pub fn maximize_surrogate_input(
    params: &ModelParams,
    x0: &LabeledPoint,
    gamma: f64,
    steps: usize,
    alpha_step: f64,
    family: &LossFamily,
) -> Result<(Vec<f64>, f64)> {
    check_maximize_args(gamma, alpha_step, family)?;
    let z0 = crate::netcore::forward_rep(params, &x0.x)?;
    let cap = divergence_cap(z0.len());

    let phi_at = |x: &[f64]| -> Result<(f64, f64)> {
        let z = crate::netcore::forward_rep(params, x)?;
        let d2 = sq_dist(&z, &z0);
        Ok((loss(&params.head, &z, x0.y, family)? - gamma * d2, d2))
    };

    let mut cur = x0.x.clone();
    let mut best = cur.clone();
    let (mut best_phi, _) = phi_at(&cur)?;
    let step = alpha_step.min(0.5 / gamma);
    for _ in 0..steps {
        let (rep, cache) = forward_rep_cached(params, &cur)?;
        let mut cot = grad_loss_z(&params.head, &rep, x0.y, family)?;
        for (c, (zi, z0i)) in cot.iter_mut().zip(rep.iter().zip(&z0)) {
            *c -= 2.0 * gamma * (zi - z0i);
        }
        let gx = rep_backprop(params, &cache, &cot, 1.0, None);
        axpy(&mut cur, step, &gx);
        let (phi, d2) = phi_at(&cur)?;
        if d2 > cap {
            return Err(Error::UnboundedSurrogate {
                distortion_sq: d2,
                cap,
            });
        }
        if phi > best_phi {
            best_phi = phi;
            best = cur.clone();
        }
    }
    Ok((best, best_phi))
}

fn check_maximize_args(gamma: f64, alpha_step: f64, family: &LossFamily) -> Result<()> {
    if !family.differentiable() {
        return Err(Error::UnsupportedLoss {
            family: "zero_one",
            what: "surrogate maximization",
        });
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma must be finite and >= 0"));
    }
    if matches!(family, LossFamily::CrossEntropy) && gamma <= 0.0 {
        return Err(Error::invalid(
            "cross-entropy surrogate needs gamma > 0 (unbounded otherwise)",
        ));
    }
    if !(alpha_step > 0.0 && alpha_step.is_finite()) {
        return Err(Error::invalid("alpha_step must be finite and > 0"));
    }
    Ok(())
}

/// Effective gamma bounds for a run: cross-entropy raises the lower bound to
/// the concavity floor.
fn effective_bounds(head: &LinearHead, cfg: &CertConfig, family: &LossFamily) -> Result<(f64, f64, f64)> {
    let floor = match family {
        LossFamily::CrossEntropy => concavity_floor(head).max(cfg.gamma_min),
        _ => cfg.gamma_min,
    };
    if floor > cfg.gamma_max {
        return Err(Error::invalid(format!(
            "gamma_max {} is below the concavity floor {floor} of this head",
            cfg.gamma_max
        )));
    }
    let init = cfg.gamma_init.clamp(floor, cfg.gamma_max);
    Ok((floor, init, cfg.gamma_max))
}

fn validate_source(head: &LinearHead, source: &[RepPoint]) -> Result<()> {
    if source.is_empty() {
        return Err(Error::invalid("certification needs at least one source point"));
    }
    for p in source {
        if p.z.len() != head.rep_dim {
            return Err(Error::invalid(format!(
                "source point has dimension {}, head expects {}",
                p.z.len(),
                head.rep_dim
            )));
        }
        if p.y >= head.n_classes {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                p.y, head.n_classes
            )));
        }
    }
    Ok(())
}

/// Dual-ascent certificate for a differentiable loss family at raw radius
/// `rho` (the radius unit is taken as 1; see [`cert_dg_with_unit`]).
pub fn cert_dg(
    head: &LinearHead,
    source: &[RepPoint],
    rho: f64,
    cfg: &CertConfig,
    family: &LossFamily,
) -> Result<Certificate> {
    let radius = NormalizedRadius::from_raw(rho, 1.0)?;
    cert_dg_with_unit(head, source, radius, cfg, family)
}

/// As [`cert_dg`] with the radius carrying its normalization unit.
pub fn cert_dg_with_unit(
    head: &LinearHead,
    source: &[RepPoint],
    radius: NormalizedRadius,
    cfg: &CertConfig,
    family: &LossFamily,
) -> Result<Certificate> {
    Ok(cert_dg_run(head, source, radius, cfg, family, None)?.0)
}

/// Full certifier: alternates per batch `t2` ascent steps on each buffered
/// candidate with one projected descent step on gamma, for `t1` epochs, then
/// evaluates the dual objective at the final state. Returns the certificate
/// and the final state (for warm-started sweeps).
pub fn cert_dg_run(
    head: &LinearHead,
    source: &[RepPoint],
    radius: NormalizedRadius,
    cfg: &CertConfig,
    family: &LossFamily,
    warm: Option<DualState>,
) -> Result<(Certificate, DualState)> {
    cfg.validate()?;
    validate_source(head, source)?;
    if !family.differentiable() {
        return Err(Error::UnsupportedLoss {
            family: "zero_one",
            what: "dual-ascent certification (use the closed-form 0/1 certificate)",
        });
    }
    let (g_min, g_init, g_max) = effective_bounds(head, cfg, family)?;
    let rho = radius.raw;
    let n = source.len();

    // Degenerate ball: the worst case is the source itself.
    if rho == 0.0 {
        let mut mean = 0.0;
        for p in source {
            mean += loss(head, &p.z, p.y, family)? / n as f64;
        }
        let state = DualState::fresh(source, g_init);
        let cert = Certificate {
            radius,
            loss_family: *family,
            worst_case_loss: mean,
            gamma_opt: g_init,
            mean_sq_distortion: 0.0,
            dual_gap_diag: 0.0,
            iterations_used: 0,
            converged: true,
            gamma_floor: g_min,
        };
        return Ok((cert, state));
    }

    let mut state = match warm {
        Some(mut s) => {
            if s.z_perturbed.len() != n || s.distortions_sq.len() != n {
                return Err(Error::invalid("warm dual state size mismatch"));
            }
            if s.z_perturbed.iter().any(|z| z.len() != head.rep_dim) {
                return Err(Error::invalid("warm dual state dimension mismatch"));
            }
            s.gamma = s.gamma.clamp(g_min, g_max);
            s
        }
        None => DualState::fresh(source, g_init),
    };

    let rho_sq = rho * rho;
    let mut inner_steps = 0usize;
    for _epoch in 0..cfg.t1 {
        if !cfg.track_perturbations {
            for (z, p) in state.z_perturbed.iter_mut().zip(source) {
                z.clone_from(&p.z);
            }
            state.distortions_sq.iter_mut().for_each(|d| *d = 0.0);
        }
        let mut start = 0;
        while start < n {
            let end = (start + cfg.batch).min(n);
            let gamma = state.gamma;
            let dists: Result<Vec<f64>> = state.z_perturbed[start..end]
                .par_iter_mut()
                .zip(source[start..end].par_iter())
                .map(|(z, p)| {
                    for _ in 0..cfg.t2 {
                        ascent_step(head, z, &p.z, p.y, gamma, cfg.alpha_step, family)?;
                    }
                    Ok(sq_dist(z, &p.z))
                })
                .collect();
            let dists = dists?;
            inner_steps += cfg.t2 * (end - start);
            // Fixed-order reduction for determinism.
            let mut mean_sq = 0.0;
            for (slot, d) in state.distortions_sq[start..end].iter_mut().zip(&dists) {
                *slot = *d;
                mean_sq += d / (end - start) as f64;
            }
            state.gamma = (state.gamma - cfg.beta_step * (rho_sq - mean_sq)).clamp(g_min, g_max);
            start = end;
        }
    }

    // Final dual value. Each point's surrogate is evaluated as the best of
    // three feasible sup candidates — the buffered ascent iterate, the source
    // point itself, and the closest misclassified point — all of which lower-
    // bound the exact sup, so the bound stays valid while never dipping under
    // the empirical loss and staying robust to kinked (hinge) surrogates.
    let gamma = state.gamma;
    let evals: Result<Vec<(f64, f64)>> = source
        .par_iter()
        .zip(state.z_perturbed.par_iter())
        .map(|(p, z)| {
            let base = loss(head, &p.z, p.y, family)?;
            let mut phi = base;
            let mut dist_sq = 0.0;

            let d2 = sq_dist(z, &p.z);
            let v = loss(head, z, p.y, family)? - gamma * d2;
            if v > phi {
                phi = v;
                dist_sq = d2;
            }
            match closest_misclassified(head, &p.z, p.y, DEFAULT_OVERSHOOT) {
                Ok((z_cm, _)) => {
                    let d2 = sq_dist(&z_cm, &p.z);
                    let v = loss(head, &z_cm, p.y, family)? - gamma * d2;
                    if v > phi {
                        phi = v;
                        dist_sq = d2;
                    }
                }
                Err(Error::DegenerateHead) => {}
                Err(e) => return Err(e),
            }
            Ok((phi, dist_sq))
        })
        .collect();
    let evals = evals?;
    let mut mean_phi = 0.0;
    let mut mean_sq = 0.0;
    for (phi, d2) in &evals {
        mean_phi += phi / n as f64;
        mean_sq += d2 / n as f64;
    }

    let dual_gap = (rho_sq - mean_sq).abs();
    let pinned_low = gamma <= g_min && mean_sq >= rho_sq;
    let pinned_high = gamma >= g_max && mean_sq <= rho_sq;
    let cert = Certificate {
        radius,
        loss_family: *family,
        worst_case_loss: gamma * rho_sq + mean_phi,
        gamma_opt: gamma,
        mean_sq_distortion: mean_sq,
        dual_gap_diag: dual_gap,
        iterations_used: inner_steps,
        converged: dual_gap <= cfg.dual_gap_tol || pinned_low || pinned_high,
        gamma_floor: g_min,
    };
    Ok((cert, state))
}

/// Closed-form 0/1 certificate at raw radius `rho` (unit 1).
pub fn cert_01(head: &LinearHead, source: &[RepPoint], rho: f64) -> Result<Certificate> {
    let radius = NormalizedRadius::from_raw(rho, 1.0)?;
    cert_01_with_unit(head, source, radius)
}

/// Closed-form 0/1 certificate: `inf_gamma { gamma rho^2 + mean_i max(0,
/// 1 - gamma d_i^2) }` over `gamma` in `[1e-20, 100]`, where `d_i` is the
/// exact (no overshoot) distance to the decision boundary. The objective is
/// piecewise linear and convex in gamma, so evaluating the breakpoints
/// `1/d_i^2` plus the interval bounds finds the exact minimum.
pub fn cert_01_with_unit(
    head: &LinearHead,
    source: &[RepPoint],
    radius: NormalizedRadius,
) -> Result<Certificate> {
    validate_source(head, source)?;
    let d_sq: Vec<f64> = source
        .iter()
        .map(|p| boundary_distance(head, &p.z, p.y).map(|d| d * d))
        .collect::<Result<_>>()?;
    Ok(cert_01_from_distances(&d_sq, radius))
}

/// The 0/1 certificate from precomputed squared boundary distances (zero for
/// misclassified points); used by sweeps to avoid re-running the attack.
pub fn cert_01_from_distances(d_sq: &[f64], radius: NormalizedRadius) -> Certificate {
    let n = d_sq.len();
    debug_assert!(n > 0);
    let rho = radius.raw;

    if rho == 0.0 {
        let err_rate = d_sq.iter().filter(|d| **d == 0.0).count() as f64 / n as f64;
        return Certificate {
            radius,
            loss_family: LossFamily::ZeroOne,
            worst_case_loss: err_rate,
            gamma_opt: GAMMA_01_MAX,
            mean_sq_distortion: 0.0,
            dual_gap_diag: 0.0,
            iterations_used: 0,
            converged: true,
            gamma_floor: GAMMA_01_MIN,
        };
    }

    let mut candidates = vec![GAMMA_01_MIN, GAMMA_01_MAX];
    for d2 in d_sq {
        if *d2 > 0.0 {
            let g = 1.0 / d2;
            if (GAMMA_01_MIN..=GAMMA_01_MAX).contains(&g) {
                candidates.push(g);
            }
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let rho_sq = rho * rho;
    let objective = |gamma: f64| -> f64 {
        let mut sum = 0.0;
        for d2 in d_sq {
            sum += (1.0 - gamma * d2).max(0.0);
        }
        gamma * rho_sq + sum / n as f64
    };

    let mut gamma_opt = candidates[0];
    let mut best = objective(gamma_opt);
    for &g in &candidates[1..] {
        let v = objective(g);
        if v < best {
            best = v;
            gamma_opt = g;
        }
    }

    // Points the worst-case distribution actually moves: those whose term is
    // still active at the optimum.
    let moved_sq: f64 = d_sq
        .iter()
        .filter(|d2| gamma_opt * **d2 <= 1.0)
        .sum::<f64>()
        / n as f64;

    Certificate {
        radius,
        loss_family: LossFamily::ZeroOne,
        worst_case_loss: best,
        gamma_opt,
        mean_sq_distortion: moved_sq,
        dual_gap_diag: (rho_sq - moved_sq).abs(),
        iterations_used: candidates.len(),
        converged: true,
        gamma_floor: GAMMA_01_MIN,
    }
}

/// One certificate per radius (ascending). Differentiable families
/// warm-start each radius from the previous dual state when
/// `track_perturbations` is set; the 0/1 family reuses one boundary-distance
/// pass. Per-radius failures are collected without aborting the sweep.
pub fn cert_sweep(
    head: &LinearHead,
    source: &[RepPoint],
    radii: &[NormalizedRadius],
    cfg: &CertConfig,
    family: &LossFamily,
) -> Result<Vec<Result<Certificate>>> {
    if radii.is_empty() {
        return Err(Error::invalid("sweep needs at least one radius"));
    }
    if radii.windows(2).any(|w| w[0].raw > w[1].raw) {
        return Err(Error::invalid("sweep radii must be sorted ascending"));
    }

    if matches!(family, LossFamily::ZeroOne) {
        validate_source(head, source)?;
        let d_sq: Vec<f64> = source
            .iter()
            .map(|p| boundary_distance(head, &p.z, p.y).map(|d| d * d))
            .collect::<Result<_>>()?;
        return Ok(radii
            .iter()
            .map(|r| Ok(cert_01_from_distances(&d_sq, *r)))
            .collect());
    }

    let mut out = Vec::with_capacity(radii.len());
    let mut state: Option<DualState> = None;
    for r in radii {
        let warm = if cfg.track_perturbations {
            state.take()
        } else {
            None
        };
        match cert_dg_run(head, source, *r, cfg, family, warm) {
            Ok((cert, s)) => {
                state = Some(s);
                out.push(Ok(cert));
            }
            Err(e) => out.push(Err(e)),
        }
    }
    Ok(out)
}

/// Writes the sweep table:
/// `rho_raw,rho_normalized,family,worst_case_loss,gamma_opt,mean_sq_distortion,converged`.
pub fn write_sweep_csv(path: &Path, certs: &[Certificate]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "rho_raw,rho_normalized,family,worst_case_loss,gamma_opt,mean_sq_distortion,converged"
    )?;
    for c in certs {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.radius.raw,
            c.radius.normalized,
            c.loss_family.name(),
            c.worst_case_loss,
            c.gamma_opt,
            c.mean_sq_distortion,
            c.converged
        )?;
    }
    Ok(crate::util::atomic_write(path, &out)?)
}
