//! Adversarial reference distributions and attacks.
//!
//! The central construction: for a linear head, the closest point (in
//! Euclidean representation distance) that the head misclassifies has a
//! closed form — project onto the nearest class-pair decision hyperplane and
//! step just past it. Applying it to every source point yields the
//! adversarial reference distribution, whose label-aware 2-Wasserstein
//! distance from the source sample defines the unit `rho_adv` in which all
//! certificate radii are expressed.
//!
//! Projected gradient ascent attacks in representation and input space are
//! provided for evaluating trained models against bounded perturbations.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::netcore::{
    forward_rep, grad_loss_z, input_gradient, LinearHead, LossFamily, ModelParams, RepPoint,
};
use crate::transport::{w2_class_conditional, EmpiricalDistribution, OtMethod};
use crate::util::{atomic_write, axpy, norm, sq_dist};
use crate::{Error, Result};

/// Default fractional overshoot past the decision boundary, so attacked
/// points are strictly misclassified under float arithmetic.
pub const DEFAULT_OVERSHOOT: f64 = 1e-4;

/// Default cap on the number of source points used to measure `rho_adv`.
pub const RHO_ADV_SAMPLE_CAP: usize = 1000;

/// The adversarial counterpart of a source sample: every point moved to the
/// closest location its head misclassifies, keeping its original label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvDistribution {
    /// Attacked representations, original labels, input order preserved.
    pub points: Vec<RepPoint>,
    /// Euclidean distance each point moved.
    pub per_point_distortion: Vec<f64>,
    /// Fraction of points misclassified after the attack (1.0 for linear
    /// heads absent degeneracy).
    pub attack_success: f64,
}

impl AdvDistribution {
    /// Writes `index,y,distortion,z0,...` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let dim = self.points.first().map(|p| p.z.len()).unwrap_or(0);
        write!(out, "index,y,distortion")?;
        for d in 0..dim {
            write!(out, ",z{d}")?;
        }
        writeln!(out)?;
        for (i, (p, dist)) in self.points.iter().zip(&self.per_point_distortion).enumerate() {
            write!(out, "{i},{},{dist}", p.y)?;
            for v in &p.z {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(atomic_write(path, &out)?)
    }
}

/// A worst-case radius in both raw distance units and multiples of the
/// adversarial unit distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRadius {
    /// Distance in representation-space units.
    pub raw: f64,
    /// The unit: `rho_adv` of the model on its source sample.
    pub unit: f64,
    /// `raw / unit`.
    pub normalized: f64,
}

impl NormalizedRadius {
    pub fn from_raw(raw: f64, unit: f64) -> Result<Self> {
        Self::check(raw, unit)?;
        Ok(NormalizedRadius {
            raw,
            unit,
            normalized: raw / unit,
        })
    }

    pub fn from_normalized(normalized: f64, unit: f64) -> Result<Self> {
        Self::check(normalized, unit)?;
        Ok(NormalizedRadius {
            raw: normalized * unit,
            unit,
            normalized,
        })
    }

    fn check(value: f64, unit: f64) -> Result<()> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::invalid("radius must be finite and >= 0"));
        }
        if !(unit > 0.0 && unit.is_finite()) {
            return Err(Error::invalid("radius unit must be finite and > 0"));
        }
        Ok(())
    }
}

/// Distance from `z` to the decision boundary of a linear head, and the
/// attacked point just past it.
///
/// Over all competing classes `k != y` with positive signed margin
/// `d_k = (logit_y - logit_k) / |W_y - W_k|`, the closest hyperplane is the
/// smallest `d_k`; the attack moves `(1 + overshoot) * d_k` along its normal.
/// Already-misclassified points are returned unchanged with distortion 0.
/// Class pairs with identical weight rows can never flip and are skipped; if
/// no pair can flip, the head has no usable boundary.
pub fn closest_misclassified(
    head: &LinearHead,
    z: &[f64],
    y: usize,
    overshoot: f64,
) -> Result<(Vec<f64>, f64)> {
    if !(overshoot > 0.0 && overshoot.is_finite()) {
        return Err(Error::invalid("overshoot must be finite and > 0"));
    }
    if y >= head.n_classes {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            head.n_classes
        )));
    }
    if head.predict(z)? != y {
        return Ok((z.to_vec(), 0.0));
    }

    let logits = head.logits(z)?;
    let mut best: Option<(f64, usize, f64)> = None; // (d_k, k, |W_y - W_k|)
    for k in 0..head.n_classes {
        if k == y {
            continue;
        }
        let wy = head.row(y);
        let wk = head.row(k);
        let norm_diff = sq_dist(wy, wk).sqrt();
        if norm_diff == 0.0 {
            // Equal rows: the logit gap is constant in z, so this pair can
            // never flip (a negative constant gap would have meant z was
            // already misclassified above).
            continue;
        }
        let d = (logits[y] - logits[k]) / norm_diff;
        if d <= 0.0 {
            continue;
        }
        if best.map(|(bd, _, _)| d < bd).unwrap_or(true) {
            best = Some((d, k, norm_diff));
        }
    }

    let (d, k, norm_diff) = best.ok_or(Error::DegenerateHead)?;
    let step = (1.0 + overshoot) * d / norm_diff;
    let mut z_adv = z.to_vec();
    for (i, out) in z_adv.iter_mut().enumerate() {
        *out -= step * (head.row(y)[i] - head.row(k)[i]);
    }
    let distortion = sq_dist(&z_adv, z).sqrt();
    Ok((z_adv, distortion))
}

/// Signed distance from `z` to the nearest decision boundary, without any
/// overshoot. Zero for already-misclassified points.
///
/// This is the quantity certificates are allowed to rely on: a perturbation
/// strictly smaller than it cannot change the prediction.
pub fn boundary_distance(head: &LinearHead, z: &[f64], y: usize) -> Result<f64> {
    if head.predict(z)? != y {
        return Ok(0.0);
    }
    let logits = head.logits(z)?;
    let mut best: Option<f64> = None;
    for k in 0..head.n_classes {
        if k == y {
            continue;
        }
        let norm_diff = sq_dist(head.row(y), head.row(k)).sqrt();
        if norm_diff == 0.0 {
            continue;
        }
        let d = (logits[y] - logits[k]) / norm_diff;
        if d <= 0.0 {
            continue;
        }
        if best.map(|b| d < b).unwrap_or(true) {
            best = Some(d);
        }
    }
    best.ok_or(Error::DegenerateHead)
}

/// Attacks every point with [`closest_misclassified`], preserving order.
pub fn gen_adv_distribution(head: &LinearHead, source: &[RepPoint]) -> Result<AdvDistribution> {
    gen_adv_distribution_with(head, source, DEFAULT_OVERSHOOT)
}

pub fn gen_adv_distribution_with(
    head: &LinearHead,
    source: &[RepPoint],
    overshoot: f64,
) -> Result<AdvDistribution> {
    if source.is_empty() {
        return Err(Error::invalid("adversarial distribution needs source points"));
    }
    let attacked: Vec<(Vec<f64>, f64)> = source
        .par_iter()
        .map(|p| closest_misclassified(head, &p.z, p.y, overshoot))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(source.len());
    let mut per_point_distortion = Vec::with_capacity(source.len());
    let mut successes = 0usize;
    for (src, (z_adv, dist)) in source.iter().zip(attacked) {
        if head.predict(&z_adv)? != src.y {
            successes += 1;
        }
        points.push(RepPoint {
            z: z_adv,
            y: src.y,
        });
        per_point_distortion.push(dist);
    }
    Ok(AdvDistribution {
        points,
        per_point_distortion,
        attack_success: successes as f64 / source.len() as f64,
    })
}

/// The unit distance: label-aware 2-Wasserstein distance between a source
/// sample and its adversarial counterpart.
pub fn rho_adv(source: &[RepPoint], adv: &AdvDistribution) -> Result<f64> {
    if source.len() != adv.points.len() {
        return Err(Error::invalid(
            "source and adversarial samples must have equal size",
        ));
    }
    for (s, a) in source.iter().zip(&adv.points) {
        if s.y != a.y {
            return Err(Error::invalid(
                "adversarial points must keep their source labels",
            ));
        }
    }
    let p_s = EmpiricalDistribution::uniform(source.to_vec())?;
    let p_adv = EmpiricalDistribution::uniform(adv.points.clone())?;
    w2_class_conditional(&p_s, &p_adv, OtMethod::Auto)
}

/// Deterministic subsample of at most `cap` points (seeded shuffle, then
/// truncate); used to keep the `rho_adv` measurement desk-sized.
pub fn sample_up_to(points: &[RepPoint], cap: usize, seed: u64) -> Vec<RepPoint> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(cap);
    idx.sort_unstable(); // stable point order regardless of shuffle outcome
    idx.into_iter().map(|i| points[i].clone()).collect()
}

/// Measures the unit distance of a head on a source sample: attacks (at most
/// `cap`, seeded) points and returns the distance together with the attacked
/// sample.
pub fn measure_unit(
    head: &LinearHead,
    source: &[RepPoint],
    cap: usize,
    seed: u64,
) -> Result<(f64, AdvDistribution)> {
    let sample = sample_up_to(source, cap, seed);
    let adv = gen_adv_distribution(head, &sample)?;
    let unit = rho_adv(&sample, &adv)?;
    Ok((unit, adv))
}

/// Projected gradient ascent on the loss within the ℓ₂ ball of radius
/// `eps` around `z`. Returns the best iterate found, so the attacked loss is
/// never below the clean loss.
pub fn pgd_rep(
    head: &LinearHead,
    z: &[f64],
    y: usize,
    eps: f64,
    steps: usize,
    step_size: f64,
    family: &LossFamily,
) -> Result<Vec<f64>> {
    if !family.differentiable() {
        return Err(Error::UnsupportedLoss {
            family: "zero_one",
            what: "gradient attacks",
        });
    }
    check_pgd_args(eps, step_size)?;
    ascend(
        z,
        eps,
        steps,
        step_size,
        |pt| crate::netcore::loss(head, pt, y, family),
        |pt| grad_loss_z(head, pt, y, family),
    )
}

/// As [`pgd_rep`], but the ball lives in input space and gradients flow
/// through the representation network.
pub fn pgd_input(
    params: &ModelParams,
    x: &[f64],
    y: usize,
    eps: f64,
    steps: usize,
    step_size: f64,
    family: &LossFamily,
) -> Result<Vec<f64>> {
    if !family.differentiable() {
        return Err(Error::UnsupportedLoss {
            family: "zero_one",
            what: "gradient attacks",
        });
    }
    check_pgd_args(eps, step_size)?;
    ascend(
        x,
        eps,
        steps,
        step_size,
        |pt| {
            let rep = forward_rep(params, pt)?;
            crate::netcore::loss(&params.head, &rep, y, family)
        },
        |pt| input_gradient(params, pt, y, family),
    )
}

fn check_pgd_args(eps: f64, step_size: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid("attack radius must be finite and >= 0"));
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::invalid("attack step size must be finite and > 0"));
    }
    Ok(())
}

fn ascend(
    start: &[f64],
    eps: f64,
    steps: usize,
    step_size: f64,
    loss_at: impl Fn(&[f64]) -> Result<f64>,
    grad_at: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if eps == 0.0 {
        return Ok(start.to_vec());
    }
    let mut cur = start.to_vec();
    let mut best = cur.clone();
    let mut best_loss = loss_at(&cur)?;
    for _ in 0..steps {
        let g = grad_at(&cur)?;
        if norm(&g) == 0.0 {
            break;
        }
        axpy(&mut cur, step_size, &g);
        project_ball(&mut cur, start, eps);
        let l = loss_at(&cur)?;
        if l > best_loss {
            best_loss = l;
            best = cur.clone();
        }
    }
    Ok(best)
}

fn project_ball(point: &mut [f64], center: &[f64], eps: f64) {
    let mut d2 = 0.0;
    for (p, c) in point.iter().zip(center) {
        d2 += (p - c) * (p - c);
    }
    let d = d2.sqrt();
    if d > eps {
        let scale = eps / d;
        for (p, c) in point.iter_mut().zip(center) {
            *p = c + (*p - c) * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_head() -> LinearHead {
        // W0 = (1,0), W1 = (-1,0), b = 0: boundary is the x=0 hyperplane.
        LinearHead {
            n_classes: 2,
            rep_dim: 2,
            weights: vec![1.0, 0.0, -1.0, 0.0],
            bias: vec![0.0, 0.0],
        }
    }

    #[test]
    fn attack_walks_to_the_boundary_and_past_it() {
        let head = two_class_head();
        let (z_adv, dist) = closest_misclassified(&head, &[2.0, 0.0], 0, 1e-4).unwrap();
        assert!((dist - 2.0).abs() < 1e-3, "distortion {dist}");
        assert!(z_adv[0] < 0.0, "crossed the boundary: {z_adv:?}");
        assert!(z_adv[1].abs() < 1e-12);
        assert_ne!(head.predict(&z_adv).unwrap(), 0);
    }

    #[test]
    fn attack_leaves_misclassified_points_alone() {
        let head = two_class_head();
        let (z_adv, dist) = closest_misclassified(&head, &[-1.0, 0.5], 0, 1e-4).unwrap();
        assert_eq!(z_adv, vec![-1.0, 0.5]);
        assert_eq!(dist, 0.0);
    }

    #[test]
    fn boundary_distance_has_no_overshoot() {
        let head = two_class_head();
        let d = boundary_distance(&head, &[2.0, 0.0], 0).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(boundary_distance(&head, &[-1.0, 0.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn identical_rows_are_skipped_and_fully_degenerate_heads_error() {
        // Three classes; class 2 duplicates class 0, class 1 differs.
        let head = LinearHead {
            n_classes: 3,
            rep_dim: 1,
            weights: vec![1.0, -1.0, 1.0],
            bias: vec![0.0, 0.0, 0.0],
        };
        let (_, dist) = closest_misclassified(&head, &[3.0], 0, 1e-4).unwrap();
        assert!((dist - 3.0 * (1.0 + 1e-4)).abs() < 1e-9);

        let flat = LinearHead {
            n_classes: 2,
            rep_dim: 1,
            weights: vec![1.0, 1.0],
            bias: vec![0.5, 0.0],
        };
        // Prediction is class 0 everywhere (higher bias) and no movement can
        // change it.
        assert!(matches!(
            closest_misclassified(&flat, &[0.0], 0, 1e-4),
            Err(Error::DegenerateHead)
        ));
    }

    #[test]
    fn adv_distribution_succeeds_everywhere_and_preserves_order() {
        let head = two_class_head();
        let source = vec![
            RepPoint { z: vec![2.0, 0.0], y: 0 },
            RepPoint { z: vec![-3.0, 1.0], y: 1 },
            RepPoint { z: vec![0.5, -1.0], y: 0 },
        ];
        let adv = gen_adv_distribution(&head, &source).unwrap();
        assert_eq!(adv.attack_success, 1.0);
        assert!((adv.per_point_distortion[0] - 2.0).abs() < 1e-3);
        for (p, d) in adv.points.iter().zip(&adv.per_point_distortion) {
            assert_ne!(head.predict(&p.z).unwrap(), p.y);
            assert!(*d >= 0.0);
        }
        assert_eq!(adv.points[1].y, 1);
    }

    #[test]
    fn pre_misclassified_sources_give_zero_distortions_and_zero_unit() {
        let head = two_class_head();
        let source = vec![
            RepPoint { z: vec![-1.0, 0.0], y: 0 },
            RepPoint { z: vec![2.0, 0.0], y: 1 },
        ];
        let adv = gen_adv_distribution(&head, &source).unwrap();
        assert_eq!(adv.per_point_distortion, vec![0.0, 0.0]);
        assert_eq!(rho_adv(&source, &adv).unwrap(), 0.0);
    }

    #[test]
    fn unit_of_single_point_is_its_distortion() {
        let head = two_class_head();
        let source = vec![RepPoint { z: vec![2.0, 0.0], y: 0 }];
        let adv = gen_adv_distribution(&head, &source).unwrap();
        let unit = rho_adv(&source, &adv).unwrap();
        assert!((unit - adv.per_point_distortion[0]).abs() < 1e-9);
    }

    #[test]
    fn unit_is_bounded_by_identity_coupling() {
        let head = two_class_head();
        let source = vec![
            RepPoint { z: vec![2.0, 0.3], y: 0 },
            RepPoint { z: vec![0.7, -0.4], y: 0 },
            RepPoint { z: vec![-1.5, 0.2], y: 1 },
            RepPoint { z: vec![-0.2, 0.9], y: 1 },
        ];
        let adv = gen_adv_distribution(&head, &source).unwrap();
        let unit = rho_adv(&source, &adv).unwrap();
        let mean_sq: f64 = adv
            .per_point_distortion
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            / source.len() as f64;
        assert!(unit <= mean_sq.sqrt() + 1e-9);
    }

    #[test]
    fn subsample_is_deterministic_and_capped() {
        let points: Vec<RepPoint> = (0..50)
            .map(|i| RepPoint { z: vec![i as f64], y: i % 2 })
            .collect();
        let a = sample_up_to(&points, 10, 42);
        let b = sample_up_to(&points, 10, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let all = sample_up_to(&points, 100, 42);
        assert_eq!(all.len(), 50);
    }

    #[test]
    fn pgd_rep_zero_radius_is_identity() {
        let head = two_class_head();
        let z = vec![1.0, 2.0];
        let out = pgd_rep(&head, &z, 0, 0.0, 20, 0.1, &LossFamily::CrossEntropy).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn pgd_rep_matches_linear_closed_form() {
        // For a binary linear head the worst ℓ₂ perturbation of radius eps
        // moves straight along the boundary normal.
        let head = two_class_head();
        let z = [1.0, 1.0];
        let eps = 0.5;
        let out = pgd_rep(&head, &z, 0, eps, 50, 0.25, &LossFamily::CrossEntropy).unwrap();
        // Normal direction of increasing loss for y=0 is W1 - W0 = (-2, 0).
        let expect = [1.0 - eps, 1.0];
        assert!((out[0] - expect[0]).abs() < 1e-9, "{out:?}");
        assert!((out[1] - expect[1]).abs() < 1e-9);
    }

    #[test]
    fn pgd_rep_never_lowers_the_loss_and_stays_in_ball() {
        let head = LinearHead {
            n_classes: 3,
            rep_dim: 2,
            weights: vec![0.8, -0.3, -0.2, 0.9, 0.1, 0.4],
            bias: vec![0.05, -0.1, 0.0],
        };
        for (i, family) in [
            LossFamily::CrossEntropy,
            LossFamily::ModifiedHinge { alpha: 0.1 },
        ]
        .iter()
        .enumerate()
        {
            for j in 0..10 {
                let z = [((i + j) as f64 * 0.37).sin(), (j as f64 * 0.71).cos()];
                let y = j % 3;
                let eps = 0.3;
                let out = pgd_rep(&head, &z, y, eps, 25, 0.05, family).unwrap();
                let clean = crate::netcore::loss(&head, &z, y, family).unwrap();
                let attacked = crate::netcore::loss(&head, &out, y, family).unwrap();
                assert!(attacked >= clean);
                assert!(sq_dist(&out, &z).sqrt() <= eps + 1e-9);
            }
        }
    }

    #[test]
    fn pgd_rejects_zero_one_family() {
        let head = two_class_head();
        assert!(matches!(
            pgd_rep(&head, &[1.0, 0.0], 0, 0.1, 5, 0.1, &LossFamily::ZeroOne),
            Err(Error::UnsupportedLoss { .. })
        ));
    }

    #[test]
    fn pgd_input_through_identity_network_matches_pgd_rep() {
        let mut weights = vec![0.0; 4];
        weights[0] = 1.0;
        weights[3] = 1.0;
        let params = ModelParams {
            layers: vec![crate::netcore::DenseLayer {
                in_dim: 2,
                out_dim: 2,
                weights,
                bias: vec![0.0, 0.0],
                activation: crate::netcore::Activation::Identity,
            }],
            head: two_class_head(),
        };
        let x = [1.0, 1.0];
        let a = pgd_input(&params, &x, 0, 0.5, 50, 0.25, &LossFamily::CrossEntropy).unwrap();
        let b = pgd_rep(&params.head, &x, 0, 0.5, 50, 0.25, &LossFamily::CrossEntropy).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn adv_csv_dump_roundtrips_basic_fields() {
        let head = two_class_head();
        let source = vec![RepPoint { z: vec![2.0, 0.0], y: 0 }];
        let adv = gen_adv_distribution(&head, &source).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adv.csv");
        adv.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "index,y,distortion,z0,z1");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,0,"));
    }
}
