//! Shared fixtures and numeric helpers for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dgcert::netcore::{LabeledPoint, LinearHead, RepPoint};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Random head with rows drawn uniformly; regenerated until no two class
/// rows coincide, so margins are well defined.
pub fn random_head(rng: &mut ChaCha8Rng, n_classes: usize, rep_dim: usize) -> LinearHead {
    loop {
        let weights = rand_vec(rng, n_classes * rep_dim, 1.0);
        let bias = rand_vec(rng, n_classes, 0.5);
        let head = LinearHead::new(n_classes, rep_dim, weights, bias).expect("head");
        let distinct = (0..n_classes).all(|a| {
            (a + 1..n_classes).all(|b| {
                head.row(a)
                    .iter()
                    .zip(head.row(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    > 1e-2
            })
        });
        if distinct {
            return head;
        }
    }
}

pub fn random_rep_points(
    rng: &mut ChaCha8Rng,
    n: usize,
    rep_dim: usize,
    n_classes: usize,
    scale: f64,
) -> Vec<RepPoint> {
    (0..n)
        .map(|_| RepPoint {
            z: rand_vec(rng, rep_dim, scale),
            y: rng.gen_range(0..n_classes),
        })
        .collect()
}

pub fn random_labeled_points(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    n_classes: usize,
    scale: f64,
) -> Vec<LabeledPoint> {
    (0..n)
        .map(|_| LabeledPoint {
            x: rand_vec(rng, dim, scale),
            y: rng.gen_range(0..n_classes),
        })
        .collect()
}

/// Relative error against the larger magnitude, floored at 1 so tiny values
/// are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Symmetric central difference of a scalar function.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Gaussian direction of unit Euclidean norm.
pub fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        // Box-Muller pairs; rejection keeps the norm well away from zero.
        let mut v: Vec<f64> = (0..d)
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}
