//! Every analytic gradient in the crate is checked against central finite
//! differences on seeded random probes: the classification losses with
//! respect to representations, inputs, and all model parameters; the
//! penalized surrogate; the alignment term's envelope gradients; the
//! risk-variance penalty; and the domain discriminators.

mod common;

use common::{central_diff, random_head, random_labeled_points, random_rep_points, rel_err, rng};
use rand::Rng;

use dgcert::certify::surrogate_value;
use dgcert::dgtrain::{make_discriminators, vrex_loss, wm_loss};
use dgcert::netcore::{
    backward, forward_rep, grad_loss_z, input_gradient, loss, LabeledPoint, LinearHead,
    LossFamily, ModelGrads, ModelParams, ModelShape, RepPoint,
};

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

/// True when every competing margin is far enough from the hinge kink and
/// from argmax ties for a central difference with step `H` to be valid.
fn hinge_safe(head: &LinearHead, z: &[f64], y: usize) -> bool {
    let logits = head.logits(z).expect("logits");
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for (k, &l) in logits.iter().enumerate() {
        if k == y {
            continue;
        }
        if l > best {
            second = best;
            best = l;
        } else if l > second {
            second = l;
        }
    }
    let t = logits[y] - best;
    (t - 1.0).abs() > 1e-3 && (second == f64::NEG_INFINITY || best - second > 1e-3)
}

fn draw_safe_rep(
    r: &mut rand_chacha::ChaCha8Rng,
    head: &LinearHead,
    n_classes: usize,
) -> RepPoint {
    loop {
        let p = random_rep_points(r, 1, head.rep_dim, n_classes, 2.0).remove(0);
        if hinge_safe(head, &p.z, p.y) {
            return p;
        }
    }
}

#[test]
fn loss_gradients_wrt_representation_match_finite_differences() {
    let families = [
        LossFamily::CrossEntropy,
        LossFamily::ModifiedHinge { alpha: 0.1 },
    ];
    for probe in 0..50u64 {
        let mut r = rng(1000 + probe);
        let n_classes = r.gen_range(2..=4);
        let rep_dim = r.gen_range(2..=4);
        let head = random_head(&mut r, n_classes, rep_dim);
        for family in &families {
            let p = draw_safe_rep(&mut r, &head, n_classes);
            let analytic = grad_loss_z(&head, &p.z, p.y, family).expect("grad");
            for c in 0..rep_dim {
                let numeric = central_diff(
                    |v| {
                        let mut z = p.z.clone();
                        z[c] = v;
                        loss(&head, &z, p.y, family).expect("loss")
                    },
                    p.z[c],
                    H,
                );
                assert!(
                    rel_err(analytic[c], numeric) < TOL,
                    "probe {probe} {family:?} coord {c}: analytic {} vs numeric {}",
                    analytic[c],
                    numeric
                );
            }
        }
    }
}

#[test]
fn logit_gradients_match_through_identity_head() {
    // With W = I and b = 0 the logits are the representation itself, so this
    // checks the raw d(loss)/d(logits) of both families.
    for probe in 0..50u64 {
        let mut r = rng(2000 + probe);
        let k = r.gen_range(2..=4);
        let mut weights = vec![0.0; k * k];
        for i in 0..k {
            weights[i * k + i] = 1.0;
        }
        let head = LinearHead::new(k, k, weights, vec![0.0; k]).expect("identity head");
        for family in &[
            LossFamily::CrossEntropy,
            LossFamily::ModifiedHinge { alpha: 0.1 },
        ] {
            let p = draw_safe_rep(&mut r, &head, k);
            let analytic = grad_loss_z(&head, &p.z, p.y, family).expect("grad");
            for c in 0..k {
                let numeric = central_diff(
                    |v| {
                        let mut z = p.z.clone();
                        z[c] = v;
                        loss(&head, &z, p.y, family).expect("loss")
                    },
                    p.z[c],
                    H,
                );
                assert!(
                    rel_err(analytic[c], numeric) < TOL,
                    "probe {probe} {family:?} logit {c}: {} vs {numeric}",
                    analytic[c]
                );
            }
        }
    }
}

/// Addresses of every scalar parameter in a model.
#[derive(Clone, Copy)]
enum Slot {
    LayerW(usize, usize),
    LayerB(usize, usize),
    HeadW(usize),
    HeadB(usize),
}

fn all_slots(params: &ModelParams) -> Vec<Slot> {
    let mut slots = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        slots.extend((0..layer.weights.len()).map(|i| Slot::LayerW(l, i)));
        slots.extend((0..layer.bias.len()).map(|i| Slot::LayerB(l, i)));
    }
    slots.extend((0..params.head.weights.len()).map(Slot::HeadW));
    slots.extend((0..params.head.bias.len()).map(Slot::HeadB));
    slots
}

fn bumped(params: &ModelParams, slot: Slot, h: f64) -> ModelParams {
    let mut out = params.clone();
    match slot {
        Slot::LayerW(l, i) => out.layers[l].weights[i] += h,
        Slot::LayerB(l, i) => out.layers[l].bias[i] += h,
        Slot::HeadW(i) => out.head.weights[i] += h,
        Slot::HeadB(i) => out.head.bias[i] += h,
    }
    out
}

fn grad_at(grads: &ModelGrads, slot: Slot) -> f64 {
    match slot {
        Slot::LayerW(l, i) => grads.layers[l].weights[i],
        Slot::LayerB(l, i) => grads.layers[l].bias[i],
        Slot::HeadW(i) => grads.head_weights[i],
        Slot::HeadB(i) => grads.head_bias[i],
    }
}

fn mean_batch_loss(params: &ModelParams, batch: &[LabeledPoint], family: &LossFamily) -> f64 {
    let mut sum = 0.0;
    for p in batch {
        let rep = forward_rep(params, &p.x).expect("forward");
        sum += loss(&params.head, &rep, p.y, family).expect("loss");
    }
    sum / batch.len() as f64
}

fn batch_hinge_safe(params: &ModelParams, batch: &[LabeledPoint]) -> bool {
    batch.iter().all(|p| {
        let rep = forward_rep(params, &p.x).expect("forward");
        hinge_safe(&params.head, &rep, p.y)
    })
}

#[test]
fn full_model_gradients_match_finite_differences() {
    // Relu kinks make parameter-space finite differences fragile when a
    // pre-activation sits near zero; a slightly larger tolerance absorbs the
    // occasional near-kink crossing while still catching systematic errors.
    for probe in 0..50u64 {
        let mut r = rng(3000 + probe);
        let shape = ModelShape {
            input_dim: r.gen_range(2..=3),
            hidden: vec![r.gen_range(3..=5)],
            rep_dim: 2,
            n_classes: r.gen_range(2..=3),
        };
        let params = ModelParams::init(&shape, 17 * probe + 5).expect("init");
        for family in &[
            LossFamily::CrossEntropy,
            LossFamily::ModifiedHinge { alpha: 0.1 },
        ] {
            let batch = loop {
                let cand =
                    random_labeled_points(&mut r, 5, shape.input_dim, shape.n_classes, 1.5);
                if batch_hinge_safe(&params, &cand) {
                    break cand;
                }
            };
            let (analytic, mean) = backward(&params, &batch, family).expect("backward");
            assert!(mean.is_finite());
            for slot in all_slots(&params) {
                let numeric = (mean_batch_loss(&bumped(&params, slot, H), &batch, family)
                    - mean_batch_loss(&bumped(&params, slot, -H), &batch, family))
                    / (2.0 * H);
                let a = grad_at(&analytic, slot);
                assert!(
                    rel_err(a, numeric) < 5.0 * TOL,
                    "probe {probe} {family:?}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    for probe in 0..50u64 {
        let mut r = rng(4000 + probe);
        let shape = ModelShape {
            input_dim: 3,
            hidden: vec![4],
            rep_dim: 2,
            n_classes: 2,
        };
        let params = ModelParams::init(&shape, 23 * probe + 1).expect("init");
        let p = random_labeled_points(&mut r, 1, 3, 2, 1.5).remove(0);
        let family = LossFamily::CrossEntropy;
        let analytic = input_gradient(&params, &p.x, p.y, &family).expect("input grad");
        for c in 0..3 {
            let numeric = central_diff(
                |v| {
                    let mut x = p.x.clone();
                    x[c] = v;
                    let rep = forward_rep(&params, &x).expect("forward");
                    loss(&params.head, &rep, p.y, &family).expect("loss")
                },
                p.x[c],
                H,
            );
            assert!(
                rel_err(analytic[c], numeric) < 5.0 * TOL,
                "probe {probe} coord {c}: {} vs {numeric}",
                analytic[c]
            );
        }
    }
}

#[test]
fn surrogate_gradient_is_loss_gradient_minus_penalty_pull() {
    for probe in 0..50u64 {
        let mut r = rng(5000 + probe);
        let head = random_head(&mut r, 2, 2);
        let z0 = random_rep_points(&mut r, 1, 2, 2, 1.0).remove(0);
        let z = common::rand_vec(&mut r, 2, 1.5);
        let gamma = r.gen_range(0.5..3.0);
        let family = LossFamily::CrossEntropy;

        let mut analytic = grad_loss_z(&head, &z, z0.y, &family).expect("grad");
        for (g, (zi, z0i)) in analytic.iter_mut().zip(z.iter().zip(&z0.z)) {
            *g -= 2.0 * gamma * (zi - z0i);
        }
        for c in 0..2 {
            let numeric = central_diff(
                |v| {
                    let mut zz = z.clone();
                    zz[c] = v;
                    surrogate_value(&head, &z0, &zz, gamma, &family).expect("phi")
                },
                z[c],
                H,
            );
            assert!(
                rel_err(analytic[c], numeric) < TOL,
                "probe {probe} coord {c}: {} vs {numeric}",
                analytic[c]
            );
        }
    }
}

#[test]
fn alignment_envelope_gradients_match_finite_differences() {
    // The frozen-coupling gradient equals the derivative of the re-solved
    // transport value wherever the optimal plan is locally stable, which
    // holds almost surely for continuous random data.
    for probe in 0..50u64 {
        let mut r = rng(6000 + probe);
        let lambda = r.gen_range(0.0..2.0);
        let domains: Vec<Vec<RepPoint>> = (0..3)
            .map(|_| random_rep_points(&mut r, 4, 2, 2, 1.0))
            .collect();
        let term = wm_loss(&domains, lambda).expect("alignment");

        let k = r.gen_range(0..3usize);
        let i = r.gen_range(0..4usize);
        let c = r.gen_range(0..2usize);
        let numeric = central_diff(
            |v| {
                let mut moved = domains.clone();
                moved[k][i].z[c] = v;
                wm_loss(&moved, lambda).expect("alignment").value
            },
            domains[k][i].z[c],
            1e-6,
        );
        let a = term.grads[k][i][c];
        assert!(
            rel_err(a, numeric) < TOL,
            "probe {probe} domain {k} point {i} coord {c}: envelope {a} vs numeric {numeric}"
        );
    }
}

#[test]
fn risk_variance_gradient_matches_finite_differences() {
    for probe in 0..50u64 {
        let mut r = rng(7000 + probe);
        let n = r.gen_range(2..=5);
        let beta = r.gen_range(0.0..4.0);
        let risks: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
        let mean = risks.iter().sum::<f64>() / n as f64;
        for k in 0..n {
            let analytic = 1.0 / n as f64 + beta * (2.0 / n as f64) * (risks[k] - mean);
            let numeric = central_diff(
                |v| {
                    let mut rr = risks.clone();
                    rr[k] = v;
                    vrex_loss(&rr, beta).expect("penalty")
                },
                risks[k],
                H,
            );
            assert!(
                rel_err(analytic, numeric) < TOL,
                "probe {probe} risk {k}: {analytic} vs {numeric}"
            );
        }
    }
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    for probe in 0..50u64 {
        let mut r = rng(8000 + probe);
        let discs = make_discriminators(3, 2, 4, 97 * probe + 3).expect("discs");
        let disc = &discs[r.gen_range(0..3usize)];
        let family = LossFamily::CrossEntropy;
        let batch: Vec<LabeledPoint> = random_rep_points(&mut r, 6, 2, 2, 1.2)
            .into_iter()
            .map(|p| LabeledPoint { x: p.z, y: p.y })
            .collect();
        let (analytic, _) = backward(disc, &batch, &family).expect("backward");
        for slot in all_slots(disc) {
            let numeric = (mean_batch_loss(&bumped(disc, slot, H), &batch, &family)
                - mean_batch_loss(&bumped(disc, slot, -H), &batch, &family))
                / (2.0 * H);
            let a = grad_at(&analytic, slot);
            assert!(
                rel_err(a, numeric) < 5.0 * TOL,
                "probe {probe}: discriminator analytic {a} vs numeric {numeric}"
            );
        }
    }
}
