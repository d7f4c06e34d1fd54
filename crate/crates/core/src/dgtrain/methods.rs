//! Domain-generalization training objectives: one-vs-all transport
//! alignment, one-vs-all domain discriminators, and risk-variance
//! regularization. Each exposes its value plus whatever the engine needs to
//! propagate gradients into the representation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netcore::{xavier, Activation, DenseLayer, LinearHead, LossFamily, ModelParams, RepPoint};
use crate::transport::{
    cost_matrix_joint, exact_ot, sinkhorn, EmpiricalDistribution, TransportPlan, DEFAULT_SINKHORN_EPSILON,
    DEFAULT_SINKHORN_MAX_ITERS, DEFAULT_SINKHORN_TOL, EXACT_OT_CAP,
};
use crate::{Error, Result};

fn default_weight() -> f64 {
    1.0
}

fn default_disc_hidden() -> usize {
    16
}

/// Which domain-generalization objective augments the classification loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DGMethod {
    /// Plain pooled empirical risk.
    Erm,
    /// One-vs-all transport alignment of per-domain representation
    /// distributions under the joint feature+label cost; `lambda` weighs the
    /// label term of that cost.
    Wm {
        #[serde(default = "default_weight")]
        lambda: f64,
    },
    /// One-vs-all domain discriminators trained adversarially against the
    /// representation; each is a two-layer binary classifier of the given
    /// hidden width.
    G2dm {
        #[serde(default = "default_disc_hidden")]
        disc_hidden: usize,
    },
    /// Variance of per-domain risks as a regularizer, weighted by `beta`.
    Vrex {
        #[serde(default = "default_weight")]
        beta: f64,
    },
}

impl DGMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DGMethod::Erm => "erm",
            DGMethod::Wm { .. } => "wm",
            DGMethod::G2dm { .. } => "g2dm",
            DGMethod::Vrex { .. } => "vrex",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DGMethod::Erm => Ok(()),
            DGMethod::Wm { lambda } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::invalid("wm lambda must be finite and >= 0"));
                }
                Ok(())
            }
            DGMethod::G2dm { disc_hidden } => {
                if *disc_hidden == 0 {
                    return Err(Error::invalid("discriminator hidden width must be >= 1"));
                }
                Ok(())
            }
            DGMethod::Vrex { beta } => {
                if !(*beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::invalid("vrex beta must be finite and >= 0"));
                }
                Ok(())
            }
        }
    }
}

/// One-vs-all alignment value and its gradients.
#[derive(Clone, Debug)]
pub struct WmTerm {
    pub value: f64,
    /// `grads[domain][point]` is the derivative of `value` with respect to
    /// that representation; zero rows for domains that were skipped.
    pub grads: Vec<Vec<Vec<f64>>>,
}

fn solve_plan(cost: &[f64], a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<TransportPlan> {
    let wa: Vec<f64> = a.weights.clone();
    let wb: Vec<f64> = b.weights.clone();
    if cost.len() <= EXACT_OT_CAP {
        exact_ot(cost, &wa, &wb)
    } else {
        sinkhorn(
            cost,
            &wa,
            &wb,
            DEFAULT_SINKHORN_EPSILON,
            DEFAULT_SINKHORN_MAX_ITERS,
            DEFAULT_SINKHORN_TOL,
        )
    }
}

/// Sum over domains `k` of the transport cost between domain `k` and the
/// pool of the remaining domains, under the joint feature+label cost with
/// label weight `lambda`. The couplings are solved on the current (frozen)
/// cost, and the returned gradients differentiate only the feature-distance
/// part at that frozen coupling, so they are valid envelope gradients of the
/// alignment value.
///
/// Empty domains are skipped with a warning; at least two non-empty domains
/// are required.
pub fn wm_loss(domains: &[Vec<RepPoint>], lambda: f64) -> Result<WmTerm> {
    let live: Vec<usize> = (0..domains.len()).filter(|k| !domains[*k].is_empty()).collect();
    for (k, d) in domains.iter().enumerate() {
        if d.is_empty() {
            log::warn!("alignment: domain {k} absent from batch; skipped");
        }
    }
    if live.len() < 2 {
        return Err(Error::invalid(
            "alignment needs at least two non-empty domains in the batch",
        ));
    }

    let mut grads: Vec<Vec<Vec<f64>>> = domains
        .iter()
        .map(|d| d.iter().map(|p| vec![0.0; p.z.len()]).collect())
        .collect();
    let mut value = 0.0;

    for &k in &live {
        let own = EmpiricalDistribution::uniform(domains[k].clone())?;
        // Pooled rest, remembering where each point came from.
        let mut rest_points = Vec::new();
        let mut origin = Vec::new();
        for &j in &live {
            if j == k {
                continue;
            }
            for (i, p) in domains[j].iter().enumerate() {
                rest_points.push(p.clone());
                origin.push((j, i));
            }
        }
        let rest = EmpiricalDistribution::uniform(rest_points)?;
        let cost = cost_matrix_joint(&own, &rest, lambda)?;
        let plan = solve_plan(&cost, &own, &rest)?;
        value += plan.cost;

        for i in 0..plan.rows {
            for j in 0..plan.cols {
                let pi = plan.plan[i * plan.cols + j];
                if pi == 0.0 {
                    continue;
                }
                let (dj, pj) = origin[j];
                let za = &domains[k][i].z;
                let zb = &domains[dj][pj].z;
                for d in 0..za.len() {
                    let diff = za[d] - zb[d];
                    grads[k][i][d] += 2.0 * pi * diff;
                    grads[dj][pj][d] -= 2.0 * pi * diff;
                }
            }
        }
    }
    Ok(WmTerm { value, grads })
}

/// Builds one two-layer binary discriminator per source domain: a relu layer
/// from the representation to `hidden` units and a linear 2-class head.
pub fn make_discriminators(
    n_domains: usize,
    rep_dim: usize,
    hidden: usize,
    seed: u64,
) -> Result<Vec<ModelParams>> {
    if n_domains == 0 || rep_dim == 0 || hidden == 0 {
        return Err(Error::invalid("discriminator dimensions must be > 0"));
    }
    let mut out = Vec::with_capacity(n_domains);
    for k in 0..n_domains {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::util::derive_seed(seed, k as u64));
        let layer = DenseLayer {
            in_dim: rep_dim,
            out_dim: hidden,
            weights: xavier(&mut rng, rep_dim, hidden),
            bias: vec![0.0; hidden],
            activation: Activation::Relu,
        };
        let head = LinearHead {
            n_classes: 2,
            rep_dim: hidden,
            weights: xavier(&mut rng, hidden, 2),
            bias: vec![0.0; 2],
        };
        let params = ModelParams {
            layers: vec![layer],
            head,
        };
        params.validate()?;
        out.push(params);
    }
    Ok(out)
}

/// Domain label a point gets in discriminator `k`'s binary problem: points
/// of domain `k` are class 0, everything else class 1.
pub fn disc_label(point_domain: usize, disc_index: usize) -> usize {
    usize::from(point_domain != disc_index)
}

/// Discriminator-side and representation-side values of the adversarial
/// objective at the current parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct G2dmEval {
    /// Term the representation descends: minus the sum of discriminator
    /// losses (the representation profits from confusing them).
    pub adversarial: f64,
    /// Mean binary cross-entropy of each discriminator over the batch.
    pub disc_losses: Vec<f64>,
}

/// Evaluates every discriminator's mean binary cross-entropy over the pooled
/// batch and the representation-side adversarial term. A batch with fewer
/// than two non-empty domains has no domain signal: the adversarial term
/// is zero.
pub fn g2dm_losses(domains: &[Vec<RepPoint>], discs: &[ModelParams]) -> Result<G2dmEval> {
    if discs.len() != domains.len() {
        return Err(Error::invalid(format!(
            "{} discriminators for {} domains; need exactly one per domain",
            discs.len(),
            domains.len()
        )));
    }
    let n: usize = domains.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let ce = LossFamily::CrossEntropy;
    let mut disc_losses = Vec::with_capacity(discs.len());
    for (k, disc) in discs.iter().enumerate() {
        let mut mean = 0.0;
        for (dj, pts) in domains.iter().enumerate() {
            for p in pts {
                let z = crate::netcore::forward_rep(disc, &p.z)?;
                mean += crate::netcore::loss(&disc.head, &z, disc_label(dj, k), &ce)? / n as f64;
            }
        }
        disc_losses.push(mean);
    }
    let live = domains.iter().filter(|d| !d.is_empty()).count();
    let adversarial = if live < 2 {
        0.0
    } else {
        -disc_losses.iter().sum::<f64>()
    };
    Ok(G2dmEval {
        adversarial,
        disc_losses,
    })
}

/// Mean of per-domain risks plus `beta` times their population variance.
pub fn vrex_loss(risks: &[f64], beta: f64) -> Result<f64> {
    if risks.is_empty() {
        return Err(Error::invalid("risk variance needs at least one domain"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid("vrex beta must be finite and >= 0"));
    }
    let n = risks.len() as f64;
    let mean = risks.iter().sum::<f64>() / n;
    let var = risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(mean + beta * var)
}
