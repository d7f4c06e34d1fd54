//! The shared training engine behind both the vanilla domain-generalization
//! baselines and their distributionally robust counterparts.
//!
//! One loop serves every configuration: each batch is assembled from a fixed
//! per-domain quota, the per-point perturbation buffers take a few ascent
//! steps on the penalized surrogate (skipped entirely when the robust weight
//! is zero), and the model descends the total objective
//!
//! ```text
//!   loss_total = loss_robust + regularizer(method)
//! ```
//!
//! where `loss_robust` is the batch mean of `max(perturbed, clean)` loss per
//! point. With `f = 0` the perturbation machinery is bypassed and
//! `loss_robust` is exactly the clean classification loss, so the robust
//! trainer at `f = 0` reproduces the vanilla trainer bit for bit.
//!
//! All randomness is derived from the configured seed plus structural tags
//! (epoch index, domain ordinal), never from global state, so a fixed seed
//! yields a byte-identical trajectory and a resumed run continues exactly
//! where the interrupted one left off.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{measure_unit, RHO_ADV_SAMPLE_CAP};
use crate::certify::{concavity_floor, CertConfig, DIVERGENCE_CAP_PER_DIM};
use crate::domains::DomainDataset;
use crate::netcore::{
    accumulate_head, backward, dloss_dlogits, forward_rep, forward_rep_cached, grad_loss_z, loss,
    input_gradient, rep_backprop, sgd_update, LabeledPoint, LossFamily, ModelGrads, ModelParams,
    ModelShape, RepCache, RepPoint,
};
use crate::util::{atomic_write, axpy, derive_seed_str, matvec_t, norm_sq};
use crate::{Error, Result};

use super::methods::{disc_label, make_discriminators, wm_loss, DGMethod};

/// Checkpoint format version for [`TrainState`].
pub const TRAIN_STATE_VERSION: u32 = 1;

/// Configuration of the robust domain-generalization trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DRDGConfig {
    /// Robustness weight: the per-epoch ball radius is `f` times the measured
    /// adversarial unit distance. `0` disables the robust term.
    pub f: f64,
    /// SGD learning rate for the model (and the discriminators, if any).
    pub eta: f64,
    /// Number of passes over the training sample.
    pub epochs: usize,
    /// Domain-generalization objective trained alongside the robust loss.
    pub dg: DGMethod,
    /// Inner-solver settings: ascent steps `t2` and rate `alpha_step` drive
    /// the perturbation buffers, `beta_step`/`gamma_*` drive the shared
    /// multiplier, `batch` is the total batch size, `seed` fixes all
    /// randomness, and `track_perturbations` keeps buffers across epochs.
    pub inner: CertConfig,
    /// When `true`, the clean classification loss is added on top of the
    /// robust loss (the "full objective" reading of the method term). The
    /// default keeps the robust loss as the sole classification term so that
    /// `f = 0` coincides with the vanilla trainer.
    pub dg_includes_source_loss: bool,
}

impl Default for DRDGConfig {
    fn default() -> Self {
        DRDGConfig {
            f: 0.5,
            eta: 0.05,
            epochs: 100,
            dg: DGMethod::Erm,
            inner: CertConfig::default(),
            dg_includes_source_loss: false,
        }
    }
}

impl DRDGConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.f.is_finite() || self.f < 0.0 {
            return Err(Error::invalid("robustness weight f must be finite and >= 0"));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::invalid("learning rate eta must be finite and > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        self.inner.validate()?;
        self.dg.validate()
    }
}

/// Per-epoch training diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero-based epoch index.
    pub epoch: usize,
    /// Point-weighted mean clean classification loss.
    pub source_loss: f64,
    /// Point-weighted mean method-term value (alignment cost, risk-variance
    /// penalty, or adversarial discriminator score; zero for plain ERM).
    pub dg_loss: f64,
    /// Point-weighted mean robust loss `max(perturbed, clean)`.
    pub dro_loss: f64,
    /// Adversarial unit distance measured at the start of the epoch
    /// (zero when the robust term is disabled).
    pub rho_adv: f64,
    /// Multiplier value at the end of the epoch.
    pub gamma: f64,
    /// Total inner ascent steps taken this epoch.
    pub inner_steps: usize,
}

/// The full sequence of per-epoch records, with a CSV writer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn total_inner_steps(&self) -> usize {
        self.records.iter().map(|r| r.inner_steps).sum()
    }

    /// Writes `epoch,source_loss,dg_loss,dro_loss,rho_adv,gamma` rows.
    /// Numbers are printed with the shortest representation that round-trips,
    /// so the file is a lossless record of the run.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,source_loss,dg_loss,dro_loss,rho_adv,gamma\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.source_loss, r.dg_loss, r.dro_loss, r.rho_adv, r.gamma
            ));
        }
        Ok(atomic_write(path, out.as_bytes())?)
    }
}

/// Resumable snapshot of a training run, taken between epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub version: u32,
    /// Index of the next epoch to run.
    pub next_epoch: usize,
    pub params: ModelParams,
    /// Per-domain discriminators (empty unless the method trains any).
    pub discs: Vec<ModelParams>,
    /// Current multiplier of the inner ascent.
    pub gamma: f64,
    /// Per-domain perturbation buffers, keyed by domain id, one vector per
    /// training point in dataset order.
    pub deltas: BTreeMap<String, Vec<Vec<f64>>>,
    pub records: Vec<EpochRecord>,
}

impl TrainState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        Ok(atomic_write(path, &bytes)?)
    }

    pub fn load(path: &Path) -> Result<TrainState> {
        let bytes = std::fs::read(path)?;
        let state: TrainState = serde_json::from_slice(&bytes)?;
        if state.version != TRAIN_STATE_VERSION {
            return Err(Error::invalid(format!(
                "training state version {} is not supported (expected {})",
                state.version, TRAIN_STATE_VERSION
            )));
        }
        Ok(state)
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Trained per-domain discriminators (empty unless the method uses them).
    pub discs: Vec<ModelParams>,
    pub log: TrainingLog,
    /// Snapshot after the final epoch; feeding it back resumes a longer run.
    pub state: TrainState,
}

/// Trains a model on the source domains with the given method and no robust
/// term. Equivalent to [`dr_dg_train`] with `f = 0`.
pub fn vanilla_train(
    data: &DomainDataset,
    dg: &DGMethod,
    eta: f64,
    epochs: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    let cfg = DRDGConfig {
        f: 0.0,
        eta,
        epochs,
        dg: dg.clone(),
        inner: CertConfig {
            seed,
            ..CertConfig::default()
        },
        dg_includes_source_loss: false,
    };
    dr_dg_train(data, &cfg)
}

/// Trains with the desk-scale default architecture.
pub fn dr_dg_train(data: &DomainDataset, cfg: &DRDGConfig) -> Result<TrainOutcome> {
    let dim = data
        .dim()
        .ok_or_else(|| Error::invalid("training data has no points"))?;
    let shape = ModelShape::desk_default(dim, data.n_classes());
    dr_dg_train_with(data, cfg, &shape, None)
}

/// Full-control variant: explicit architecture and an optional state to
/// resume from. Resuming a run and letting it finish produces byte-identical
/// results to the uninterrupted run with the same configuration.
pub fn dr_dg_train_with(
    data: &DomainDataset,
    cfg: &DRDGConfig,
    shape: &ModelShape,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let dim = data.dim().expect("validated dataset has points");
    let n_classes = data.n_classes();
    if n_classes < 2 {
        return Err(Error::invalid("training data must contain at least 2 classes"));
    }
    if shape.input_dim != dim {
        return Err(Error::invalid(format!(
            "model expects input dimension {}, data has {}",
            shape.input_dim, dim
        )));
    }
    if shape.n_classes != n_classes {
        return Err(Error::invalid(format!(
            "model has {} classes, data has {}",
            shape.n_classes, n_classes
        )));
    }

    let ids: Vec<String> = data.domains.keys().cloned().collect();
    let points: Vec<&Vec<LabeledPoint>> = ids.iter().map(|id| &data.domains[id]).collect();
    let n_domains = ids.len();
    let seed = cfg.inner.seed;
    let family = LossFamily::CrossEntropy;

    let (mut params, mut discs, mut gamma, mut deltas, mut records, start_epoch) = match resume {
        Some(state) => {
            validate_resume(&state, cfg, shape, &ids, &points)?;
            (
                state.params,
                state.discs,
                state.gamma,
                state.deltas,
                state.records,
                state.next_epoch,
            )
        }
        None => {
            let params = ModelParams::init(shape, derive_seed_str(seed, "model-init"))?;
            let discs = match &cfg.dg {
                DGMethod::G2dm { disc_hidden } => make_discriminators(
                    n_domains,
                    shape.rep_dim,
                    *disc_hidden,
                    derive_seed_str(seed, "disc-init"),
                )?,
                _ => Vec::new(),
            };
            let deltas: BTreeMap<String, Vec<Vec<f64>>> = ids
                .iter()
                .zip(&points)
                .map(|(id, pts)| (id.clone(), vec![vec![0.0; shape.rep_dim]; pts.len()]))
                .collect();
            (params, discs, cfg.inner.gamma_init, deltas, Vec::new(), 0)
        }
    };

    // Per-domain batch quota: every domain contributes up to `q` points per
    // batch, so batches stay domain-balanced even for unequal domain sizes.
    let q = (cfg.inner.batch / n_domains).max(1);
    let distortion_cap = DIVERGENCE_CAP_PER_DIM * shape.rep_dim as f64;

    for epoch in start_epoch..cfg.epochs {
        // Shuffle each domain with a seed keyed by its ordinal so that two
        // domains with identical contents are batched identically.
        let mut order: Vec<Vec<usize>> = Vec::with_capacity(n_domains);
        for ordinal in 0..n_domains {
            let n_k = points[ordinal].len();
            let mut idx: Vec<usize> = (0..n_k).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(
                seed,
                &format!("epoch/{epoch}/domain/{ordinal}"),
            ));
            for i in (1..n_k).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            order.push(idx);
        }
        let n_batches = order
            .iter()
            .map(|o| o.len().div_ceil(q))
            .max()
            .expect("at least one domain");

        // Measure the adversarial unit on the current representations and set
        // this epoch's ball radius.
        let mut rho_adv = 0.0;
        let mut rho_sq = 0.0;
        if cfg.f > 0.0 {
            let mut pooled = Vec::with_capacity(data.n_points());
            for pts in &points {
                for p in pts.iter() {
                    pooled.push(RepPoint {
                        z: forward_rep(&params, &p.x)?,
                        y: p.y,
                    });
                }
            }
            match measure_unit(
                &params.head,
                &pooled,
                RHO_ADV_SAMPLE_CAP,
                derive_seed_str(seed, &format!("rho-adv/{epoch}")),
            ) {
                Ok((unit, _)) => {
                    rho_adv = unit;
                    let rho = cfg.f * unit;
                    rho_sq = rho * rho;
                }
                Err(Error::DegenerateHead) => {
                    log::warn!(
                        "epoch {epoch}: head cannot be attacked (degenerate rows); epoch skipped"
                    );
                    continue;
                }
                Err(e) => return Err(e),
            }
            if !cfg.inner.track_perturbations {
                for buf in deltas.values_mut() {
                    for v in buf.iter_mut() {
                        v.iter_mut().for_each(|x| *x = 0.0);
                    }
                }
            }
        }

        let mut sum_source = 0.0;
        let mut sum_dg = 0.0;
        let mut sum_dro = 0.0;
        let mut n_seen = 0usize;
        let mut inner_steps = 0usize;

        for b in 0..n_batches {
            // Assemble the batch in (domain ordinal, chunk position) order.
            let mut members: Vec<(usize, usize)> = Vec::new();
            for (ordinal, o) in order.iter().enumerate() {
                let lo = b * q;
                if lo < o.len() {
                    let hi = ((b + 1) * q).min(o.len());
                    members.extend(o[lo..hi].iter().map(|&i| (ordinal, i)));
                }
            }
            if members.is_empty() {
                continue;
            }
            let nb = members.len();
            let scale = 1.0 / nb as f64;

            // Forward pass: representations and clean losses.
            let mut reps: Vec<Vec<f64>> = Vec::with_capacity(nb);
            let mut caches: Vec<RepCache> = Vec::with_capacity(nb);
            let mut clean_losses: Vec<f64> = Vec::with_capacity(nb);
            for &(k, i) in &members {
                let p = &points[k][i];
                let (rep, cache) = forward_rep_cached(&params, &p.x)?;
                clean_losses.push(loss(&params.head, &rep, p.y, &family)?);
                reps.push(rep);
                caches.push(cache);
            }
            let clean_mean = clean_losses.iter().sum::<f64>() * scale;

            // Inner ascent on the perturbation buffers, then the multiplier
            // step toward the complementary-slackness condition.
            if cfg.f > 0.0 {
                let floor = concavity_floor(&params.head).max(cfg.inner.gamma_min);
                if floor > cfg.inner.gamma_max {
                    return Err(Error::invalid(format!(
                        "multiplier floor {floor:.6e} required for a concave surrogate exceeds \
                         the configured maximum {:.6e}",
                        cfg.inner.gamma_max
                    )));
                }
                gamma = gamma.clamp(floor, cfg.inner.gamma_max);
                let mut mean_sq = 0.0;
                for (m, &(k, i)) in members.iter().enumerate() {
                    let p = &points[k][i];
                    let delta = &mut deltas
                        .get_mut(&ids[k])
                        .expect("delta buffers cover all domains")[i];
                    for _ in 0..cfg.inner.t2 {
                        let z: Vec<f64> = reps[m]
                            .iter()
                            .zip(delta.iter())
                            .map(|(r, d)| r + d)
                            .collect();
                        let mut g = grad_loss_z(&params.head, &z, p.y, &family)?;
                        for (gd, dd) in g.iter_mut().zip(delta.iter()) {
                            *gd -= 2.0 * gamma * dd;
                        }
                        let step = cfg.inner.alpha_step.min(0.5 / gamma);
                        axpy(delta, step, &g);
                        let d2 = norm_sq(delta);
                        if d2 > distortion_cap {
                            return Err(Error::UnboundedSurrogate {
                                distortion_sq: d2,
                                cap: distortion_cap,
                            });
                        }
                    }
                    inner_steps += cfg.inner.t2;
                    mean_sq += norm_sq(delta) * scale;
                }
                gamma = (gamma - cfg.inner.beta_step * (rho_sq - mean_sq))
                    .clamp(floor, cfg.inner.gamma_max);
            }

            let mut grads = ModelGrads::zeros_like(&params);
            // Per-point representation cotangents, accumulated across the
            // robust term and the method term, then pushed through the
            // representation network once per point.
            let mut cots: Vec<Vec<f64>> = vec![vec![0.0; shape.rep_dim]; nb];

            // Robust classification term: per point, the larger of the
            // perturbed and clean loss (so the term never dips below the
            // clean batch loss), with the gradient taken at the chosen point.
            let mut batch_dro = 0.0;
            for (m, &(k, i)) in members.iter().enumerate() {
                let p = &points[k][i];
                let (z_used, l_used) = if cfg.f > 0.0 {
                    let delta = &deltas[&ids[k]][i];
                    let z: Vec<f64> = reps[m]
                        .iter()
                        .zip(delta.iter())
                        .map(|(r, d)| r + d)
                        .collect();
                    let lp = loss(&params.head, &z, p.y, &family)?;
                    if lp >= clean_losses[m] {
                        (z, lp)
                    } else {
                        (reps[m].clone(), clean_losses[m])
                    }
                } else {
                    (reps[m].clone(), clean_losses[m])
                };
                batch_dro += l_used * scale;
                let logits = params.head.logits(&z_used)?;
                let dl = dloss_dlogits(&logits, p.y, &family)?;
                accumulate_head(&mut grads, &params.head, &z_used, &dl, scale);
                let cot = matvec_t(&params.head.weights, n_classes, shape.rep_dim, &dl);
                axpy(&mut cots[m], scale, &cot);
            }

            let mut batch_dg = 0.0;
            if cfg.dg_includes_source_loss {
                batch_dg += clean_mean;
                for (m, &(k, i)) in members.iter().enumerate() {
                    let p = &points[k][i];
                    let logits = params.head.logits(&reps[m])?;
                    let dl = dloss_dlogits(&logits, p.y, &family)?;
                    accumulate_head(&mut grads, &params.head, &reps[m], &dl, scale);
                    let cot = matvec_t(&params.head.weights, n_classes, shape.rep_dim, &dl);
                    axpy(&mut cots[m], scale, &cot);
                }
            }

            // Method term, evaluated on the clean representations.
            match &cfg.dg {
                DGMethod::Erm => {}
                DGMethod::Wm { lambda } => {
                    let mut dom_reps: Vec<Vec<RepPoint>> = vec![Vec::new(); n_domains];
                    let mut dom_pos: Vec<Vec<usize>> = vec![Vec::new(); n_domains];
                    for (m, &(k, i)) in members.iter().enumerate() {
                        dom_reps[k].push(RepPoint {
                            z: reps[m].clone(),
                            y: points[k][i].y,
                        });
                        dom_pos[k].push(m);
                    }
                    let live = dom_reps.iter().filter(|d| !d.is_empty()).count();
                    if live >= 2 {
                        let term = wm_loss(&dom_reps, *lambda)?;
                        batch_dg += term.value;
                        for (k, pos) in dom_pos.iter().enumerate() {
                            for (t, &m) in pos.iter().enumerate() {
                                axpy(&mut cots[m], 1.0, &term.grads[k][t]);
                            }
                        }
                    }
                }
                DGMethod::Vrex { beta } => {
                    let mut dom_members: Vec<Vec<usize>> = vec![Vec::new(); n_domains];
                    for (m, &(k, _)) in members.iter().enumerate() {
                        dom_members[k].push(m);
                    }
                    let present: Vec<&Vec<usize>> =
                        dom_members.iter().filter(|v| !v.is_empty()).collect();
                    if present.len() >= 2 {
                        let risks: Vec<f64> = present
                            .iter()
                            .map(|ms| {
                                ms.iter().map(|&m| clean_losses[m]).sum::<f64>()
                                    / ms.len() as f64
                            })
                            .collect();
                        let nd = risks.len() as f64;
                        let mean_risk = risks.iter().sum::<f64>() / nd;
                        let var = risks
                            .iter()
                            .map(|r| (r - mean_risk).powi(2))
                            .sum::<f64>()
                            / nd;
                        batch_dg += beta * var;
                        for (ms, risk) in present.iter().zip(&risks) {
                            // d(beta * var)/d(risk_k) spread over the domain's
                            // batch members through the clean loss gradient.
                            let coeff =
                                beta * (2.0 / nd) * (risk - mean_risk) / ms.len() as f64;
                            if coeff == 0.0 {
                                continue;
                            }
                            for &m in ms.iter() {
                                let (k, i) = members[m];
                                let p = &points[k][i];
                                let logits = params.head.logits(&reps[m])?;
                                let dl = dloss_dlogits(&logits, p.y, &family)?;
                                accumulate_head(&mut grads, &params.head, &reps[m], &dl, coeff);
                                let cot =
                                    matvec_t(&params.head.weights, n_classes, shape.rep_dim, &dl);
                                axpy(&mut cots[m], coeff, &cot);
                            }
                        }
                    }
                }
                DGMethod::G2dm { .. } => {
                    // Discriminator step first: each domain's discriminator
                    // descends its own one-vs-rest cross-entropy on the
                    // current (detached) representations.
                    for (k, disc) in discs.iter_mut().enumerate() {
                        let batch_k: Vec<LabeledPoint> = members
                            .iter()
                            .zip(&reps)
                            .map(|(&(ordinal, _), rep)| LabeledPoint {
                                x: rep.clone(),
                                y: disc_label(ordinal, k),
                            })
                            .collect();
                        let (dgrads, _) = backward(disc, &batch_k, &family)?;
                        *disc = sgd_update(disc, &dgrads, cfg.eta)?;
                    }
                    // Representation step: ascend the discriminators' losses
                    // (descend their negated sum) through the representations.
                    let live = {
                        let mut seen = vec![false; n_domains];
                        for &(k, _) in &members {
                            seen[k] = true;
                        }
                        seen.iter().filter(|s| **s).count()
                    };
                    if live >= 2 {
                        let mut adv = 0.0;
                        for (k, disc) in discs.iter().enumerate() {
                            let mut l_k = 0.0;
                            for (m, &(ordinal, _)) in members.iter().enumerate() {
                                let y_k = disc_label(ordinal, k);
                                let z = forward_rep(disc, &reps[m])?;
                                l_k += loss(&disc.head, &z, y_k, &family)? * scale;
                                let gin = input_gradient(disc, &reps[m], y_k, &family)?;
                                axpy(&mut cots[m], -scale, &gin);
                            }
                            adv -= l_k;
                        }
                        batch_dg += adv;
                    }
                }
            }

            let batch_total = batch_dro + batch_dg;
            if !batch_total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }

            for (cache, cot) in caches.iter().zip(&cots) {
                rep_backprop(&params, cache, cot, 1.0, Some(&mut grads));
            }
            params = sgd_update(&params, &grads, cfg.eta)?;

            sum_source += clean_mean * nb as f64;
            sum_dg += batch_dg * nb as f64;
            sum_dro += batch_dro * nb as f64;
            n_seen += nb;
        }

        let n_seen = n_seen.max(1) as f64;
        records.push(EpochRecord {
            epoch,
            source_loss: sum_source / n_seen,
            dg_loss: sum_dg / n_seen,
            dro_loss: sum_dro / n_seen,
            rho_adv,
            gamma,
            inner_steps,
        });
    }

    let state = TrainState {
        version: TRAIN_STATE_VERSION,
        next_epoch: cfg.epochs,
        params: params.clone(),
        discs: discs.clone(),
        gamma,
        deltas,
        records: records.clone(),
    };
    Ok(TrainOutcome {
        params,
        discs,
        log: TrainingLog {
            records: records.clone(),
        },
        state,
    })
}

fn validate_resume(
    state: &TrainState,
    cfg: &DRDGConfig,
    shape: &ModelShape,
    ids: &[String],
    points: &[&Vec<LabeledPoint>],
) -> Result<()> {
    if state.version != TRAIN_STATE_VERSION {
        return Err(Error::invalid(format!(
            "training state version {} is not supported (expected {})",
            state.version, TRAIN_STATE_VERSION
        )));
    }
    if state.next_epoch > cfg.epochs {
        return Err(Error::invalid(format!(
            "training state is already at epoch {} but only {} epochs were requested",
            state.next_epoch, cfg.epochs
        )));
    }
    state.params.validate()?;
    if state.params.input_dim() != shape.input_dim || state.params.rep_dim() != shape.rep_dim {
        return Err(Error::invalid(
            "training state architecture does not match the requested shape",
        ));
    }
    if !state.gamma.is_finite() || state.gamma <= 0.0 {
        return Err(Error::invalid("training state multiplier must be finite and > 0"));
    }
    if state.deltas.len() != ids.len() || !ids.iter().all(|id| state.deltas.contains_key(id)) {
        return Err(Error::invalid(
            "training state perturbation buffers do not cover the dataset domains",
        ));
    }
    for (id, pts) in ids.iter().zip(points) {
        let buf = &state.deltas[id];
        if buf.len() != pts.len() || buf.iter().any(|v| v.len() != shape.rep_dim) {
            return Err(Error::invalid(format!(
                "training state perturbation buffer for domain {id} has the wrong shape"
            )));
        }
    }
    if let DGMethod::G2dm { .. } = cfg.dg {
        if state.discs.len() != ids.len() {
            return Err(Error::invalid(format!(
                "training state has {} discriminators, dataset has {} domains",
                state.discs.len(),
                ids.len()
            )));
        }
        for d in &state.discs {
            d.validate()?;
        }
    }
    Ok(())
}

/// Fraction of points whose predicted class matches the label, pooled over
/// all domains of the dataset.
pub fn accuracy(params: &ModelParams, data: &DomainDataset) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for pts in data.domains.values() {
        for p in pts {
            let rep = forward_rep(params, &p.x)?;
            if params.head.predict(&rep)? == p.y {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid("cannot score an empty dataset"));
    }
    Ok(correct as f64 / total as f64)
}

/// Mean classification loss of a model over the pooled dataset.
pub fn mean_loss(params: &ModelParams, data: &DomainDataset, family: &LossFamily) -> Result<f64> {
    let mut sum = 0.0;
    let mut total = 0usize;
    for pts in data.domains.values() {
        for p in pts {
            let rep = forward_rep(params, &p.x)?;
            sum += loss(&params.head, &rep, p.y, family)?;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid("cannot score an empty dataset"));
    }
    Ok(sum / total as f64)
}
