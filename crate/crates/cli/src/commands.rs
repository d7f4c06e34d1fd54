//! The six pipeline commands. Each one reads its inputs from the fixed
//! layout under the output directory (see [`crate::artifacts`]) and writes
//! its own artifacts there, so the pipeline is
//! `gen-data -> train -> certify -> attack -> evaluate -> report`, with
//! every stage re-runnable in isolation.

use std::collections::BTreeMap;
use std::fs;

use dgcert::adversarial::{
    measure_unit, pgd_input, pgd_rep, sample_up_to, AdvDistribution, NormalizedRadius,
    RHO_ADV_SAMPLE_CAP,
};
use dgcert::certify::{cert_01_with_unit, cert_sweep, write_sweep_csv, Certificate};
use dgcert::dgtrain::{accuracy, dr_dg_train_with, TrainState};
use dgcert::domains::{
    apply_corruption, load_csv, make_rotated_task, rotation_domain_id, save_csv, split,
    CorruptionKind, DomainDataset,
};
use dgcert::netcore::{
    forward_rep, load_checkpoint, loss, save_checkpoint, LabeledPoint, LinearHead, LossFamily,
    ModelParams, ModelShape, RepPoint,
};
use dgcert::transport::{w2_class_conditional, EmpiricalDistribution, OtMethod};
use dgcert::util::derive_seed_str;

use crate::artifacts::{
    read_eval_csv, read_json, write_eval_csv, write_json, write_pgd_csv, CertificatesDoc,
    DomainEntry, EvalRow, Manifest, OutPaths, PgdRow, SaturationReport, SplitEntry, UnitReport,
    CERTIFICATES_VERSION, MANIFEST_VERSION,
};
use crate::config::RunConfig;
use crate::render;
use crate::CliError;

// ---------------------------------------------------------------------------
// gen-data

pub fn cmd_gen_data(cfg: &RunConfig, threads: usize) -> Result<(), CliError> {
    let paths = OutPaths::new(&cfg.out_dir);
    let t = &cfg.task;

    let mut angles: Vec<f64> = t.source_angles_deg.clone();
    angles.extend(&t.unseen_angles_deg);
    let dataset = make_rotated_task(
        t.shape,
        t.n_per_domain,
        &angles,
        t.noise_sigma,
        derive_seed_str(cfg.seed, "data"),
    )?;

    let mut entries = Vec::new();
    for (id, pts) in &dataset.domains {
        let single = DomainDataset {
            domains: BTreeMap::from([(id.clone(), pts.clone())]),
            meta: BTreeMap::from([(id.clone(), dataset.meta[id].clone())]),
        };
        let path = paths.domain_csv(id);
        ensure_parent(&path)?;
        save_csv(&single, &path)?;
        let role = if t
            .source_angles_deg
            .iter()
            .any(|a| rotation_domain_id(*a) == *id)
        {
            "source"
        } else {
            "unseen"
        };
        entries.push(DomainEntry {
            id: id.clone(),
            role: role.to_string(),
            path: format!("data/{id}.csv"),
            n: pts.len(),
            angle_deg: dataset.meta[id].angle_deg,
        });
    }

    let source_ids: Vec<String> = t
        .source_angles_deg
        .iter()
        .map(|a| rotation_domain_id(*a))
        .collect();
    let sources = DomainDataset {
        domains: dataset
            .domains
            .iter()
            .filter(|(id, _)| source_ids.contains(id))
            .map(|(id, pts)| (id.clone(), pts.clone()))
            .collect(),
        meta: dataset
            .meta
            .iter()
            .filter(|(id, _)| source_ids.contains(*id))
            .map(|(id, m)| (id.clone(), m.clone()))
            .collect(),
    };
    let (train, test) = split(&sources, t.train_fraction, derive_seed_str(cfg.seed, "split"))?;
    ensure_parent(&paths.train_csv())?;
    save_csv(&train, &paths.train_csv())?;
    save_csv(&test, &paths.test_csv())?;

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        threads,
        task: t.clone(),
        domains: entries,
        splits: SplitEntry {
            train_path: "data/train.csv".to_string(),
            test_path: "data/test.csv".to_string(),
            train_fraction: t.train_fraction,
            n_train: train.n_points(),
            n_test: test.n_points(),
        },
    };
    write_json(&paths.manifest(), &manifest)?;

    println!(
        "gen-data: {} domains ({} source, {} unseen), split {}/{} train/test -> {}",
        dataset.domains.len(),
        t.source_angles_deg.len(),
        t.unseen_angles_deg.len(),
        train.n_points(),
        test.n_points(),
        cfg.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

pub fn cmd_train(cfg: &RunConfig, resume: bool, stop_after: Option<usize>) -> Result<(), CliError> {
    let paths = OutPaths::new(&cfg.out_dir);
    let data = load_csv_hint(&paths.train_csv(), "run `dgcert gen-data` first")?;

    let shape = ModelShape {
        input_dim: data
            .dim()
            .ok_or_else(|| CliError::Domain("training data has no points".into()))?,
        hidden: cfg.model.hidden.clone(),
        rep_dim: cfg.model.rep_dim,
        n_classes: data.n_classes(),
    };

    let mut tcfg = cfg.train.clone();
    if let Some(stop) = stop_after {
        if stop == 0 {
            return Err(CliError::Usage("--stop-after must be >= 1".into()));
        }
        tcfg.epochs = tcfg.epochs.min(stop);
    }

    let prior = if resume {
        Some(TrainState::load(&paths.train_state()).map_err(|e| {
            CliError::Domain(format!(
                "cannot resume from {}: {e}",
                paths.train_state().display()
            ))
        })?)
    } else {
        None
    };

    let outcome = dr_dg_train_with(&data, &tcfg, &shape, prior)?;

    ensure_parent(&paths.checkpoint())?;
    save_checkpoint(&paths.checkpoint(), &outcome.params)?;
    outcome.state.save(&paths.train_state())?;
    outcome.log.write_csv(&paths.training_log())?;

    let train_accuracy = accuracy(&outcome.params, &data)?;
    let summary = serde_json::json!({
        "method": cfg.train.dg.name(),
        "f": cfg.train.f,
        "epochs_configured": tcfg.epochs,
        "epochs_recorded": outcome.log.records.len(),
        "total_inner_steps": outcome.log.total_inner_steps(),
        "train_accuracy": train_accuracy,
        "final": outcome.log.records.last(),
    });
    write_json(&paths.train_summary(), &summary)?;

    println!(
        "train: {} epochs recorded ({} on disk resumable), train accuracy {:.4} -> {}",
        outcome.log.records.len(),
        outcome.state.next_epoch,
        train_accuracy,
        paths.checkpoint().display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared model/sample loading for certify, attack, and evaluate

/// Everything downstream of training works from one fixed evaluation sample:
/// the representations of the held-out test split, capped for unit
/// measurement. Deriving it in one place keeps the unit, the certificates,
/// and the evaluation table referring to the same empirical source
/// distribution.
struct EvalContext {
    params: ModelParams,
    head: LinearHead,
    test: DomainDataset,
    /// Capped sample of pooled test representations.
    sample: Vec<RepPoint>,
    unit: f64,
    adv: AdvDistribution,
}

fn load_context(cfg: &RunConfig, paths: &OutPaths) -> Result<EvalContext, CliError> {
    let params = load_checkpoint(&paths.checkpoint()).map_err(|e| {
        CliError::Domain(format!(
            "missing model {}: {e}; run `dgcert train` first",
            paths.checkpoint().display()
        ))
    })?;
    let test = load_csv_hint(&paths.test_csv(), "run `dgcert gen-data` first")?;
    let reps = rep_points(&params, &test)?;
    let sample = sample_up_to(&reps, RHO_ADV_SAMPLE_CAP, derive_seed_str(cfg.seed, "unit-test"));
    let head = params.head.clone();
    let (unit, adv) = measure_unit(
        &head,
        &sample,
        RHO_ADV_SAMPLE_CAP,
        derive_seed_str(cfg.seed, "unit-test"),
    )?;
    Ok(EvalContext {
        params,
        head,
        test,
        sample,
        unit,
        adv,
    })
}

// ---------------------------------------------------------------------------
// certify

pub fn cmd_certify(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = OutPaths::new(&cfg.out_dir);
    let ctx = load_context(cfg, &paths)?;

    // The unit the training loop sees is measured on the train split;
    // recorded alongside for comparison.
    let train_data = load_csv_hint(&paths.train_csv(), "run `dgcert gen-data` first")?;
    let train_reps = rep_points(&ctx.params, &train_data)?;
    let train_sample = sample_up_to(
        &train_reps,
        RHO_ADV_SAMPLE_CAP,
        derive_seed_str(cfg.seed, "unit-train"),
    );
    let (unit_train, adv_train) = measure_unit(
        &ctx.head,
        &train_sample,
        RHO_ADV_SAMPLE_CAP,
        derive_seed_str(cfg.seed, "unit-train"),
    )?;

    let radii = normalized_radii(&cfg.certify.radii_normalized, ctx.unit)?;
    let certificates = run_sweep(&ctx.head, &ctx.sample, &radii, cfg, &cfg.certify.family)?;
    let zero_one = run_sweep(&ctx.head, &ctx.sample, &radii, cfg, &LossFamily::ZeroOne)?;

    // Saturation property of the 0/1 bound: once the squared radius covers
    // the mean squared boundary distance, the certificate must be exactly 1.
    let mean_sq_boundary: f64 = ctx
        .adv
        .per_point_distortion
        .iter()
        .map(|d| d * d / ctx.adv.per_point_distortion.len() as f64)
        .sum();
    let cert01_at_unit = cert_01_with_unit(
        &ctx.head,
        &ctx.sample,
        NormalizedRadius::from_normalized(1.0, ctx.unit)?,
    )?
    .worst_case_loss;
    let condition_holds = ctx.unit * ctx.unit >= mean_sq_boundary;
    let saturation = SaturationReport {
        rho_adv_sq: ctx.unit * ctx.unit,
        mean_sq_boundary_distance: mean_sq_boundary,
        condition_holds,
        cert01_at_unit,
        consistent: !condition_holds || cert01_at_unit == 1.0,
    };

    let doc = CertificatesDoc {
        version: CERTIFICATES_VERSION,
        family: cfg.certify.family,
        unit: UnitReport {
            rho_adv: ctx.unit,
            n_points: ctx.sample.len(),
            attack_success: ctx.adv.attack_success,
            split: "test".to_string(),
        },
        unit_train: UnitReport {
            rho_adv: unit_train,
            n_points: train_sample.len(),
            attack_success: adv_train.attack_success,
            split: "train".to_string(),
        },
        certificates: certificates.clone(),
        zero_one: zero_one.clone(),
        saturation: saturation.clone(),
    };

    ensure_parent(&paths.sweep_csv())?;
    write_sweep_csv(&paths.sweep_csv(), &certificates)?;
    write_sweep_csv(&paths.sweep_zero_one_csv(), &zero_one)?;
    write_json(&paths.certificates_json(), &doc)?;

    println!(
        "certify: unit rho_adv = {:.6} on {} test points (train-split unit {:.6})",
        ctx.unit,
        ctx.sample.len(),
        unit_train
    );
    for c in &certificates {
        println!(
            "  rho = {:.3} x unit: worst-case {} loss {:.6} (gamma {:.4}, converged {})",
            c.radius.normalized,
            c.loss_family.name(),
            c.worst_case_loss,
            c.gamma_opt,
            c.converged
        );
    }
    println!(
        "  saturation: rho_adv^2 {} mean d^2 ({:.6} vs {:.6}); 0/1 bound at unit {:.6}{}",
        if condition_holds { ">=" } else { "<" },
        saturation.rho_adv_sq,
        mean_sq_boundary,
        cert01_at_unit,
        if saturation.consistent {
            ""
        } else {
            " — INCONSISTENT"
        }
    );
    Ok(())
}

fn run_sweep(
    head: &LinearHead,
    sample: &[RepPoint],
    radii: &[NormalizedRadius],
    cfg: &RunConfig,
    family: &LossFamily,
) -> Result<Vec<Certificate>, CliError> {
    let results = cert_sweep(head, sample, radii, &cfg.certify.cert, family)?;
    let mut out = Vec::with_capacity(results.len());
    for (r, res) in radii.iter().zip(results) {
        out.push(res.map_err(|e| {
            CliError::Domain(format!(
                "certifying {} at normalized radius {}: {e}",
                family.name(),
                r.normalized
            ))
        })?);
    }
    Ok(out)
}

fn normalized_radii(values: &[f64], unit: f64) -> Result<Vec<NormalizedRadius>, CliError> {
    values
        .iter()
        .map(|v| {
            NormalizedRadius::from_normalized(*v, unit).map_err(|e| {
                CliError::Domain(format!("radius {v} with unit {unit}: {e}"))
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// attack

pub fn cmd_attack(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = OutPaths::new(&cfg.out_dir);
    let ctx = load_context(cfg, &paths)?;

    ensure_parent(&paths.adv_points_csv())?;
    ctx.adv.save_csv(&paths.adv_points_csv())?;

    // PGD ascends cross-entropy regardless of the certification family: the
    // 0/1 loss has no usable gradient and the table is about attack
    // strength, not certification.
    let family = LossFamily::CrossEntropy;
    let test_points: Vec<&LabeledPoint> = ctx.test.domains.values().flatten().collect();
    let mut rows = Vec::new();
    for eps_n in &cfg.attack.eps_normalized {
        let eps = eps_n * ctx.unit;
        let step = if cfg.attack.steps > 0 {
            2.5 * eps / cfg.attack.steps as f64
        } else {
            0.0
        };

        let mut correct_rep = 0usize;
        let mut loss_rep = 0.0;
        let mut correct_in = 0usize;
        let mut loss_in = 0.0;
        for p in &test_points {
            let z0 = forward_rep(&ctx.params, &p.x)?;
            let z_adv = if eps > 0.0 {
                pgd_rep(&ctx.head, &z0, p.y, eps, cfg.attack.steps, step, &family)?
            } else {
                z0.clone()
            };
            if ctx.head.predict(&z_adv)? == p.y {
                correct_rep += 1;
            }
            loss_rep += loss(&ctx.head, &z_adv, p.y, &family)?;

            let x_adv = if eps > 0.0 {
                pgd_input(&ctx.params, &p.x, p.y, eps, cfg.attack.steps, step, &family)?
            } else {
                p.x.clone()
            };
            let z_from_input = forward_rep(&ctx.params, &x_adv)?;
            if ctx.head.predict(&z_from_input)? == p.y {
                correct_in += 1;
            }
            loss_in += loss(&ctx.head, &z_from_input, p.y, &family)?;
        }
        let n = test_points.len();
        rows.push(PgdRow {
            space: "representation".to_string(),
            eps_normalized: *eps_n,
            eps_raw: eps,
            n,
            accuracy: correct_rep as f64 / n as f64,
            mean_loss: loss_rep / n as f64,
        });
        rows.push(PgdRow {
            space: "input".to_string(),
            eps_normalized: *eps_n,
            eps_raw: eps,
            n,
            accuracy: correct_in as f64 / n as f64,
            mean_loss: loss_in / n as f64,
        });
    }
    write_pgd_csv(&paths.pgd_csv(), &rows)?;

    println!(
        "attack: adversarial reference ({} points, success {:.3}) and {} PGD rows -> {}",
        ctx.adv.points.len(),
        ctx.adv.attack_success,
        rows.len(),
        paths.pgd_csv().display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = OutPaths::new(&cfg.out_dir);
    let ctx = load_context(cfg, &paths)?;
    let family = cfg.certify.family;
    let source_dist = EmpiricalDistribution::uniform(ctx.sample.clone())?;

    let mut rows = Vec::new();

    // The pooled source sample against itself: the zero point of the axis.
    rows.push(eval_row(
        "source_pool",
        "source",
        &source_dist,
        &ctx.sample,
        ctx.unit,
        &ctx.head,
        &family,
    )?);

    // Each source domain's held-out points.
    for (id, pts) in &ctx.test.domains {
        let reps = points_to_reps(&ctx.params, pts)?;
        rows.push(eval_row(id, "source", &source_dist, &reps, ctx.unit, &ctx.head, &family)?);
    }

    // Unseen rotation domains, full sample.
    for angle in &cfg.task.unseen_angles_deg {
        let id = rotation_domain_id(*angle);
        let ds = load_csv_hint(&paths.domain_csv(&id), "run `dgcert gen-data` first")?;
        let pts: Vec<LabeledPoint> = ds.domains.values().flatten().cloned().collect();
        let reps = sample_reps(cfg, &ctx, &pts, &format!("eval/{id}"))?;
        rows.push(eval_row(&id, "unseen", &source_dist, &reps, ctx.unit, &ctx.head, &family)?);
    }

    // The adversarial reference distribution. Its distance is the unit by
    // construction (the unit *is* the measured distance to it), so its
    // normalized distance is exactly 1.
    let (acc, mean_loss) = rep_metrics(&ctx.head, &ctx.adv.points, &family)?;
    rows.push(EvalRow {
        name: "adv".to_string(),
        kind: "adversarial".to_string(),
        n: ctx.adv.points.len(),
        distance_raw: ctx.unit,
        distance_normalized: ctx.unit / ctx.unit,
        accuracy: acc,
        mean_loss,
    });

    // Severity-parameterized corruptions of the pooled test inputs.
    let clean: Vec<LabeledPoint> = ctx.test.domains.values().flatten().cloned().collect();
    for kind in &cfg.evaluate.corruptions {
        for s in &cfg.evaluate.severities {
            let name = format!("{}_s{s}", corruption_tag(*kind));
            let corrupted = apply_corruption(
                &clean,
                *kind,
                *s,
                derive_seed_str(cfg.seed, &format!("corrupt/{name}")),
            )?;
            let reps = sample_reps(cfg, &ctx, &corrupted, &format!("eval/{name}"))?;
            rows.push(eval_row(
                &name,
                "corrupted",
                &source_dist,
                &reps,
                ctx.unit,
                &ctx.head,
                &family,
            )?);
        }
    }

    write_eval_csv(&paths.evaluation_csv(), &rows)?;

    println!(
        "evaluate: {} distributions -> {}",
        rows.len(),
        paths.evaluation_csv().display()
    );
    for r in &rows {
        println!(
            "  {:<16} {:<11} d/unit {:.4}  acc {:.4}  loss {:.6}",
            r.name, r.kind, r.distance_normalized, r.accuracy, r.mean_loss
        );
    }
    Ok(())
}

fn eval_row(
    name: &str,
    kind: &str,
    source: &EmpiricalDistribution,
    reps: &[RepPoint],
    unit: f64,
    head: &LinearHead,
    family: &LossFamily,
) -> Result<EvalRow, CliError> {
    let target = EmpiricalDistribution::uniform(reps.to_vec())?;
    let distance = w2_class_conditional(source, &target, OtMethod::Auto).map_err(|e| {
        CliError::Domain(format!("distance to `{name}`: {e}"))
    })?;
    let (accuracy, mean_loss) = rep_metrics(head, reps, family)?;
    Ok(EvalRow {
        name: name.to_string(),
        kind: kind.to_string(),
        n: reps.len(),
        distance_raw: distance,
        distance_normalized: distance / unit,
        accuracy,
        mean_loss,
    })
}

/// Forward points into representation space and cap the sample like the
/// unit measurement does, so distances and metrics describe the same set.
fn sample_reps(
    cfg: &RunConfig,
    ctx: &EvalContext,
    pts: &[LabeledPoint],
    tag: &str,
) -> Result<Vec<RepPoint>, CliError> {
    let reps = points_to_reps(&ctx.params, pts)?;
    Ok(sample_up_to(
        &reps,
        RHO_ADV_SAMPLE_CAP,
        derive_seed_str(cfg.seed, tag),
    ))
}

// ---------------------------------------------------------------------------
// report

pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = OutPaths::new(&cfg.out_dir);
    let doc: CertificatesDoc = read_json(
        &paths.certificates_json(),
        "run `dgcert certify` first",
    )?;
    let rows = read_eval_csv(&paths.evaluation_csv())?;

    // Numerical soundness gate: inside the certified range, every evaluated
    // distribution must sit at or below the certificate covering it.
    let check = render::check_soundness(&doc.certificates, &rows)?;

    let svg = render::render_svg(&doc, &rows);
    let md = render::render_markdown(&doc, &rows, &check);
    crate::artifacts::write_bytes(&paths.report_svg(), svg.as_bytes())?;
    crate::artifacts::write_bytes(&paths.report_md(), md.as_bytes())?;

    println!(
        "report: {} points checked against the certified bound ({} beyond the largest radius) -> {}",
        check.checked,
        check.beyond,
        paths.report_svg().display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared helpers

fn ensure_parent(path: &std::path::Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Domain(format!("creating {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn load_csv_hint(path: &std::path::Path, hint: &str) -> Result<DomainDataset, CliError> {
    if !path.exists() {
        return Err(CliError::Domain(format!(
            "missing {}: {hint}",
            path.display()
        )));
    }
    load_csv(path).map_err(CliError::from)
}

/// Pooled representations of a dataset, in domain order.
fn rep_points(params: &ModelParams, data: &DomainDataset) -> Result<Vec<RepPoint>, CliError> {
    let mut out = Vec::with_capacity(data.n_points());
    for pts in data.domains.values() {
        for p in pts {
            out.push(RepPoint {
                z: forward_rep(params, &p.x)?,
                y: p.y,
            });
        }
    }
    Ok(out)
}

fn points_to_reps(params: &ModelParams, pts: &[LabeledPoint]) -> Result<Vec<RepPoint>, CliError> {
    pts.iter()
        .map(|p| {
            Ok(RepPoint {
                z: forward_rep(params, &p.x)?,
                y: p.y,
            })
        })
        .collect()
}

fn rep_metrics(
    head: &LinearHead,
    pts: &[RepPoint],
    family: &LossFamily,
) -> Result<(f64, f64), CliError> {
    if pts.is_empty() {
        return Err(CliError::Domain("metrics over an empty sample".into()));
    }
    let mut correct = 0usize;
    let mut sum = 0.0;
    for p in pts {
        if head.predict(&p.z)? == p.y {
            correct += 1;
        }
        sum += loss(head, &p.z, p.y, family)?;
    }
    let n = pts.len() as f64;
    Ok((correct as f64 / n, sum / n))
}

/// Snake-case tag of a corruption kind, matching its config spelling.
fn corruption_tag(kind: CorruptionKind) -> String {
    match serde_json::to_value(kind) {
        Ok(serde_json::Value::String(s)) => s,
        _ => "corruption".to_string(),
    }
}
