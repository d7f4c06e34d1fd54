//! End-to-end behavior of the trainers across modules: the alignment
//! objective actually pulls domain representations together, and robust
//! training produces sound certificates on its own source sample.

mod common;

use dgcert::adversarial::{measure_unit, RHO_ADV_SAMPLE_CAP};
use dgcert::certify::{cert_dg, CertConfig};
use dgcert::dgtrain::{accuracy, dr_dg_train, vanilla_train, DGMethod, DRDGConfig};
use dgcert::domains::{make_rotated_task, BaseShape, DomainDataset};
use dgcert::netcore::{forward_rep, loss, LossFamily, ModelParams, RepPoint};
use dgcert::transport::{w2_class_conditional, EmpiricalDistribution, OtMethod};

fn domain_reps(params: &ModelParams, data: &DomainDataset, id: &str) -> Vec<RepPoint> {
    data.domains[id]
        .iter()
        .map(|p| RepPoint {
            z: forward_rep(params, &p.x).expect("forward"),
            y: p.y,
        })
        .collect()
}

fn pooled_reps(params: &ModelParams, data: &DomainDataset) -> Vec<RepPoint> {
    let mut out = Vec::new();
    for id in data.domains.keys() {
        out.extend(domain_reps(params, data, id));
    }
    out
}

#[test]
fn alignment_training_pulls_domain_representations_together() {
    let data = make_rotated_task(BaseShape::Blobs, 80, &[0.0, 40.0], 0.3, 19).expect("task");

    let erm = vanilla_train(&data, &DGMethod::Erm, 0.05, 60, 19).expect("erm");
    let aligned =
        vanilla_train(&data, &DGMethod::Wm { lambda: 3.0 }, 0.05, 60, 19).expect("aligned");

    let gap = |params: &ModelParams| {
        let a = EmpiricalDistribution::uniform(domain_reps(params, &data, "rot000"))
            .expect("distribution");
        let b = EmpiricalDistribution::uniform(domain_reps(params, &data, "rot040"))
            .expect("distribution");
        w2_class_conditional(&a, &b, OtMethod::Auto).expect("distance")
    };

    let erm_gap = gap(&erm.params);
    let aligned_gap = gap(&aligned.params);
    assert!(
        aligned_gap < erm_gap,
        "alignment did not reduce the domain gap: {aligned_gap} vs {erm_gap}"
    );
    assert!(
        accuracy(&aligned.params, &data).expect("accuracy") >= 0.9,
        "alignment destroyed source accuracy"
    );
}

#[test]
fn robust_training_yields_sound_certificates_on_its_source() {
    let data =
        make_rotated_task(BaseShape::Blobs, 70, &[0.0, 15.0, 30.0], 0.3, 23).expect("task");
    let cfg = DRDGConfig {
        f: 0.5,
        eta: 0.05,
        epochs: 40,
        dg: DGMethod::Wm { lambda: 1.0 },
        inner: CertConfig {
            seed: 23,
            batch: 64,
            ..CertConfig::default()
        },
        dg_includes_source_loss: false,
    };
    let out = dr_dg_train(&data, &cfg).expect("train");

    assert!(
        accuracy(&out.params, &data).expect("accuracy") >= 0.9,
        "robust training destroyed source accuracy"
    );
    for rec in &out.log.records {
        assert!(rec.rho_adv > 0.0, "epoch {}: no measured unit", rec.epoch);
        assert!(
            rec.dro_loss >= rec.source_loss - 1e-12,
            "epoch {}: robust loss below clean loss",
            rec.epoch
        );
    }

    // Certify the trained model at half its own measured unit: the
    // certificate must dominate the empirical source loss.
    let reps = pooled_reps(&out.params, &data);
    let (unit, _) = measure_unit(&out.params.head, &reps, RHO_ADV_SAMPLE_CAP, 23).expect("unit");
    let family = LossFamily::CrossEntropy;
    let cert_cfg = CertConfig {
        t1: 40,
        seed: 23,
        ..CertConfig::default()
    };
    let cert = cert_dg(&out.params.head, &reps, 0.5 * unit, &cert_cfg, &family).expect("cert");
    let empirical: f64 = reps
        .iter()
        .map(|p| loss(&out.params.head, &p.z, p.y, &family).expect("loss"))
        .sum::<f64>()
        / reps.len() as f64;
    assert!(
        cert.worst_case_loss >= empirical - 1e-9,
        "certificate {} below empirical loss {empirical}",
        cert.worst_case_loss
    );
}
