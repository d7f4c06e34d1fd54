//! Artifact layout and on-disk document formats.
//!
//! Every command reads and writes fixed paths under the configured output
//! directory, so the commands compose without passing file names around:
//!
//! ```text
//! out/
//!   manifest.json               gen-data: inventory of generated files
//!   data/<domain>.csv           one file per generated domain (full sample)
//!   data/train.csv  test.csv    stratified split of the source domains
//!   model/checkpoint.json       final network parameters
//!   model/train_state.json      resumable training state
//!   model/training_log.csv      per-epoch losses
//!   model/train_summary.json    end-of-run metrics
//!   certs/sweep.csv             certificates for the configured family
//!   certs/sweep_zero_one.csv    closed-form 0/1 certificates, same radii
//!   certs/certificates.json     full certificate records + unit + checks
//!   attack/adv_points.csv       the adversarial reference distribution
//!   attack/pgd.csv              PGD attack table over budgets and spaces
//!   eval/evaluation.csv         per-distribution distance/accuracy/loss
//!   report/report.svg  report.md
//! ```
//!
//! All writes here go through a temp file + rename, so a crashed command
//! never leaves a half-written artifact behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use dgcert::certify::Certificate;
use dgcert::netcore::LossFamily;
use dgcert::util::atomic_write;

use crate::config::TaskConfig;
use crate::CliError;

pub struct OutPaths {
    root: PathBuf,
}

impl OutPaths {
    pub fn new(root: &Path) -> Self {
        OutPaths {
            root: root.to_path_buf(),
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn domain_csv(&self, id: &str) -> PathBuf {
        self.root.join("data").join(format!("{id}.csv"))
    }
    pub fn train_csv(&self) -> PathBuf {
        self.root.join("data").join("train.csv")
    }
    pub fn test_csv(&self) -> PathBuf {
        self.root.join("data").join("test.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model").join("checkpoint.json")
    }
    pub fn train_state(&self) -> PathBuf {
        self.root.join("model").join("train_state.json")
    }
    pub fn training_log(&self) -> PathBuf {
        self.root.join("model").join("training_log.csv")
    }
    pub fn train_summary(&self) -> PathBuf {
        self.root.join("model").join("train_summary.json")
    }
    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("certs").join("sweep.csv")
    }
    pub fn sweep_zero_one_csv(&self) -> PathBuf {
        self.root.join("certs").join("sweep_zero_one.csv")
    }
    pub fn certificates_json(&self) -> PathBuf {
        self.root.join("certs").join("certificates.json")
    }
    pub fn adv_points_csv(&self) -> PathBuf {
        self.root.join("attack").join("adv_points.csv")
    }
    pub fn pgd_csv(&self) -> PathBuf {
        self.root.join("attack").join("pgd.csv")
    }
    pub fn evaluation_csv(&self) -> PathBuf {
        self.root.join("eval").join("evaluation.csv")
    }
    pub fn report_svg(&self) -> PathBuf {
        self.root.join("report").join("report.svg")
    }
    pub fn report_md(&self) -> PathBuf {
        self.root.join("report").join("report.md")
    }
}

/// Creates the parent directory of `path`, then writes atomically.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Domain(format!("creating {}: {e}", dir.display())))?;
    }
    atomic_write(path, bytes)
        .map_err(|e| CliError::Domain(format!("writing {}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Domain(format!("serializing {}: {e}", path.display())))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, hint: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Domain(format!("missing {}: {e}; {hint}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Domain(format!("parsing {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// manifest.json

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub threads: usize,
    pub task: TaskConfig,
    pub domains: Vec<DomainEntry>,
    pub splits: SplitEntry,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub id: String,
    /// `source` or `unseen`.
    pub role: String,
    /// Path relative to the output directory.
    pub path: String,
    pub n: usize,
    pub angle_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub train_path: String,
    pub test_path: String,
    pub train_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
}

pub const MANIFEST_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// certs/certificates.json

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificatesDoc {
    pub version: u32,
    pub family: LossFamily,
    /// The unit measured on the held-out test split — the one all
    /// normalized radii in this document refer to.
    pub unit: UnitReport,
    /// The unit the training loop would see on the train split, recorded
    /// for comparison.
    pub unit_train: UnitReport,
    pub certificates: Vec<Certificate>,
    /// Closed-form 0/1 certificates at the same radii.
    pub zero_one: Vec<Certificate>,
    pub saturation: SaturationReport,
}

pub const CERTIFICATES_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitReport {
    /// Label-aware W2 distance to the closest zero-accuracy distribution.
    pub rho_adv: f64,
    pub n_points: usize,
    pub attack_success: f64,
    pub split: String,
}

/// Per-run check of the saturation property: whenever the squared unit
/// reaches the mean squared boundary distance, the 0/1 certificate at the
/// unit radius must be exactly 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationReport {
    pub rho_adv_sq: f64,
    pub mean_sq_boundary_distance: f64,
    pub condition_holds: bool,
    pub cert01_at_unit: f64,
    /// True unless the condition holds and the certificate still fell
    /// short of 1 — which would indicate a broken closed form.
    pub consistent: bool,
}

// ---------------------------------------------------------------------------
// eval/evaluation.csv

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    /// `source`, `unseen`, `adversarial`, or `corrupted`.
    pub kind: String,
    pub n: usize,
    pub distance_raw: f64,
    pub distance_normalized: f64,
    pub accuracy: f64,
    pub mean_loss: f64,
}

pub const EVAL_HEADER: &str = "name,kind,n,distance_raw,distance_normalized,accuracy,mean_loss";

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(EVAL_HEADER);
    out.push('\n');
    for r in rows {
        // `{}` on f64 prints the shortest representation that parses back
        // to the same bits, so the table round-trips losslessly.
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name, r.kind, r.n, r.distance_raw, r.distance_normalized, r.accuracy, r.mean_loss
        ));
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Domain(format!(
            "missing {}: {e}; run `dgcert evaluate` first",
            path.display()
        ))
    })?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == EVAL_HEADER => {}
        other => {
            return Err(CliError::Domain(format!(
                "{}: unexpected header {:?}",
                path.display(),
                other
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(CliError::Domain(format!(
                "{} line {}: expected 7 fields, found {}",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let num = |s: &str, what: &str| -> Result<f64, CliError> {
            s.parse::<f64>().map_err(|e| {
                CliError::Domain(format!("{} line {}: bad {what}: {e}", path.display(), i + 2))
            })
        };
        rows.push(EvalRow {
            name: fields[0].to_string(),
            kind: fields[1].to_string(),
            n: fields[2].parse().map_err(|e| {
                CliError::Domain(format!("{} line {}: bad n: {e}", path.display(), i + 2))
            })?,
            distance_raw: num(fields[3], "distance_raw")?,
            distance_normalized: num(fields[4], "distance_normalized")?,
            accuracy: num(fields[5], "accuracy")?,
            mean_loss: num(fields[6], "mean_loss")?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// attack/pgd.csv

#[derive(Clone, Debug)]
pub struct PgdRow {
    /// `representation` or `input`.
    pub space: String,
    pub eps_normalized: f64,
    pub eps_raw: f64,
    pub n: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
}

pub fn write_pgd_csv(path: &Path, rows: &[PgdRow]) -> Result<(), CliError> {
    let mut out = String::from("space,eps_normalized,eps_raw,n,accuracy,mean_loss\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.space, r.eps_normalized, r.eps_raw, r.n, r.accuracy, r.mean_loss
        ));
    }
    write_bytes(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        let rows = vec![
            EvalRow {
                name: "source_pool".into(),
                kind: "source".into(),
                n: 80,
                distance_raw: 0.0,
                distance_normalized: 0.0,
                accuracy: 0.9875,
                mean_loss: 0.1234567890123456789,
            },
            EvalRow {
                name: "adv".into(),
                kind: "adversarial".into(),
                n: 80,
                distance_raw: 0.4217,
                distance_normalized: 1.0,
                accuracy: 0.0,
                mean_loss: 2.5,
            },
        ];
        write_eval_csv(&path, &rows).unwrap();
        let back = read_eval_csv(&path).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn eval_reader_rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        let text = format!("{EVAL_HEADER}\na,b,2,0.1\n");
        std::fs::write(&path, text).unwrap();
        let err = read_eval_csv(&path).unwrap_err();
        assert!(matches!(err, CliError::Domain(m) if m.contains("expected 7 fields")));
    }

    #[test]
    fn write_json_creates_parent_dirs_and_appends_newline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a").join("b.json");
        write_json(&path, &serde_json::json!({"k": 1})).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.ends_with(b"\n"));
        let v: serde_json::Value = read_json(&path, "").unwrap();
        assert_eq!(v["k"], 1);
    }
}
