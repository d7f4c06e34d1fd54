//! The run configuration: one JSON document drives every subcommand.
//!
//! Parsing is strict — unknown keys anywhere in the document are rejected
//! with an error naming the offending key — and every numeric field is
//! validated before any work starts. All randomness in the pipeline derives
//! from the single top-level `seed`; the nested solver configs carry `seed`
//! fields of their own (they are shared library types) but the loader
//! overwrites those from the root seed so that a config file cannot
//! accidentally split its entropy across two sources.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dgcert::certify::CertConfig;
use dgcert::dgtrain::DRDGConfig;
use dgcert::domains::{BaseShape, CorruptionKind};
use dgcert::netcore::LossFamily;
use dgcert::util::derive_seed_str;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for the whole pipeline.
    pub seed: u64,
    /// Directory that receives every artifact.
    pub out_dir: PathBuf,
    pub task: TaskConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: DRDGConfig,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

/// Synthetic multi-domain task: a base shape rotated into one domain per
/// angle. Source angles are split train/test; unseen angles are held out
/// entirely for evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub shape: BaseShape,
    pub n_per_domain: usize,
    pub source_angles_deg: Vec<f64>,
    #[serde(default)]
    pub unseen_angles_deg: Vec<f64>,
    pub noise_sigma: f64,
    pub train_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden relu widths of the representation network.
    pub hidden: Vec<usize>,
    pub rep_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![16, 16],
            rep_dim: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    /// Sweep radii as multiples of the measured adversarial unit, ascending.
    pub radii_normalized: Vec<f64>,
    pub family: LossFamily,
    pub cert: CertConfig,
}

impl Default for CertifySection {
    fn default() -> Self {
        CertifySection {
            radii_normalized: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            family: LossFamily::CrossEntropy,
            cert: CertConfig {
                t1: 40,
                t2: 2,
                alpha_step: 0.25,
                ..CertConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// Attack budgets as multiples of the adversarial unit.
    pub eps_normalized: Vec<f64>,
    pub steps: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            eps_normalized: vec![0.25, 0.5, 1.0],
            steps: 40,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub corruptions: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            corruptions: vec![CorruptionKind::GaussNoise],
            severities: vec![1, 2, 3, 4, 5],
        }
    }
}

impl RunConfig {
    /// Reads, parses, and validates a config file, applying the CLI
    /// overrides and rooting every nested seed at the top-level one.
    pub fn load(
        path: &Path,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        if let Some(out) = out_override {
            cfg.out_dir = out;
        }
        // Single entropy root: the solver sub-configs inherit the run seed.
        cfg.train.inner.seed = cfg.seed;
        cfg.certify.cert.seed = derive_seed_str(cfg.seed, "certify");
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));

        let t = &self.task;
        if t.n_per_domain < 4 {
            return usage("task.n_per_domain must be at least 4".into());
        }
        if t.source_angles_deg.is_empty() {
            return usage("task.source_angles_deg must not be empty".into());
        }
        for a in t.source_angles_deg.iter().chain(&t.unseen_angles_deg) {
            if !a.is_finite() {
                return usage("task angles must be finite".into());
            }
        }
        if !(t.noise_sigma >= 0.0 && t.noise_sigma.is_finite()) {
            return usage("task.noise_sigma must be finite and >= 0".into());
        }
        if !(t.train_fraction > 0.0 && t.train_fraction < 1.0) {
            return usage("task.train_fraction must lie strictly between 0 and 1".into());
        }
        // Domain ids come from the rounded angle; a collision would silently
        // merge two domains.
        let mut ids: Vec<String> = t
            .source_angles_deg
            .iter()
            .chain(&t.unseen_angles_deg)
            .map(|a| dgcert::domains::rotation_domain_id(*a))
            .collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return usage(
                "task angles map to duplicate domain ids (source and unseen lists combined)"
                    .into(),
            );
        }

        if self.model.rep_dim == 0 {
            return usage("model.rep_dim must be >= 1".into());
        }

        self.train
            .validate()
            .map_err(|e| CliError::Usage(format!("train: {e}")))?;

        let c = &self.certify;
        if c.radii_normalized.is_empty() {
            return usage("certify.radii_normalized must not be empty".into());
        }
        if c.radii_normalized.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return usage("certify.radii_normalized entries must be finite and >= 0".into());
        }
        if c.radii_normalized.windows(2).any(|w| w[0] >= w[1]) {
            return usage("certify.radii_normalized must be strictly ascending".into());
        }
        c.cert
            .validate()
            .map_err(|e| CliError::Usage(format!("certify.cert: {e}")))?;

        let a = &self.attack;
        if a.eps_normalized.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return usage("attack.eps_normalized entries must be finite and >= 0".into());
        }
        if a.steps == 0 {
            return usage("attack.steps must be >= 1".into());
        }

        if self.evaluate.severities.iter().any(|s| !(1..=5).contains(s)) {
            return usage("evaluate.severities entries must lie in 1..=5".into());
        }
        Ok(())
    }
}
