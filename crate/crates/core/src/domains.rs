//! Synthetic multi-domain tasks: a seeded 2-D base dataset rotated into one
//! domain per angle, severity-graded corruption families, stratified splits,
//! and CSV persistence.
//!
//! Generation is a pure function of (config, seed): the base sample is drawn
//! once and every domain is a deterministic transform of it, so domains
//! differ only by the transform — the controlled setting the rest of the
//! toolkit measures distances over.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netcore::LabeledPoint;
use crate::util::{atomic_write, derive_seed_str, randn};
use crate::{Error, Result};

/// Base dataset family for [`make_rotated_task`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseShape {
    /// Two Gaussian blobs centered at (±1, 0).
    Blobs,
    /// Two interleaved half-moon arcs.
    Arcs,
}

impl fmt::Display for BaseShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseShape::Blobs => "blobs",
            BaseShape::Arcs => "arcs",
        })
    }
}

/// Pointwise corruption families with severity-scaled magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Additive isotropic Gaussian noise, sigma = 0.05 * severity.
    GaussNoise,
    /// Constant translation of norm 0.1 * severity (seeded direction).
    Shift,
    /// Radial scaling by 1 + 0.1 * severity.
    Scale,
    /// Shear coupling coordinate 1 into coordinate 0, factor 0.1 * severity.
    Shear,
    /// Convex blend toward a seeded constant point, weight 0.1 * severity.
    BlendConstant,
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionKind::GaussNoise => "gauss_noise",
            CorruptionKind::Shift => "shift",
            CorruptionKind::Scale => "scale",
            CorruptionKind::Shear => "shear",
            CorruptionKind::BlendConstant => "blend_constant",
        })
    }
}

/// Provenance of one generated domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMeta {
    pub shape: BaseShape,
    pub angle_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<(CorruptionKind, u8)>,
}

/// A labeled sample per domain plus generation provenance. CSV persistence
/// carries the points only; provenance travels in run manifests.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainDataset {
    pub domains: BTreeMap<String, Vec<LabeledPoint>>,
    pub meta: BTreeMap<String, DomainMeta>,
}

impl DomainDataset {
    /// Ambient dimension, from the first point of the first domain.
    pub fn dim(&self) -> Option<usize> {
        self.domains.values().flatten().next().map(|p| p.x.len())
    }

    /// Number of classes = 1 + max label across all domains.
    pub fn n_classes(&self) -> usize {
        self.domains
            .values()
            .flatten()
            .map(|p| p.y + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn n_points(&self) -> usize {
        self.domains.values().map(Vec::len).sum()
    }

    /// All domains share a dimension and every domain is non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::invalid("dataset has no domains"));
        }
        let d = self.dim().ok_or_else(|| Error::invalid("dataset has no points"))?;
        for (id, pts) in &self.domains {
            if pts.is_empty() {
                return Err(Error::invalid(format!("domain {id} is empty")));
            }
            for p in pts {
                if p.x.len() != d {
                    return Err(Error::invalid(format!(
                        "domain {id} mixes dimensions {d} and {}",
                        p.x.len()
                    )));
                }
                if p.x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("domain {id} has a non-finite point")));
                }
            }
        }
        Ok(())
    }
}

/// Canonical id for a rotation domain: zero-padded rounded degrees.
pub fn rotation_domain_id(angle_deg: f64) -> String {
    format!("rot{:03}", angle_deg.round() as i64)
}

fn base_sample(shape: BaseShape, n: usize, noise_sigma: f64, seed: u64) -> Vec<LabeledPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(seed, "domains/base"));
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let (e0, e1) = (randn(&mut rng), randn(&mut rng));
        let x = match shape {
            BaseShape::Blobs => {
                let cx = if y == 0 { 1.0 } else { -1.0 };
                vec![cx + noise_sigma * e0, noise_sigma * e1]
            }
            BaseShape::Arcs => {
                // Interleaved half-moons; the arc parameter reuses the
                // uniform stream so the draw count per point is fixed.
                let t = std::f64::consts::PI * rand::Rng::gen::<f64>(&mut rng);
                let (cx, cy) = if y == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                vec![cx + noise_sigma * e0, cy + noise_sigma * e1]
            }
        };
        pts.push(LabeledPoint { x, y });
    }
    pts
}

fn rotate2(x: &[f64], theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    vec![c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// One seeded base dataset rotated about the origin by each angle; each
/// rotation is one domain. Labels are preserved, so domains differ purely by
/// an isometry of the inputs.
pub fn make_rotated_task(
    shape: BaseShape,
    n_per_domain: usize,
    angles_deg: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<DomainDataset> {
    let n_classes = 2;
    if n_per_domain < n_classes {
        return Err(Error::invalid(format!(
            "n_per_domain {n_per_domain} is below the class count {n_classes}"
        )));
    }
    if angles_deg.is_empty() {
        return Err(Error::invalid("at least one angle is required"));
    }
    if angles_deg.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("angles must be finite"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be finite and >= 0"));
    }
    let base = base_sample(shape, n_per_domain, noise_sigma, seed);
    let mut ds = DomainDataset::default();
    for &angle in angles_deg {
        let id = rotation_domain_id(angle);
        if ds.domains.contains_key(&id) {
            return Err(Error::invalid(format!(
                "angles collide on domain id {id}; rounded degrees must be distinct"
            )));
        }
        let theta = angle.to_radians();
        let pts = base
            .iter()
            .map(|p| LabeledPoint {
                x: rotate2(&p.x, theta),
                y: p.y,
            })
            .collect();
        ds.domains.insert(id.clone(), pts);
        ds.meta.insert(
            id,
            DomainMeta {
                shape,
                angle_deg: angle,
                corruption: None,
            },
        );
    }
    Ok(ds)
}

/// Applies one corruption family at a severity in 1..=5. Labels and counts
/// are unchanged; all randomness comes from `seed`, and random draws are
/// scaled by severity afterwards, so the same seed yields proportionally
/// growing distortions across severities.
pub fn apply_corruption(
    points: &[LabeledPoint],
    kind: CorruptionKind,
    severity: u8,
    seed: u64,
) -> Result<Vec<LabeledPoint>> {
    if !(1..=5).contains(&severity) {
        return Err(Error::invalid(format!(
            "severity must be in 1..=5, got {severity}"
        )));
    }
    if points.is_empty() {
        return Err(Error::invalid("cannot corrupt an empty domain"));
    }
    let d = points[0].x.len();
    let s = f64::from(severity);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(seed, "domains/corrupt"));

    let out = match kind {
        CorruptionKind::GaussNoise => {
            let sigma = 0.05 * s;
            points
                .iter()
                .map(|p| LabeledPoint {
                    x: p.x.iter().map(|v| v + sigma * randn(&mut rng)).collect(),
                    y: p.y,
                })
                .collect()
        }
        CorruptionKind::Shift => {
            let mut dir: Vec<f64> = (0..d).map(|_| randn(&mut rng)).collect();
            let n = crate::util::norm(&dir);
            if n == 0.0 {
                dir[0] = 1.0;
            } else {
                dir.iter_mut().for_each(|v| *v /= n);
            }
            let step = 0.1 * s;
            points
                .iter()
                .map(|p| LabeledPoint {
                    x: p.x.iter().zip(&dir).map(|(v, u)| v + step * u).collect(),
                    y: p.y,
                })
                .collect()
        }
        CorruptionKind::Scale => {
            let f = 1.0 + 0.1 * s;
            points
                .iter()
                .map(|p| LabeledPoint {
                    x: p.x.iter().map(|v| f * v).collect(),
                    y: p.y,
                })
                .collect()
        }
        CorruptionKind::Shear => {
            if d < 2 {
                return Err(Error::invalid("shear needs at least 2 dimensions"));
            }
            let k = 0.1 * s;
            points
                .iter()
                .map(|p| {
                    let mut x = p.x.clone();
                    x[0] += k * p.x[1];
                    LabeledPoint { x, y: p.y }
                })
                .collect()
        }
        CorruptionKind::BlendConstant => {
            let c: Vec<f64> = (0..d).map(|_| randn(&mut rng)).collect();
            let beta = 0.1 * s;
            points
                .iter()
                .map(|p| LabeledPoint {
                    x: p.x.iter().zip(&c).map(|(v, ci)| v + beta * (ci - v)).collect(),
                    y: p.y,
                })
                .collect()
        }
    };
    Ok(out)
}

/// Stratified train/test split: within each domain, each class is shuffled
/// (seeded per domain and class) and cut at `floor(fraction * n_class)`,
/// clamped so both sides keep at least one point. Selected indices are
/// re-sorted, so point order within each side follows the original dataset.
pub fn split(
    dataset: &DomainDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train fraction must be strictly inside (0, 1)"));
    }
    dataset.validate()?;
    let mut train = DomainDataset {
        domains: BTreeMap::new(),
        meta: dataset.meta.clone(),
    };
    let mut test = DomainDataset {
        domains: BTreeMap::new(),
        meta: dataset.meta.clone(),
    };
    for (id, pts) in &dataset.domains {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in pts.iter().enumerate() {
            by_class.entry(p.y).or_default().push(i);
        }
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for (class, mut idx) in by_class {
            let n_c = idx.len();
            if n_c < 2 {
                return Err(Error::invalid(format!(
                    "domain {id} class {class} has {n_c} point(s); need at least 2 to split"
                )));
            }
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed_str(seed, &format!("split/{id}/{class}")));
            // Fisher-Yates, deterministic per (seed, domain, class).
            for i in (1..n_c).rev() {
                let j = rand::Rng::gen_range(&mut rng, 0..=i);
                idx.swap(i, j);
            }
            let n_tr = ((train_fraction * n_c as f64).floor() as usize).clamp(1, n_c - 1);
            train_idx.extend_from_slice(&idx[..n_tr]);
            test_idx.extend_from_slice(&idx[n_tr..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        train
            .domains
            .insert(id.clone(), train_idx.iter().map(|&i| pts[i].clone()).collect());
        test.domains
            .insert(id.clone(), test_idx.iter().map(|&i| pts[i].clone()).collect());
    }
    Ok((train, test))
}

/// Writes `domain,label,x0,...,x{d-1}` rows, one per point, domains in map
/// order. Coordinates use shortest round-trip formatting (lossless).
pub fn save_csv(dataset: &DomainDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let d = dataset.dim().expect("validated dataset has points");
    let mut out = Vec::new();
    write!(out, "domain,label")?;
    for j in 0..d {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    for (id, pts) in &dataset.domains {
        for p in pts {
            write!(out, "{id},{}", p.y)?;
            for v in &p.x {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(atomic_write(path, &out)?)
}

/// Reads a dataset written by [`save_csv`]. Provenance is not stored in the
/// CSV, so `meta` comes back empty.
pub fn load_csv(path: &Path) -> Result<DomainDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

fn parse_csv(text: &str) -> Result<DomainDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "domain" || cols[1] != "label" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header domain,label,x0,..., got {header:?}"),
        });
    }
    let d = cols.len() - 2;
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("x{j}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("coordinate column {j} is named {c:?}, expected x{j}"),
            });
        }
    }

    let mut ds = DomainDataset::default();
    let mut rows = 0usize;
    for (i, row) in lines {
        let line = i + 1;
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {}", d + 2, fields.len()),
            });
        }
        let y: usize = fields[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("label {:?} is not a non-negative integer", fields[1]),
        })?;
        let mut x = Vec::with_capacity(d);
        for f in &fields[2..] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("coordinate {f:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("coordinate {f:?} is not finite"),
                });
            }
            x.push(v);
        }
        ds.domains
            .entry(fields[0].to_string())
            .or_default()
            .push(LabeledPoint { x, y });
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::sq_dist;

    fn small_task() -> DomainDataset {
        make_rotated_task(BaseShape::Blobs, 20, &[0.0, 75.0], 0.3, 7).unwrap()
    }

    #[test]
    fn zero_rotation_is_the_identity_and_full_turn_matches() {
        let a = make_rotated_task(BaseShape::Blobs, 16, &[0.0], 0.25, 3).unwrap();
        let b = make_rotated_task(BaseShape::Blobs, 16, &[360.0], 0.25, 3).unwrap();
        let pa = &a.domains["rot000"];
        let pb = &b.domains["rot360"];
        for (p, q) in pa.iter().zip(pb) {
            assert_eq!(p.y, q.y);
            assert!(sq_dist(&p.x, &q.x).sqrt() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let ds = small_task();
        let a = &ds.domains["rot000"];
        let b = &ds.domains["rot075"];
        for i in 0..a.len() {
            assert_eq!(a[i].y, b[i].y, "labels must survive rotation");
            for j in i + 1..a.len() {
                let da = sq_dist(&a[i].x, &a[j].x).sqrt();
                let db = sq_dist(&b[i].x, &b[j].x).sqrt();
                assert!((da - db).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_validates() {
        let a = small_task();
        let b = small_task();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.dim(), Some(2));
        assert_eq!(a.n_classes(), 2);
        assert_eq!(a.n_points(), 40);
        assert_eq!(a.meta["rot075"].angle_deg, 75.0);
    }

    #[test]
    fn arcs_base_produces_two_interleaved_classes() {
        let ds = make_rotated_task(BaseShape::Arcs, 30, &[0.0], 0.05, 11).unwrap();
        let pts = &ds.domains["rot000"];
        let n0 = pts.iter().filter(|p| p.y == 0).count();
        assert_eq!(n0, 15);
        assert!(pts.iter().all(|p| p.x.len() == 2));
    }

    #[test]
    fn task_generation_rejects_bad_arguments() {
        assert!(make_rotated_task(BaseShape::Blobs, 1, &[0.0], 0.3, 0).is_err());
        assert!(make_rotated_task(BaseShape::Blobs, 10, &[], 0.3, 0).is_err());
        assert!(make_rotated_task(BaseShape::Blobs, 10, &[0.0, f64::NAN], 0.3, 0).is_err());
        // 15.0 and 15.4 round to the same id.
        assert!(make_rotated_task(BaseShape::Blobs, 10, &[15.0, 15.4], 0.3, 0).is_err());
    }

    #[test]
    fn shift_corruption_translates_every_point_identically() {
        let ds = small_task();
        let pts = &ds.domains["rot000"];
        for severity in 1..=5u8 {
            let out = apply_corruption(pts, CorruptionKind::Shift, severity, 9).unwrap();
            let delta: Vec<f64> = out[0]
                .x
                .iter()
                .zip(&pts[0].x)
                .map(|(a, b)| a - b)
                .collect();
            let want = 0.1 * f64::from(severity);
            assert!((crate::util::norm(&delta) - want).abs() < 1e-12);
            for (p, q) in pts.iter().zip(&out) {
                assert_eq!(p.y, q.y);
                let d: Vec<f64> = q.x.iter().zip(&p.x).map(|(a, b)| a - b).collect();
                assert!(sq_dist(&d, &delta) < 1e-24);
            }
        }
    }

    #[test]
    fn gauss_noise_displacements_scale_linearly_in_severity() {
        let ds = small_task();
        let pts = &ds.domains["rot000"];
        let s1 = apply_corruption(pts, CorruptionKind::GaussNoise, 1, 21).unwrap();
        let s5 = apply_corruption(pts, CorruptionKind::GaussNoise, 5, 21).unwrap();
        for ((p, a), b) in pts.iter().zip(&s1).zip(&s5) {
            for j in 0..2 {
                let d1 = a.x[j] - p.x[j];
                let d5 = b.x[j] - p.x[j];
                assert!((d5 - 5.0 * d1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corruption_is_deterministic_and_checks_severity() {
        let ds = small_task();
        let pts = &ds.domains["rot000"];
        for kind in [
            CorruptionKind::GaussNoise,
            CorruptionKind::Shift,
            CorruptionKind::Scale,
            CorruptionKind::Shear,
            CorruptionKind::BlendConstant,
        ] {
            let a = apply_corruption(pts, kind, 3, 5).unwrap();
            let b = apply_corruption(pts, kind, 3, 5).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), pts.len());
            assert!(a.iter().zip(pts).all(|(q, p)| q.y == p.y));
        }
        assert!(apply_corruption(pts, CorruptionKind::Scale, 0, 5).is_err());
        assert!(apply_corruption(pts, CorruptionKind::Scale, 6, 5).is_err());
    }

    #[test]
    fn split_is_stratified_and_partitions_the_data() {
        let ds = make_rotated_task(BaseShape::Blobs, 100, &[0.0, 15.0], 0.3, 13).unwrap();
        let (tr, te) = split(&ds, 0.9, 99).unwrap();
        for id in ds.domains.keys() {
            assert_eq!(tr.domains[id].len(), 90);
            assert_eq!(te.domains[id].len(), 10);
            for class in 0..2 {
                let n = |pts: &Vec<LabeledPoint>| pts.iter().filter(|p| p.y == class).count();
                assert_eq!(n(&tr.domains[id]), 45);
                assert_eq!(n(&te.domains[id]), 5);
            }
            // Union as multiset: both sides preserve original order, so a
            // merge by subsequence equality suffices.
            let mut merged: Vec<&LabeledPoint> = tr.domains[id].iter().collect();
            merged.extend(te.domains[id].iter());
            merged.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
            let mut orig: Vec<&LabeledPoint> = ds.domains[id].iter().collect();
            orig.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
            assert_eq!(merged, orig);
        }
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        let ds = small_task();
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
        let mut tiny = DomainDataset::default();
        tiny.domains.insert(
            "a".into(),
            vec![
                LabeledPoint { x: vec![0.0, 0.0], y: 0 },
                LabeledPoint { x: vec![1.0, 0.0], y: 0 },
                LabeledPoint { x: vec![2.0, 0.0], y: 1 },
            ],
        );
        // Class 1 has a single point.
        assert!(split(&tiny, 0.5, 1).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_the_points() {
        let ds = small_task();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.domains, ds.domains);
        assert!(back.meta.is_empty());

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("domain,label,x0,x1\n"));
    }

    #[test]
    fn csv_parser_reports_malformed_rows_with_line_numbers() {
        assert!(matches!(
            parse_csv(""),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_csv("domain,label,x0,x1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        // Mixed dimension: second data row has one coordinate too few.
        let err = parse_csv("domain,label,x0,x1\na,0,1.0,2.0\na,1,3.0\n");
        assert!(matches!(err, Err(Error::Parse { line: 3, .. })));
        let err = parse_csv("domain,label,x0,x1\na,zero,1.0,2.0\n");
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })));
        let err = parse_csv("domain,label,x0,x1\na,0,1.0,inf\n");
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })));
        let err = parse_csv("label,domain,x0\na,0,1.0\n");
        assert!(matches!(err, Err(Error::Parse { line: 1, .. })));
    }
}
