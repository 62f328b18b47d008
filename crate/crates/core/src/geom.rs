//! Coordinate-level domain types and geometric primitives.
//!
//! All coordinates are in Å. A [`Backbone`] is an `L×3` array of Cα positions.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cα coordinates of a chain, `L×3`, in Å.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    coords: Array2<f64>,
}

impl Backbone {
    /// Wraps an `L×3` coordinate array. Requires `L ≥ 2` and finite entries.
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        if coords.ncols() != 3 {
            return Err(Error::InvalidBackbone(format!(
                "expected L×3 coordinates, got {}×{}",
                coords.nrows(),
                coords.ncols()
            )));
        }
        if coords.nrows() < 2 {
            return Err(Error::InvalidBackbone(format!(
                "need at least 2 residues, got {}",
                coords.nrows()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBackbone("non-finite coordinate".into()));
        }
        Ok(Self { coords })
    }

    pub fn from_points(points: &[[f64; 3]]) -> Result<Self> {
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let coords = Array2::from_shape_vec((points.len(), 3), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(coords)
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn coords(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    pub fn into_coords(self) -> Array2<f64> {
        self.coords
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.coords[[i, 0]], self.coords[[i, 1]], self.coords[[i, 2]])
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let m = self.coords.mean_axis(Axis(0)).expect("non-empty backbone");
        Vector3::new(m[0], m[1], m[2])
    }

    /// Applies `x ↦ R·x` to every residue.
    pub fn rotated(&self, rotation: &Rotation) -> Backbone {
        Backbone {
            coords: rotate_rows(self.coords.view(), &rotation.matrix),
        }
    }

    pub fn translated(&self, shift: Vector3<f64>) -> Backbone {
        let mut coords = self.coords.clone();
        for mut row in coords.rows_mut() {
            row[0] += shift.x;
            row[1] += shift.y;
            row[2] += shift.z;
        }
        Backbone { coords }
    }

    /// Distance between residues `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (self.point(i) - self.point(j)).norm()
    }
}

pub(crate) fn rotate_rows(coords: ArrayView2<'_, f64>, m: &Matrix3<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(coords.raw_dim());
    for (src, mut dst) in coords.rows().into_iter().zip(out.rows_mut()) {
        let p = m * Vector3::new(src[0], src[1], src[2]);
        dst[0] = p.x;
        dst[1] = p.y;
        dst[2] = p.z;
    }
    out
}

/// Sizes of the class / architecture / topology label vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    pub n_class: usize,
    pub n_architecture: usize,
    pub n_topology: usize,
}

impl LabelVocab {
    pub fn new(n_class: usize, n_architecture: usize, n_topology: usize) -> Self {
        Self {
            n_class,
            n_architecture,
            n_topology,
        }
    }

    pub fn size(&self, level: Level) -> usize {
        match level {
            Level::Class => self.n_class,
            Level::Architecture => self.n_architecture,
            Level::Topology => self.n_topology,
        }
    }

    pub fn validate(&self, label: &FoldLabel) -> Result<()> {
        for level in Level::ALL {
            if let Some(id) = label.get(level) {
                if id as usize >= self.size(level) {
                    return Err(Error::InvalidLabel(format!(
                        "{level} id {id} outside vocabulary of size {}",
                        self.size(level)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One level of the fold-class hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Class,
    Architecture,
    Topology,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Class, Level::Architecture, Level::Topology];

    pub fn index(self) -> usize {
        match self {
            Level::Class => 0,
            Level::Architecture => 1,
            Level::Topology => 2,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Level::Class => "C",
            Level::Architecture => "A",
            Level::Topology => "T",
        };
        f.write_str(s)
    }
}

/// Hierarchical C/A/T fold label. `None` at a level is the null label.
///
/// A finer level may only be set when every coarser level is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FoldLabel {
    pub class: Option<u32>,
    pub architecture: Option<u32>,
    pub topology: Option<u32>,
}

impl FoldLabel {
    pub fn new(class: Option<u32>, architecture: Option<u32>, topology: Option<u32>) -> Result<Self> {
        let label = Self {
            class,
            architecture,
            topology,
        };
        label.check_hierarchy()?;
        Ok(label)
    }

    pub const fn null() -> Self {
        Self {
            class: None,
            architecture: None,
            topology: None,
        }
    }

    pub const fn cat(c: u32, a: u32, t: u32) -> Self {
        Self {
            class: Some(c),
            architecture: Some(a),
            topology: Some(t),
        }
    }

    pub fn is_null(&self) -> bool {
        self.class.is_none() && self.architecture.is_none() && self.topology.is_none()
    }

    pub fn get(&self, level: Level) -> Option<u32> {
        match level {
            Level::Class => self.class,
            Level::Architecture => self.architecture,
            Level::Topology => self.topology,
        }
    }

    /// Keeps levels up to and including `level`, nulls the rest.
    pub fn truncated(&self, level: Option<Level>) -> FoldLabel {
        match level {
            None => FoldLabel::null(),
            Some(Level::Class) => FoldLabel {
                class: self.class,
                ..FoldLabel::null()
            },
            Some(Level::Architecture) => FoldLabel {
                class: self.class,
                architecture: self.architecture,
                topology: None,
            },
            Some(Level::Topology) => *self,
        }
    }

    /// Finest level that is set.
    pub fn depth(&self) -> Option<Level> {
        if self.topology.is_some() {
            Some(Level::Topology)
        } else if self.architecture.is_some() {
            Some(Level::Architecture)
        } else if self.class.is_some() {
            Some(Level::Class)
        } else {
            None
        }
    }

    pub fn check_hierarchy(&self) -> Result<()> {
        if self.topology.is_some() && self.architecture.is_none() {
            return Err(Error::InvalidLabel("topology set without architecture".into()));
        }
        if self.architecture.is_some() && self.class.is_none() {
            return Err(Error::InvalidLabel("architecture set without class".into()));
        }
        Ok(())
    }

    /// Parses `C`, `C.A` or `C.A.T` with numeric ids.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('.').collect();
        if parts.is_empty() || parts.len() > 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::InvalidLabel(format!("cannot parse label '{s}'")));
        }
        let mut ids = [None; 3];
        for (slot, part) in ids.iter_mut().zip(&parts) {
            *slot = Some(
                part.parse::<u32>()
                    .map_err(|_| Error::InvalidLabel(format!("cannot parse label '{s}'")))?,
            );
        }
        FoldLabel::new(ids[0], ids[1], ids[2])
    }
}

impl fmt::Display for FoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<u32>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        write!(
            f,
            "{}.{}.{}",
            show(self.class),
            show(self.architecture),
            show(self.topology)
        )
    }
}

/// A proper rotation (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    matrix: Matrix3<f64>,
}

impl Rotation {
    const TOL: f64 = 1e-9;

    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        let err = (matrix.transpose() * matrix - Matrix3::identity()).abs().max();
        if err > Self::TOL || (matrix.determinant() - 1.0).abs() > Self::TOL {
            return Err(Error::InvalidArgument("matrix is not a proper rotation".into()));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn transpose(&self) -> Rotation {
        Rotation {
            matrix: self.matrix.transpose(),
        }
    }

    /// Largest absolute deviation from orthonormality and unit determinant.
    pub fn orthonormality_error(&self) -> f64 {
        let ortho = (self.matrix.transpose() * self.matrix - Matrix3::identity()).abs().max();
        ortho.max((self.matrix.determinant() - 1.0).abs())
    }

    /// Rotation by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Rotation {
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Rotation {
            matrix: *r.matrix(),
        }
    }
}

/// Subtracts the centroid of the masked residues (all residues when `mask` is `None`).
pub fn center_backbone(backbone: &Backbone, mask: Option<&[bool]>) -> Result<Backbone> {
    let center = match mask {
        None => backbone.centroid(),
        Some(mask) => {
            if mask.len() != backbone.len() {
                return Err(Error::Shape(format!(
                    "mask length {} != backbone length {}",
                    mask.len(),
                    backbone.len()
                )));
            }
            let n = mask.iter().filter(|&&m| m).count();
            if n == 0 {
                return Err(Error::InvalidArgument("centering mask selects no residues".into()));
            }
            let mut sum = Vector3::zeros();
            for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                sum += backbone.point(i);
            }
            sum / n as f64
        }
    };
    Ok(backbone.translated(-center))
}

/// Draws a rotation uniformly from SO(3) via a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let quat = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[0], q[1], q[2], q[3],
        ));
        return Rotation {
            matrix: *quat.to_rotation_matrix().matrix(),
        };
    }
}

/// Result of an optimal superposition.
#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    /// Rotation `R` minimizing `Σ‖R·(mobile_i − c_m) − (target_i − c_t)‖²`.
    pub rotation: Rotation,
    pub rmsd: f64,
}

/// Kabsch superposition of `mobile` onto `target`. Both are centered internally.
pub fn kabsch_align(mobile: &Backbone, target: &Backbone) -> Result<Alignment> {
    if mobile.len() != target.len() {
        return Err(Error::Shape(format!(
            "kabsch: lengths differ ({} vs {})",
            mobile.len(),
            target.len()
        )));
    }
    if mobile.len() < 3 {
        return Err(Error::InvalidArgument("kabsch needs at least 3 points".into()));
    }
    let p = center_backbone(mobile, None)?;
    let q = center_backbone(target, None)?;
    let rotation = kabsch_rotation(p.coords(), q.coords());
    let moved = rotate_rows(p.coords(), &rotation.matrix);
    let rmsd = rmsd_raw(moved.view(), q.coords());
    Ok(Alignment { rotation, rmsd })
}

/// Optimal rotation for already-centered point sets.
pub(crate) fn kabsch_rotation(p: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> Rotation {
    let mut h = Matrix3::<f64>::zeros();
    for (a, b) in p.rows().into_iter().zip(q.rows()) {
        for r in 0..3 {
            for c in 0..3 {
                h[(r, c)] += a[r] * b[c];
            }
        }
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let matrix = v * correction * u.transpose();
    Rotation { matrix }
}

/// RMSD without any superposition.
pub fn rmsd_raw(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows().max(1) as f64;
    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    (sq / n).sqrt()
}

/// Root mean squared distance of residues to their centroid.
pub fn radius_of_gyration(backbone: &Backbone) -> f64 {
    let c = backbone.centroid();
    let n = backbone.len() as f64;
    let sum: f64 = (0..backbone.len())
        .map(|i| (backbone.point(i) - c).norm_squared())
        .sum();
    (sum / n).sqrt()
}

/// Bin index of a single distance.
///
/// Bin 0 collects `d < d_min`, the last bin `d ≥ d_max`; the `n_bins − 2`
/// interior bins split `[d_min, d_max)` into equal left-closed intervals.
pub fn distance_bin(d: f64, n_bins: usize, d_min: f64, d_max: f64) -> usize {
    if d < d_min {
        return 0;
    }
    if d >= d_max {
        return n_bins - 1;
    }
    let width = (d_max - d_min) / (n_bins - 2) as f64;
    let k = ((d - d_min) / width).floor() as usize;
    1 + k.min(n_bins - 3)
}

/// Symmetric `L×L` matrix of binned pairwise distances.
pub fn pair_distance_bins(
    backbone: &Backbone,
    n_bins: usize,
    d_min: f64,
    d_max: f64,
) -> Result<Array2<usize>> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument("n_bins must be at least 2".into()));
    }
    if d_min >= d_max {
        return Err(Error::InvalidArgument("d_min must be below d_max".into()));
    }
    let l = backbone.len();
    let mut out = Array2::zeros((l, l));
    for i in 0..l {
        for j in (i + 1)..l {
            let b = if n_bins == 2 {
                usize::from(backbone.distance(i, j) >= d_min)
            } else {
                distance_bin(backbone.distance(i, j), n_bins, d_min, d_max)
            };
            out[[i, j]] = b;
            out[[j, i]] = b;
        }
    }
    Ok(out)
}

/// Length-dependent TM-score distance scale, clamped below at 0.5 Å.
pub fn tm_d0(l: usize) -> f64 {
    (1.24 * (l as f64 - 15.0).cbrt() - 1.8).max(0.5)
}

/// TM-score-like similarity under fixed `i ↔ i` correspondence after Kabsch superposition.
///
/// Averaged over both superposition directions so the score is symmetric.
pub fn tm_proxy(a: &Backbone, b: &Backbone) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "tm_proxy: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 15 {
        return Err(Error::InvalidArgument(format!(
            "tm_proxy needs L >= 15, got {}",
            a.len()
        )));
    }
    let forward = tm_one_way(a, b)?;
    let backward = tm_one_way(b, a)?;
    Ok(0.5 * (forward + backward))
}

fn tm_one_way(mobile: &Backbone, target: &Backbone) -> Result<f64> {
    let p = center_backbone(mobile, None)?;
    let q = center_backbone(target, None)?;
    let rot = kabsch_rotation(p.coords(), q.coords());
    let moved = rotate_rows(p.coords(), &rot.matrix);
    let d0 = tm_d0(mobile.len());
    let l = mobile.len() as f64;
    let score: f64 = moved
        .rows()
        .into_iter()
        .zip(q.coords().rows())
        .map(|(x, y)| {
            let d2 = (0..3).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>();
            1.0 / (1.0 + d2 / (d0 * d0))
        })
        .sum();
    Ok(score / l)
}

/// Per-residue quality scores (pLDDT-like, 0–100) and provenance for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureRecord {
    pub backbone: Backbone,
    /// One label per domain; empty when unlabeled.
    pub labels: Vec<FoldLabel>,
    pub source_id: String,
    pub confidence: Option<Vec<f64>>,
}

impl StructureRecord {
    pub fn new(
        backbone: Backbone,
        labels: Vec<FoldLabel>,
        source_id: impl Into<String>,
        confidence: Option<Vec<f64>>,
    ) -> Result<Self> {
        if let Some(conf) = &confidence {
            if conf.len() != backbone.len() {
                return Err(Error::Shape(format!(
                    "confidence length {} != backbone length {}",
                    conf.len(),
                    backbone.len()
                )));
            }
            if conf.iter().any(|c| !(0.0..=100.0).contains(c)) {
                return Err(Error::InvalidArgument("confidence outside [0, 100]".into()));
            }
        }
        for label in &labels {
            label.check_hierarchy()?;
        }
        Ok(Self {
            backbone,
            labels,
            source_id: source_id.into(),
            confidence,
        })
    }

    pub fn len(&self) -> usize {
        self.backbone.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backbone.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_backbone(rng: &mut ChaCha8Rng, l: usize, scale: f64) -> Backbone {
        let pts: Vec<[f64; 3]> = (0..l)
            .map(|_| {
                [
                    scale * rng.sample::<f64, _>(StandardNormal),
                    scale * rng.sample::<f64, _>(StandardNormal),
                    scale * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        Backbone::from_points(&pts).unwrap()
    }

    #[test]
    fn center_examples() {
        let b = Backbone::from_points(&[[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        let c = center_backbone(&b, None).unwrap();
        assert_eq!(c.coords()[[0, 0]], -1.0);
        assert_eq!(c.coords()[[1, 0]], 1.0);

        let b = Backbone::from_points(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]).unwrap();
        let c = center_backbone(&b, Some(&[true, true, false])).unwrap();
        let xs: Vec<f64> = c.coords().column(0).to_vec();
        assert_eq!(xs, vec![-1.0, 1.0, 3.0]);

        assert!(center_backbone(&b, Some(&[false, false, false])).is_err());
    }

    #[test]
    fn center_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = random_backbone(&mut rng, 30, 10.0).translated(Vector3::new(5.0, -3.0, 2.0));
            let c1 = center_backbone(&b, None).unwrap();
            let c2 = center_backbone(&c1, None).unwrap();
            assert!(c1.centroid().norm() < 1e-9);
            for (x, y) in c1.coords().iter().zip(c2.coords().iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_rotations_are_proper_and_deterministic() {
        for seed in 0..10_000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rotation(&mut rng);
            assert!(r.orthonormality_error() < 1e-9);
        }
        let a = random_rotation(&mut ChaCha8Rng::seed_from_u64(7));
        let b = random_rotation(&mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn haar_trace_moments() {
        // Invariance gives E[R] = 0, so E[tr R] = 0; the second moment E[(tr R)^2] = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let traces: Vec<f64> = (0..n).map(|_| random_rotation(&mut rng).matrix().trace()).collect();
        let mean = traces.iter().sum::<f64>() / n as f64;
        let second = traces.iter().map(|t| t * t).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean trace {mean}");
        assert!((second - 1.0).abs() < 0.05, "second moment {second}");
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_backbone(&mut rng, 40, 8.0);
            let r = random_rotation(&mut rng);
            let b = a.rotated(&r).translated(Vector3::new(3.0, 1.0, -7.0));
            let al = kabsch_align(&a, &b).unwrap();
            assert!(al.rmsd < 1e-6);
            assert!((al.rotation.matrix() - r.matrix()).abs().max() < 1e-6);
        }
        let a = random_backbone(&mut rng, 10, 5.0);
        let al = kabsch_align(&a, &a).unwrap();
        assert!(al.rmsd < 1e-9);
        assert!((al.rotation.matrix() - Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn kabsch_handles_degenerate_sets() {
        // Collinear points: rank-deficient covariance.
        let pts: Vec<[f64; 3]> = (0..6).map(|i| [i as f64, 0.0, 0.0]).collect();
        let a = Backbone::from_points(&pts).unwrap();
        let r = Rotation::from_axis_angle(Vector3::new(0.0, 0.0, 1.0), 0.7);
        let al = kabsch_align(&a, &a.rotated(&r)).unwrap();
        assert!(al.rotation.orthonormality_error() < 1e-9);
        assert!(al.rmsd < 1e-9);
        // Mirror image must not be matched by an improper rotation.
        let b = random_backbone(&mut ChaCha8Rng::seed_from_u64(4), 20, 5.0);
        let mut mirrored = b.clone().into_coords();
        mirrored.column_mut(2).mapv_inplace(|z| -z);
        let al = kabsch_align(&b, &Backbone::new(mirrored).unwrap()).unwrap();
        assert!((al.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kabsch_jitter_rmsd_matches_monte_carlo_expectation() {
        // Expected RMSD of an isotropic σ-jitter after optimal superposition:
        // E[rmsd²] ≈ 3σ²·(1 − c/L) with c = 2 (3 translational + 3 rotational dof over 3 coords).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = 100;
        let sigma = 0.1;
        let mut acc = 0.0;
        for _ in 0..100 {
            let a = random_backbone(&mut rng, l, 10.0);
            let mut b = a.clone().into_coords();
            b.mapv_inplace(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
            acc += kabsch_align(&a, &Backbone::new(b).unwrap()).unwrap().rmsd;
        }
        let mean = acc / 100.0;
        let expected = sigma * 3f64.sqrt() * (1.0 - 2.0 / l as f64).sqrt();
        assert!((mean - expected).abs() / expected < 0.2, "mean {mean} expected {expected}");
    }

    #[test]
    fn rgyr_examples() {
        let b = Backbone::from_points(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(radius_of_gyration(&b), 1.0, epsilon = 1e-12);
        let b = Backbone::from_points(&[[1.0, 2.0, 3.0]; 4]).unwrap();
        assert_abs_diff_eq!(radius_of_gyration(&b), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_bin_boundaries() {
        assert_eq!(distance_bin(0.5, 64, 1.0, 30.0), 0);
        assert_eq!(distance_bin(31.0, 64, 1.0, 30.0), 63);
        assert_eq!(distance_bin(1.0, 64, 1.0, 30.0), 1);
        assert_eq!(distance_bin(30.0, 64, 1.0, 30.0), 63);
        assert_eq!(distance_bin(29.9999, 64, 1.0, 30.0), 62);
    }

    #[test]
    fn pair_bins_symmetric_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_backbone(&mut rng, 25, 12.0);
        let bins = pair_distance_bins(&b, 64, 1.0, 30.0).unwrap();
        for i in 0..25 {
            assert_eq!(bins[[i, i]], 0);
            for j in 0..25 {
                assert_eq!(bins[[i, j]], bins[[j, i]]);
                assert!(bins[[i, j]] < 64);
            }
        }
        assert!(pair_distance_bins(&b, 1, 1.0, 30.0).is_err());
        assert!(pair_distance_bins(&b, 64, 30.0, 1.0).is_err());
    }

    #[test]
    fn tm_proxy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_backbone(&mut rng, 50, 8.0);
        assert_abs_diff_eq!(tm_proxy(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let r = random_rotation(&mut rng);
        assert!((tm_proxy(&a, &a.rotated(&r)).unwrap() - 1.0).abs() < 1e-6);
        let b = random_backbone(&mut rng, 50, 8.0);
        let ab = tm_proxy(&a, &b).unwrap();
        let ba = tm_proxy(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        let short = random_backbone(&mut rng, 10, 8.0);
        assert!(tm_proxy(&short, &short).is_err());
    }

    #[test]
    fn label_hierarchy_and_parse() {
        assert!(FoldLabel::new(None, Some(1), None).is_err());
        assert!(FoldLabel::new(Some(0), None, Some(1)).is_err());
        assert_eq!(FoldLabel::parse("2").unwrap(), FoldLabel::new(Some(2), None, None).unwrap());
        assert_eq!(FoldLabel::parse("1.3.5").unwrap(), FoldLabel::cat(1, 3, 5));
        assert!(FoldLabel::parse("1..2").is_err());
        assert!(FoldLabel::parse("a").is_err());
        let vocab = LabelVocab::new(3, 6, 12);
        assert!(vocab.validate(&FoldLabel::cat(2, 5, 11)).is_ok());
        assert!(vocab.validate(&FoldLabel::cat(3, 0, 0)).is_err());
    }

    #[test]
    fn record_confidence_validation() {
        let b = Backbone::from_points(&[[0.0; 3], [3.8, 0.0, 0.0]]).unwrap();
        assert!(StructureRecord::new(b.clone(), vec![], "x", Some(vec![90.0])).is_err());
        assert!(StructureRecord::new(b.clone(), vec![], "x", Some(vec![90.0, 101.0])).is_err());
        assert!(StructureRecord::new(b, vec![], "x", Some(vec![90.0, 80.0])).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn rigid_motion_is_removed_by_kabsch(seed in 0u64..10_000, tx in -50.0f64..50.0, ty in -50.0f64..50.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_backbone(&mut rng, 12, 6.0);
                let r = random_rotation(&mut rng);
                let b = a.rotated(&r).translated(Vector3::new(tx, ty, -tx));
                prop_assert!(kabsch_align(&a, &b).unwrap().rmsd < 1e-6);
            }
        }
    }
}
