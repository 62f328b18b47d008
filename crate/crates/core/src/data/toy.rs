//! Procedural labeled Cα structures.
//!
//! Twelve topologies in a 3 / 6 / 12 class / architecture / topology vocabulary.
//! Each topology is a layout of ideal helices and strands placed on a coarse grid
//! and joined by circular-arc loops with exact 3.8 Å spacing.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{radius_of_gyration, Backbone, FoldLabel, LabelVocab, StructureRecord};

pub const CA_SPACING: f64 = 3.8;
pub const N_TOPOLOGIES: usize = 12;

const HELIX_TURN_DEG: f64 = 100.0;
const HELIX_RISE: f64 = 1.5;
const STRAND_BOND_ANGLE_DEG: f64 = 120.0;
const HELIX_SPACING: f64 = 10.0;
const STRAND_SPACING: f64 = 4.8;
const LAYER_SPACING: f64 = 10.0;

pub fn toy_vocab() -> LabelVocab {
    LabelVocab::new(3, 6, 12)
}

pub const CLASS_NAMES: [&str; 3] = ["mainly-alpha", "mainly-beta", "alpha-beta"];
pub const ARCHITECTURE_NAMES: [&str; 6] = [
    "helix-hairpin",
    "helix-bundle",
    "beta-meander",
    "beta-sandwich",
    "beta-alpha-beta",
    "alpha-plus-sheet",
];
pub const TOPOLOGY_NAMES: [&str; 12] = [
    "antiparallel-hairpin",
    "crossed-hairpin",
    "three-helix-bundle",
    "four-helix-bundle",
    "four-strand-meander",
    "six-strand-meander",
    "three-on-three-sandwich",
    "two-on-two-sandwich",
    "beta-alpha-beta",
    "beta-alpha-beta-alpha-beta",
    "helix-then-sheet",
    "sheet-then-helix",
];

/// Label of a topology id: class = arch / 2, arch = topology / 2.
pub fn topology_label(topology: u32) -> FoldLabel {
    let a = topology / 2;
    FoldLabel::cat(a / 2, a, topology)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Helix,
    Strand,
}

#[derive(Debug, Clone, Copy)]
struct SegmentPlan {
    kind: SegmentKind,
    /// Axis position in the plane perpendicular to the long axis (Å).
    x: f64,
    y: f64,
    /// +1 runs along +z, −1 along −z.
    dir: f64,
    /// Relative share of the residue budget.
    weight: f64,
    /// Axis tilt about x in degrees.
    tilt: f64,
}

fn seg(kind: SegmentKind, x: f64, y: f64, dir: f64, weight: f64) -> SegmentPlan {
    SegmentPlan {
        kind,
        x,
        y,
        dir,
        weight,
        tilt: 0.0,
    }
}

fn layout(topology: u32) -> Vec<SegmentPlan> {
    use SegmentKind::{Helix as H, Strand as S};
    let h = HELIX_SPACING;
    let s = STRAND_SPACING;
    let y = LAYER_SPACING;
    match topology {
        0 => vec![seg(H, 0.0, 0.0, 1.0, 1.0), seg(H, h, 0.0, -1.0, 1.0)],
        1 => vec![
            seg(H, 0.0, 0.0, 1.0, 1.0),
            SegmentPlan {
                tilt: 50.0,
                ..seg(H, h, 0.0, -1.0, 1.0)
            },
        ],
        2 => vec![
            seg(H, 0.0, 0.0, 1.0, 1.0),
            seg(H, h, 0.0, -1.0, 1.0),
            seg(H, h / 2.0, h * 0.866, 1.0, 1.0),
        ],
        3 => vec![
            seg(H, 0.0, 0.0, 1.0, 1.0),
            seg(H, h, 0.0, -1.0, 1.0),
            seg(H, h, h, 1.0, 1.0),
            seg(H, 0.0, h, -1.0, 1.0),
        ],
        4 => (0..4).map(|i| seg(S, s * i as f64, 0.0, if i % 2 == 0 { 1.0 } else { -1.0 }, 1.0)).collect(),
        5 => (0..6).map(|i| seg(S, s * i as f64, 0.0, if i % 2 == 0 { 1.0 } else { -1.0 }, 1.0)).collect(),
        6 => vec![
            seg(S, 0.0, 0.0, 1.0, 1.0),
            seg(S, s, 0.0, -1.0, 1.0),
            seg(S, 2.0 * s, 0.0, 1.0, 1.0),
            seg(S, 2.0 * s, y, -1.0, 1.0),
            seg(S, s, y, 1.0, 1.0),
            seg(S, 0.0, y, -1.0, 1.0),
        ],
        7 => vec![
            seg(S, 0.0, 0.0, 1.0, 1.0),
            seg(S, s, 0.0, -1.0, 1.0),
            seg(S, s, y, 1.0, 1.0),
            seg(S, 0.0, y, -1.0, 1.0),
        ],
        8 => vec![
            seg(S, 0.0, 0.0, 1.0, 1.0),
            seg(H, s / 2.0, y, -1.0, 1.4),
            seg(S, s, 0.0, 1.0, 1.0),
        ],
        9 => vec![
            seg(S, s, 0.0, 1.0, 1.0),
            seg(H, 0.0, y, -1.0, 1.4),
            seg(S, 0.0, 0.0, 1.0, 1.0),
            seg(H, 2.0 * s, y, -1.0, 1.4),
            seg(S, 2.0 * s, 0.0, 1.0, 1.0),
        ],
        10 => vec![
            seg(H, s, y, 1.0, 1.5),
            seg(S, 0.0, 0.0, -1.0, 1.0),
            seg(S, s, 0.0, 1.0, 1.0),
            seg(S, 2.0 * s, 0.0, -1.0, 1.0),
        ],
        11 => vec![
            seg(S, 0.0, 0.0, 1.0, 1.0),
            seg(S, s, 0.0, -1.0, 1.0),
            seg(S, 2.0 * s, 0.0, 1.0, 1.0),
            seg(H, s, y, -1.0, 1.5),
        ],
        _ => unreachable!("topology id checked by caller"),
    }
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub length: usize,
    /// Topologies to draw from (uniformly); ids in `0..12`.
    pub topologies: Vec<u32>,
    /// Std of isotropic Gaussian noise added to every Cα (Å).
    pub coord_jitter: f64,
    /// Std of the per-segment axis displacement (Å).
    pub placement_jitter: f64,
    /// Max per-segment deviation from the nominal residue count.
    pub length_jitter: usize,
    /// Std of the per-segment tilt (degrees).
    pub tilt_jitter: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            length: 64,
            topologies: (0..N_TOPOLOGIES as u32).collect(),
            coord_jitter: 0.05,
            placement_jitter: 0.7,
            length_jitter: 2,
            tilt_jitter: 6.0,
        }
    }
}

impl ToySpec {
    pub fn with_length(length: usize) -> Self {
        Self {
            length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.topologies.is_empty() {
            return Err(Error::Config("toy spec has no topologies".into()));
        }
        if let Some(t) = self.topologies.iter().find(|t| **t as usize >= N_TOPOLOGIES) {
            return Err(Error::Config(format!("unknown toy topology {t}")));
        }
        if self.length < 40 {
            return Err(Error::Config(format!("toy length must be >= 40, got {}", self.length)));
        }
        for (name, v) in [
            ("coord_jitter", self.coord_jitter),
            ("placement_jitter", self.placement_jitter),
            ("tilt_jitter", self.tilt_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Ideal right-handed α-helix along +z starting at the origin.
pub fn ideal_helix(n: usize) -> Backbone {
    backbone_from(&helix_points(n, 0.0))
}

/// Ideal extended strand along +z.
pub fn ideal_strand(n: usize) -> Backbone {
    backbone_from(&strand_points(n))
}

fn helix_points(n: usize, phase: f64) -> Vec<Vector3<f64>> {
    let turn = HELIX_TURN_DEG.to_radians();
    let chord = (CA_SPACING.powi(2) - HELIX_RISE.powi(2)).sqrt();
    let r = chord / (2.0 * (turn / 2.0).sin());
    (0..n)
        .map(|i| {
            let a = phase + turn * i as f64;
            Vector3::new(r * a.cos(), r * a.sin(), HELIX_RISE * i as f64)
        })
        .collect()
}

/// Pleated strand along +z: planar zigzag in the y–z plane with 120° Cα angles.
fn strand_points(n: usize) -> Vec<Vector3<f64>> {
    let half = (STRAND_BOND_ANGLE_DEG / 2.0).to_radians();
    let dz = CA_SPACING * half.sin();
    let dy = CA_SPACING * half.cos();
    (0..n)
        .map(|i| Vector3::new(0.0, if i % 2 == 0 { -dy / 2.0 } else { dy / 2.0 }, dz * i as f64))
        .collect()
}

fn axial_extent(kind: SegmentKind, n: usize) -> f64 {
    let step = match kind {
        SegmentKind::Helix => HELIX_RISE,
        SegmentKind::Strand => CA_SPACING * (STRAND_BOND_ANGLE_DEG / 2.0).to_radians().sin(),
    };
    step * (n.saturating_sub(1)) as f64
}

/// Self-avoiding random walk with 3.8 Å steps; no two Cα closer than 4 Å.
pub fn random_coil<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Backbone {
    let mut pts: Vec<Vector3<f64>> = vec![Vector3::zeros()];
    let mut stalls = 0;
    while pts.len() < n {
        let d = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let next = pts[pts.len() - 1] + d.normalize() * CA_SPACING;
        if pts[..pts.len() - 1].iter().all(|p| (p - next).norm() > 4.0) {
            pts.push(next);
            stalls = 0;
        } else {
            stalls += 1;
            if stalls > 1000 {
                // Trapped: back off a few residues.
                let keep = pts.len().saturating_sub(5).max(1);
                pts.truncate(keep);
                stalls = 0;
            }
        }
    }
    backbone_from(&pts)
}

fn backbone_from(pts: &[Vector3<f64>]) -> Backbone {
    let arr: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
    Backbone::from_points(&arr).expect("finite generated coordinates")
}

/// Residues strictly between `p` and `q` on a circular arc of `k` equal 3.8 Å chords,
/// bulging along `bulge`. Requires `k·3.8 > |q − p|`.
fn arc_loop(p: Vector3<f64>, q: Vector3<f64>, k: usize, bulge: Vector3<f64>) -> Vec<Vector3<f64>> {
    let chord = q - p;
    let d = chord.norm();
    let u = chord / d;
    let mut w = bulge - u * bulge.dot(&u);
    if w.norm() < 1e-6 {
        let trial = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        w = trial - u * trial.dot(&u);
    }
    let w = w.normalize();
    let c = CA_SPACING;
    let kf = k as f64;
    // Solve c·sin(kφ/2)/sin(φ/2) = d for φ in (0, 2π/k).
    let f = |phi: f64| c * (kf * phi / 2.0).sin() / (phi / 2.0).sin() - d;
    let (mut lo, mut hi) = (1e-9, 2.0 * std::f64::consts::PI / kf - 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = 0.5 * (lo + hi);
    let r = c / (2.0 * (phi / 2.0).sin());
    let big = kf * phi / 2.0;
    let mid = (p + q) / 2.0;
    (1..k)
        .map(|j| {
            let a = -big + j as f64 * phi;
            mid + u * (r * a.sin()) + w * (r * a.cos() - r * big.cos())
        })
        .collect()
}

fn loop_chords(p: Vector3<f64>, q: Vector3<f64>) -> usize {
    let d = (q - p).norm();
    ((d / CA_SPACING) * 1.25).ceil().max(3.0) as usize
}

/// Random pose of one segment; the first residue's position does not depend on its length.
struct Placement {
    phase: f64,
    orient: Rotation3<f64>,
    centre: Vector3<f64>,
    anchor_extent: f64,
}

fn draw_placement<R: Rng + ?Sized>(plan: &SegmentPlan, nominal: usize, spec: &ToySpec, rng: &mut R) -> Placement {
    let mut normal = || rng.sample::<f64, _>(StandardNormal);
    let tilt = (plan.tilt + spec.tilt_jitter * normal()).to_radians();
    let yaw = (spec.tilt_jitter * normal()).to_radians();
    let flip = if plan.dir < 0.0 {
        Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    } else {
        Rotation3::identity()
    };
    let orient = Rotation3::from_axis_angle(&Vector3::x_axis(), tilt)
        * Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::y()), yaw)
        * flip;
    let centre = Vector3::new(
        plan.x + spec.placement_jitter * normal(),
        plan.y + spec.placement_jitter * normal(),
        spec.placement_jitter * normal(),
    );
    Placement {
        phase: rng.gen::<f64>() * std::f64::consts::TAU,
        orient,
        centre,
        anchor_extent: axial_extent(plan.kind, nominal),
    }
}

fn segment_points(plan: &SegmentPlan, n: usize, pose: &Placement) -> Vec<Vector3<f64>> {
    let local = match plan.kind {
        SegmentKind::Helix => helix_points(n, pose.phase),
        SegmentKind::Strand => strand_points(n),
    };
    let shift = Vector3::new(0.0, 0.0, pose.anchor_extent / 2.0);
    local.iter().map(|p| pose.orient * (p - shift) + pose.centre).collect()
}

/// One structure of the given topology with exactly `spec.length` residues.
pub fn generate_structure<R: Rng + ?Sized>(topology: u32, spec: &ToySpec, rng: &mut R) -> Result<Backbone> {
    if topology as usize >= N_TOPOLOGIES {
        return Err(Error::Config(format!("unknown toy topology {topology}")));
    }
    let plans = layout(topology);
    let l = spec.length;
    let loop_budget = 5 * (plans.len() - 1);
    let total_weight: f64 = plans.iter().map(|p| p.weight).sum();
    let usable = l.saturating_sub(loop_budget) as f64;
    for _attempt in 0..200 {
        let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(l);
        let mut ok = true;
        for (k, plan) in plans.iter().enumerate() {
            let min = match plan.kind {
                SegmentKind::Helix => 7,
                SegmentKind::Strand => 4,
            };
            let nominal = (usable * plan.weight / total_weight).round() as usize;
            let jitter = spec.length_jitter as i64;
            let pose = draw_placement(plan, nominal, spec, rng);
            let mut n = nominal as i64 + rng.gen_range(-jitter..=jitter);
            let start = segment_points(plan, 1, &pose)[0];
            let mut bridge = Vec::new();
            if let Some(prev) = pts.last().copied() {
                let bulge = prev - pts[pts.len() - 2];
                bridge = arc_loop(prev, start, loop_chords(prev, start), bulge);
            }
            if k + 1 == plans.len() {
                n = l as i64 - (pts.len() + bridge.len()) as i64;
            }
            if n < min as i64 {
                ok = false;
                break;
            }
            pts.extend(bridge);
            pts.extend(segment_points(plan, n as usize, &pose));
            if pts.len() > l {
                ok = false;
                break;
            }
        }
        if !ok || pts.len() != l {
            continue;
        }
        let mut out = pts;
        if spec.coord_jitter > 0.0 {
            for p in &mut out {
                *p += Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ) * spec.coord_jitter;
            }
        }
        return Ok(backbone_from(&out));
    }
    Err(Error::Config(format!(
        "could not fit topology {topology} into {l} residues"
    )))
}

/// `n` labeled records, topologies drawn uniformly from the spec.
pub fn generate_toy_dataset<R: Rng + ?Sized>(n: usize, spec: &ToySpec, rng: &mut R) -> Result<Vec<StructureRecord>> {
    spec.validate()?;
    (0..n)
        .map(|i| {
            let topology = *spec.topologies.choose(rng).expect("validated non-empty");
            let bb = generate_structure(topology, spec, rng)?;
            let conf = vec![100.0; bb.len()];
            StructureRecord::new(bb, vec![topology_label(topology)], format!("toy-{i:06}"), Some(conf))
        })
        .collect()
}

/// Cluster key: generating topology plus a 2 Å radius-of-gyration bucket.
pub fn toy_cluster_key(record: &StructureRecord) -> String {
    let t = record
        .labels
        .first()
        .and_then(|l| l.topology)
        .map_or_else(|| "-".to_string(), |t| t.to_string());
    let bucket = (radius_of_gyration(&record.backbone) / 2.0).floor() as i64;
    format!("T{t}-rg{bucket}")
}
