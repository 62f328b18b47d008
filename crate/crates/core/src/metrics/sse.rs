//! Cα-only secondary structure assignment (P-SEA).
//!
//! Per residue `i` the criteria use the local window `i−1 .. i+3`:
//! `d2 = |x_{i−1} − x_{i+1}|`, `d3 = |x_{i−1} − x_{i+2}|`, `d4 = |x_{i−1} − x_{i+3}|`,
//! the bond angle at `i` and the dihedral over `i−1, i, i+1, i+2`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Backbone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SecondaryStructure {
    Helix,
    Strand,
    Coil,
}

impl SecondaryStructure {
    pub fn code(self) -> char {
        match self {
            SecondaryStructure::Helix => 'a',
            SecondaryStructure::Strand => 'b',
            SecondaryStructure::Coil => 'c',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SseFractions {
    pub helix: f64,
    pub strand: f64,
    pub coil: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SseAssignment {
    pub states: Vec<SecondaryStructure>,
    pub fractions: SseFractions,
}

const DEG: f64 = PI / 180.0;

// (center, half-width); distances in Å, angles in degrees.
const HELIX_D3: (f64, f64) = (5.3, 0.5);
const HELIX_D4: (f64, f64) = (6.4, 0.6);
const HELIX_ANGLE: (f64, f64) = (89.0, 12.0);
const HELIX_DIHEDRAL: (f64, f64) = (50.0, 20.0);
const STRAND_D2: (f64, f64) = (6.7, 0.6);
const STRAND_D3: (f64, f64) = (9.9, 0.9);
const STRAND_D4: (f64, f64) = (12.4, 1.1);
const STRAND_ANGLE: (f64, f64) = (124.0, 14.0);
/// Strand dihedral lies in [−180, −125] ∪ [145, 180].
const STRAND_DIHEDRAL: (f64, f64) = (-125.0, 145.0);

const MIN_HELIX: usize = 5;
const MIN_STRAND: usize = 3;

fn within(x: f64, (c, w): (f64, f64)) -> bool {
    (x - c).abs() <= w
}

fn angle(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> f64 {
    let u = a - b;
    let v = c - b;
    (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
}

/// Signed dihedral in radians, `(−π, π]`.
pub fn dihedral(p0: Vector3<f64>, p1: Vector3<f64>, p2: Vector3<f64>, p3: Vector3<f64>) -> f64 {
    let b0 = p0 - p1;
    let b1 = p2 - p1;
    let b2 = p3 - p2;
    let b1n = b1 / b1.norm();
    let v = b0 - b1n * b0.dot(&b1n);
    let w = b2 - b1n * b2.dot(&b1n);
    let x = v.dot(&w);
    let y = b1n.cross(&v).dot(&w);
    y.atan2(x)
}

/// Bond angle at `i` (radians) for `1 ≤ i ≤ L−2`.
pub fn bond_angle(bb: &Backbone, i: usize) -> f64 {
    angle(bb.point(i - 1), bb.point(i), bb.point(i + 1))
}

/// Dihedral over `i−1, i, i+1, i+2` for `1 ≤ i ≤ L−3`.
pub fn residue_dihedral(bb: &Backbone, i: usize) -> f64 {
    dihedral(bb.point(i - 1), bb.point(i), bb.point(i + 1), bb.point(i + 2))
}

fn mark_runs(flags: &[bool], min_len: usize, states: &mut [SecondaryStructure], state: SecondaryStructure) {
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flags.len() && flags[i] {
            i += 1;
        }
        if i - start >= min_len {
            for s in &mut states[start..i] {
                if *s == SecondaryStructure::Coil {
                    *s = state;
                }
            }
        }
    }
}

fn extend(states: &mut [SecondaryStructure], state: SecondaryStructure) {
    let orig = states.to_vec();
    for i in 0..orig.len() {
        if orig[i] != state {
            continue;
        }
        if i > 0 && orig[i - 1] == SecondaryStructure::Coil {
            states[i - 1] = state;
        }
        if i + 1 < orig.len() && orig[i + 1] == SecondaryStructure::Coil {
            states[i + 1] = state;
        }
    }
}

pub fn secondary_structure(bb: &Backbone) -> Result<SseAssignment> {
    let l = bb.len();
    if l < 5 {
        return Err(Error::InvalidBackbone(format!("secondary structure needs L >= 5, got {l}")));
    }
    let mut helix = vec![false; l];
    let mut strand = vec![false; l];
    for i in 1..l - 2 {
        let d2 = bb.distance(i - 1, i + 1);
        let d3 = bb.distance(i - 1, i + 2);
        let ang = bond_angle(bb, i) / DEG;
        let d4 = (i + 3 < l).then(|| bb.distance(i - 1, i + 3));
        let dih = (i + 2 < l).then(|| residue_dihedral(bb, i) / DEG);
        let (Some(d4), Some(dih)) = (d4, dih) else { continue };
        helix[i] = (within(d3, HELIX_D3) && within(d4, HELIX_D4))
            || (within(ang, HELIX_ANGLE) && within(dih, HELIX_DIHEDRAL));
        let dih_strand = dih <= STRAND_DIHEDRAL.0 || dih >= STRAND_DIHEDRAL.1;
        strand[i] = (within(d2, STRAND_D2) && within(d3, STRAND_D3) && within(d4, STRAND_D4))
            || (within(ang, STRAND_ANGLE) && dih_strand);
    }
    let mut states = vec![SecondaryStructure::Coil; l];
    mark_runs(&helix, MIN_HELIX, &mut states, SecondaryStructure::Helix);
    extend(&mut states, SecondaryStructure::Helix);
    mark_runs(&strand, MIN_STRAND, &mut states, SecondaryStructure::Strand);
    extend(&mut states, SecondaryStructure::Strand);

    let count = |s| states.iter().filter(|x| **x == s).count();
    let (h, e) = (count(SecondaryStructure::Helix), count(SecondaryStructure::Strand));
    let helix = h as f64 / l as f64;
    let strand = e as f64 / l as f64;
    // Coil as the complement so the three fractions sum to exactly 1.
    let fractions = SseFractions {
        helix,
        strand,
        coil: 1.0 - (helix + strand),
    };
    Ok(SseAssignment { states, fractions })
}
