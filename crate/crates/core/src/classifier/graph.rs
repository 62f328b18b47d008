//! Multi-relation residue graph over Cα coordinates.
//!
//! Relations 0..5 connect `i → i+k` for sequence offsets `k = −2..2` (offset 0 is the
//! self-loop); relation 5 connects residue pairs closer than the spatial cutoff.
//! Every feature is a function of distances, angles or signed dihedrals, so the
//! graph is unchanged by rigid motions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Backbone;
use crate::metrics::sse::{bond_angle, residue_dihedral};
use crate::model::nn::sinusoidal;

pub const SEQ_OFFSETS: [i64; 5] = [-2, -1, 0, 1, 2];
pub const N_RELATIONS: usize = SEQ_OFFSETS.len() + 1;
pub const SPATIAL_RELATION: usize = SEQ_OFFSETS.len();
/// Per-residue geometric scalars, see [`node_geometry`].
pub const NODE_GEOM_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Å
    pub spatial_cutoff: f64,
    pub rbf_dim: usize,
    /// Å; RBF centers span `[0, rbf_max]`.
    pub rbf_max: f64,
    pub relpos_dim: usize,
    /// Sequence offsets are clamped to ±this before encoding.
    pub relpos_clamp: i64,
    pub index_dim: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            spatial_cutoff: 10.0,
            rbf_dim: 16,
            rbf_max: 10.0,
            relpos_dim: 16,
            relpos_clamp: 32,
            index_dim: 16,
        }
    }
}

impl GraphConfig {
    pub fn edge_dim(&self) -> usize {
        self.rbf_dim + self.relpos_dim
    }

    pub fn node_dim(&self) -> usize {
        self.index_dim + NODE_GEOM_DIM
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Receiving node.
    pub dst: usize,
    /// Sending node.
    pub src: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinGraph {
    pub len: usize,
    /// `len × node_dim`, row-major.
    pub node_features: Vec<f64>,
    /// Edge lists per relation.
    pub relations: Vec<Vec<Edge>>,
    /// Per relation and receiving node: sum of incoming edge features, `R × len × edge_dim`.
    pub edge_sums: Vec<f64>,
}

/// Gaussian radial basis expansion of a distance.
pub fn rbf(d: f64, dim: usize, max: f64) -> Vec<f64> {
    let step = max / (dim - 1).max(1) as f64;
    let gamma = 1.0 / (step * step);
    (0..dim)
        .map(|k| {
            let c = k as f64 * step;
            (-gamma * (d - c).powi(2)).exp()
        })
        .collect()
}

/// RBF of the distance concatenated with a sinusoidal encoding of `src − dst`.
pub fn edge_features(edge: &Edge, cfg: &GraphConfig) -> Vec<f64> {
    let mut f = rbf(edge.distance, cfg.rbf_dim, cfg.rbf_max);
    let off = (edge.src as i64 - edge.dst as i64).clamp(-cfg.relpos_clamp, cfg.relpos_clamp);
    f.extend(sinusoidal(&[off as f64], cfg.relpos_dim, 1.0));
    f
}

/// `[sin φ, cos φ, has φ, cos θ, has θ, d2/10, d3/10, d4/10, i/L, 1]` with φ the signed
/// dihedral (breaks mirror symmetry) and θ the bond angle.
pub fn node_geometry(bb: &Backbone, i: usize) -> [f64; NODE_GEOM_DIM] {
    let l = bb.len();
    let mut f = [0.0; NODE_GEOM_DIM];
    if i >= 1 && i + 2 < l {
        let phi = residue_dihedral(bb, i);
        f[0] = phi.sin();
        f[1] = phi.cos();
        f[2] = 1.0;
    }
    if i >= 1 && i + 1 < l {
        f[3] = bond_angle(bb, i).cos();
        f[4] = 1.0;
    }
    for (slot, k) in [(5, 2), (6, 3), (7, 4)] {
        if i >= 1 && i - 1 + k < l {
            f[slot] = bb.distance(i - 1, i - 1 + k) / 10.0;
        }
    }
    f[8] = i as f64 / l as f64;
    f[9] = 1.0;
    f
}

pub fn build_graph(bb: &Backbone, cfg: &GraphConfig) -> Result<ProteinGraph> {
    let l = bb.len();
    if l < 5 {
        return Err(Error::InvalidBackbone(format!("graph needs L >= 5, got {l}")));
    }
    let mut relations: Vec<Vec<Edge>> = vec![Vec::new(); N_RELATIONS];
    for dst in 0..l {
        for (r, &k) in SEQ_OFFSETS.iter().enumerate() {
            let src = dst as i64 + k;
            if src >= 0 && (src as usize) < l {
                let src = src as usize;
                relations[r].push(Edge {
                    dst,
                    src,
                    distance: bb.distance(dst, src),
                });
            }
        }
        for src in 0..l {
            if src == dst {
                continue;
            }
            let d = bb.distance(dst, src);
            if d < cfg.spatial_cutoff {
                relations[SPATIAL_RELATION].push(Edge { dst, src, distance: d });
            }
        }
    }
    let ed = cfg.edge_dim();
    let mut edge_sums = vec![0.0; N_RELATIONS * l * ed];
    for (r, edges) in relations.iter().enumerate() {
        for e in edges {
            let f = edge_features(e, cfg);
            let base = (r * l + e.dst) * ed;
            for (k, v) in f.into_iter().enumerate() {
                edge_sums[base + k] += v;
            }
        }
    }
    let idx: Vec<f64> = (0..l).map(|i| i as f64).collect();
    let index_enc = sinusoidal(&idx, cfg.index_dim, 1.0);
    let nd = cfg.node_dim();
    let mut node_features = Vec::with_capacity(l * nd);
    for i in 0..l {
        node_features.extend_from_slice(&index_enc[i * cfg.index_dim..(i + 1) * cfg.index_dim]);
        node_features.extend_from_slice(&node_geometry(bb, i));
    }
    Ok(ProteinGraph {
        len: l,
        node_features,
        relations,
        edge_sums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::random_rotation;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn straight(l: usize) -> Backbone {
        let pts: Vec<[f64; 3]> = (0..l).map(|i| [3.8 * i as f64, 0.0, 0.0]).collect();
        Backbone::from_points(&pts).unwrap()
    }

    #[test]
    fn straight_chain_spatial_edges() {
        // 2·3.8 = 7.6 < 10 < 11.4 = 3·3.8.
        let g = build_graph(&straight(10), &GraphConfig::default()).unwrap();
        let mut pairs: Vec<(usize, usize)> = g.relations[SPATIAL_RELATION].iter().map(|e| (e.dst, e.src)).collect();
        pairs.sort();
        let mut expected = Vec::new();
        for i in 0..10usize {
            for j in 0..10usize {
                if i != j && i.abs_diff(j) <= 2 {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(pairs, expected);
    }

    #[test]
    fn sequential_relations_truncate_at_ends() {
        let g = build_graph(&straight(5), &GraphConfig::default()).unwrap();
        let counts: Vec<usize> = (0..5).map(|r| g.relations[r].len()).collect();
        assert_eq!(counts, vec![3, 4, 5, 4, 3]);
        for (r, &k) in SEQ_OFFSETS.iter().enumerate() {
            for e in &g.relations[r] {
                assert_eq!(e.src as i64 - e.dst as i64, k);
            }
        }
        assert!(build_graph(&straight(4), &GraphConfig::default()).is_err());
    }

    #[test]
    fn rigid_motion_leaves_graph_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bb = crate::data::toy::random_coil(30, &mut rng);
        let g = build_graph(&bb, &GraphConfig::default()).unwrap();
        let moved = bb.rotated(&random_rotation(&mut rng)).translated(Vector3::new(5.0, -3.0, 12.0));
        let h = build_graph(&moved, &GraphConfig::default()).unwrap();
        for (a, b) in g.relations.iter().zip(&h.relations) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!((x.dst, x.src), (y.dst, y.src));
                assert!((x.distance - y.distance).abs() < 1e-9);
            }
        }
        for (x, y) in g.node_features.iter().zip(&h.node_features) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rbf_peaks_at_centers() {
        let f = rbf(5.0, 11, 10.0);
        let argmax = f.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 5);
        assert!((f[5] - 1.0).abs() < 1e-12);
    }
}
