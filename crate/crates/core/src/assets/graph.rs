//! Embedded deformation graph construction on the template surface.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeSet};

use nalgebra::Vector3;

use super::CharacterRig;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DeformGraph {
    /// Rest positions `G_k`.
    pub nodes: Vec<Vector3<f64>>,
    /// Mesh vertex each node was sampled from.
    pub node_vertex: Vec<usize>,
    /// Per node, `(neighbor, u_kl)` sorted by neighbor index; symmetric.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    /// Per vertex, `(node, w_ik)` with positive weights summing to one.
    pub influences: Vec<Vec<(usize, f64)>>,
    /// Per node, `(bone, weight)` summing to one.
    pub node_skinning: Vec<Vec<(usize, f64)>>,
    /// Node each skeleton landmark is rigidly attached to.
    pub landmark_nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GraphSettings {
    pub nodes: usize,
    #[serde(default = "default_influences")]
    pub influences: usize,
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
}

fn default_influences() -> usize {
    4
}

fn default_neighbors() -> usize {
    8
}

impl Default for GraphSettings {
    fn default() -> Self {
        Self {
            nodes: 50,
            influences: default_influences(),
            neighbors: default_neighbors(),
        }
    }
}

impl DeformGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths along mesh edges.
pub fn geodesic_from(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Item(0.0, source));
    while let Some(Item(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, len) in &adjacency[v] {
            let nd = d + len;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Item(nd, u));
            }
        }
    }
    dist
}

/// Builds the graph: farthest-point sampling of `settings.nodes` vertices
/// under geodesic distance (seeded at vertex 0), geodesic falloff weights,
/// nearest-node neighborhoods and rigidity-averaged edge weights.
pub fn build_graph(rig: &CharacterRig, settings: GraphSettings) -> Result<DeformGraph> {
    let n = rig.mesh.vertex_count();
    let k_count = settings.nodes;
    let min = settings.neighbors + 1;
    if k_count < min || k_count > n || settings.influences == 0 {
        return Err(Error::NodeCountOutOfRange {
            requested: k_count,
            min,
            max: n,
        });
    }
    let adjacency = rig.mesh.adjacency();

    // farthest-point sampling
    let mut node_vertex = vec![0usize];
    let mut dist_rows = vec![geodesic_from(&adjacency, 0)];
    if dist_rows[0].iter().any(|d| !d.is_finite()) {
        return Err(Error::DisconnectedMesh { components: 2 });
    }
    let mut nearest = dist_rows[0].clone();
    while node_vertex.len() < k_count {
        let mut best = 0;
        for i in 1..n {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        let row = geodesic_from(&adjacency, best);
        for (m, &d) in nearest.iter_mut().zip(&row) {
            *m = m.min(d);
        }
        node_vertex.push(best);
        dist_rows.push(row);
    }
    let nodes: Vec<Vector3<f64>> = node_vertex.iter().map(|&v| rig.mesh.vertices[v]).collect();

    // vertex influences
    let infl = settings.influences.min(k_count);
    let mut influences = Vec::with_capacity(n);
    let mut order: Vec<usize> = (0..k_count).collect();
    for i in 0..n {
        order.sort_by(|&a, &b| dist_rows[a][i].total_cmp(&dist_rows[b][i]).then(a.cmp(&b)));
        influences.push(falloff_weights(&order, |k| dist_rows[k][i], infl));
    }

    // node neighborhoods, symmetrized
    let mut sets = vec![BTreeSet::new(); k_count];
    for k in 0..k_count {
        let mut others: Vec<usize> = (0..k_count).filter(|&l| l != k).collect();
        others.sort_by(|&a, &b| {
            dist_rows[k][node_vertex[a]]
                .total_cmp(&dist_rows[k][node_vertex[b]])
                .then(a.cmp(&b))
        });
        for &l in others.iter().take(settings.neighbors) {
            sets[k].insert(l);
            sets[l].insert(k);
        }
    }

    // per-node influenced vertices
    let mut influenced: Vec<Vec<usize>> = vec![Vec::new(); k_count];
    for (i, inf) in influences.iter().enumerate() {
        for &(k, _) in inf {
            influenced[k].push(i);
        }
    }
    let s = &rig.rigidity;
    let neighbors: Vec<Vec<(usize, f64)>> = sets
        .iter()
        .enumerate()
        .map(|(k, set)| {
            set.iter()
                .map(|&l| {
                    let union: BTreeSet<usize> = influenced[k]
                        .iter()
                        .chain(&influenced[l])
                        .copied()
                        .collect();
                    let u = union.iter().map(|&i| s[i]).sum::<f64>() / union.len() as f64;
                    (l, u)
                })
                .collect()
        })
        .collect();

    // node skinning from influence-weighted vertex skinning
    let bones = rig.skeleton.joint_count();
    let mut acc = vec![vec![0.0; bones]; k_count];
    for (i, inf) in influences.iter().enumerate() {
        for &(k, w) in inf {
            for &(b, sw) in &rig.skeleton.skinning[i] {
                acc[k][b] += w * sw;
            }
        }
    }
    let node_skinning = acc
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            row.into_iter()
                .enumerate()
                .filter(|&(_, w)| w > 0.0)
                .map(|(b, w)| (b, w / total))
                .collect()
        })
        .collect();

    // landmark binding: nearest vertex, then its geodesically nearest node
    let landmark_nodes = rig
        .skeleton
        .rest_landmark_positions()
        .iter()
        .map(|p| {
            let v = nearest_vertex(&rig.mesh.vertices, p);
            (0..k_count)
                .min_by(|&a, &b| dist_rows[a][v].total_cmp(&dist_rows[b][v]).then(a.cmp(&b)))
                .expect("graph has nodes")
        })
        .collect();

    Ok(DeformGraph {
        nodes,
        node_vertex,
        neighbors,
        influences,
        node_skinning,
        landmark_nodes,
    })
}

/// `(1 - d/d_max)^2` weights over the `count` nearest nodes in `order`,
/// with `d_max` the distance to the next-nearest node. A vertex that
/// coincides with a node is bound to it alone.
fn falloff_weights(order: &[usize], dist: impl Fn(usize) -> f64, count: usize) -> Vec<(usize, f64)> {
    let first = order[0];
    if dist(first) == 0.0 || order.len() == 1 {
        return vec![(first, 1.0)];
    }
    let d_max = order.get(count).map_or_else(
        || dist(order[order.len() - 1]) * 1.5,
        |&k| dist(k),
    );
    let mut raw: Vec<(usize, f64)> = order
        .iter()
        .take(count)
        .map(|&k| (k, (1.0 - dist(k) / d_max).max(0.0).powi(2)))
        .collect();
    let total: f64 = raw.iter().map(|&(_, w)| w).sum();
    if total <= 1e-300 {
        // every candidate sits at d_max: share equally
        let w = 1.0 / raw.len() as f64;
        return raw.into_iter().map(|(k, _)| (k, w)).collect();
    }
    raw.retain(|&(_, w)| w > 0.0);
    raw.into_iter().map(|(k, w)| (k, w / total)).collect()
}

pub(crate) fn nearest_vertex(vertices: &[Vector3<f64>], p: &Vector3<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, v) in vertices.iter().enumerate() {
        let d = (v - p).norm_squared();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
