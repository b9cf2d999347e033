//! Silhouette-rim vertices of a mesh as seen from one camera.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};

use super::camera::{Camera, MIN_DEPTH};
use super::dt::{contour, squared_edt};
use super::raster::{rasterize_depth, DepthBuffer};

/// Relative depth slack when testing a rim vertex against the z-buffer.
pub const VISIBILITY_TOLERANCE: f64 = 0.01;

/// Rim vertices farther than this from the rendered mask's contour (px)
/// are interior rims, e.g. an arm in front of the torso.
pub const CONTOUR_TOLERANCE: f64 = 1.5;

/// Edge-to-face incidence of a fixed triangulation.
#[derive(Debug, Clone)]
pub struct EdgeTopology {
    edges: Vec<(usize, usize, Vec<usize>)>,
}

impl EdgeTopology {
    pub fn new(faces: &[[usize; 3]]) -> Self {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        Self {
            edges: map.into_iter().map(|((a, b), f)| (a, b, f)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryVertex {
    pub index: usize,
    /// Unit image-space projection of the vertex normal (zero if the normal
    /// points along the viewing ray).
    pub normal: Vector2<f64>,
}

/// Rim vertices: endpoints of edges shared by a front- and a back-facing
/// triangle (or of border edges) that pass the z-buffer visibility test and
/// project near the contour of the rendered mask.
pub fn boundary_vertices(
    camera: &Camera,
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    normals: &[Vector3<f64>],
) -> Vec<BoundaryVertex> {
    let topology = EdgeTopology::new(faces);
    let depth = rasterize_depth(camera, vertices, faces);
    boundary_vertices_with(camera, vertices, faces, normals, &topology, &depth)
}

/// As [`boundary_vertices`] with precomputed topology and depth buffer.
pub fn boundary_vertices_with(
    camera: &Camera,
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    normals: &[Vector3<f64>],
    topology: &EdgeTopology,
    depth: &DepthBuffer,
) -> Vec<BoundaryVertex> {
    let front: Vec<bool> = faces
        .iter()
        .map(|f| {
            let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let centroid = (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0;
            n.dot(&(centroid - camera.origin)) < 0.0
        })
        .collect();
    let mut on_rim = vec![false; vertices.len()];
    for (a, b, incident) in &topology.edges {
        let fronts = incident.iter().filter(|&&f| front[f]).count();
        let rim = incident.len() == 1 || (fronts > 0 && fronts < incident.len());
        if rim {
            on_rim[*a] = true;
            on_rim[*b] = true;
        }
    }
    let rendered = depth.mask();
    let near_contour = squared_edt(&contour(&rendered), rendered.width, rendered.height);
    let mut out = Vec::new();
    for (i, _) in on_rim.iter().enumerate().filter(|(_, &r)| r) {
        let (p, z) = camera.project_with_depth(&vertices[i]);
        if z <= MIN_DEPTH || !camera.contains(&p) {
            continue;
        }
        let (px, py) = (p[0] as usize, p[1] as usize);
        let zbuf = depth.at(px, py);
        if zbuf.is_finite() && z > zbuf * (1.0 + VISIBILITY_TOLERANCE) {
            continue;
        }
        if (near_contour[py * rendered.width + px] as f64).sqrt() > CONTOUR_TOLERANCE {
            continue;
        }
        let n2 = camera.projection_jacobian(&vertices[i]) * normals[i];
        let len = n2.norm();
        out.push(BoundaryVertex {
            index: i,
            normal: if len > 1e-12 { n2 / len } else { Vector2::zeros() },
        });
    }
    out
}
