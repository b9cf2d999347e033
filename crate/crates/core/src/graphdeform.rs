//! Embedded-graph deformation, skeletal posing of the deformed surface and
//! graph-attached landmarks, with reverse-mode derivatives.

use nalgebra::{Matrix3, Vector3};

use crate::assets::Character;
use crate::camproj::Camera;
use crate::error::{Error, Result};
use crate::kinematics::{rotate_to_world, NodeTransforms, TransformTangent};
use crate::math::{euler_xyz, euler_xyz_axes};

/// Per-node Euler angles `A` and translations `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    pub angles: Vec<Vector3<f64>>,
    pub translations: Vec<Vector3<f64>>,
}

impl GraphParams {
    pub fn zeros(nodes: usize) -> Self {
        Self {
            angles: vec![Vector3::zeros(); nodes],
            translations: vec![Vector3::zeros(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.angles.len()
    }

    pub fn is_finite(&self) -> bool {
        self.angles
            .iter()
            .chain(&self.translations)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn check(&self, nodes: usize) -> Result<()> {
        for (what, got) in [("A", self.angles.len()), ("T", self.translations.len())] {
            if got != nodes {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: nodes,
                    got,
                });
            }
        }
        Ok(())
    }
}

/// Deformed rest-pose (`Y`), posed camera-root-relative and world vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshState {
    pub deformed: Vec<Vector3<f64>>,
    pub posed: Vec<Vector3<f64>>,
    pub world: Vec<Vector3<f64>>,
}

/// Node rotations `R(A_k)` and their Euler axes, shared by the forward pass
/// and the VJP.
#[derive(Debug, Clone)]
pub struct NodeFrames {
    pub rotations: Vec<Matrix3<f64>>,
    pub axes: Vec<[Vector3<f64>; 3]>,
}

impl NodeFrames {
    pub fn new(params: &GraphParams) -> Self {
        Self {
            rotations: params.angles.iter().map(euler_xyz).collect(),
            axes: params.angles.iter().map(euler_xyz_axes).collect(),
        }
    }
}

/// `Y_i = sum_k w_ik (R(A_k)(V_i - G_k) + G_k + T_k)`.
pub fn deform(character: &Character, params: &GraphParams) -> Result<Vec<Vector3<f64>>> {
    params.check(character.node_count())?;
    Ok(deform_with(character, params, &NodeFrames::new(params)))
}

pub fn deform_with(character: &Character, params: &GraphParams, frames: &NodeFrames) -> Vec<Vector3<f64>> {
    let g = &character.graph;
    character
        .rig
        .mesh
        .vertices
        .iter()
        .zip(&g.influences)
        .map(|(v, inf)| {
            inf.iter().fold(Vector3::zeros(), |acc, &(k, w)| {
                acc + (frames.rotations[k] * (v - g.nodes[k]) + g.nodes[k] + params.translations[k]) * w
            })
        })
        .collect()
}

/// `V_cam,i = sum_k w_ik (R_sk,k Y_i + t_sk,k)`.
pub fn pose(character: &Character, deformed: &[Vector3<f64>], transforms: &NodeTransforms) -> Vec<Vector3<f64>> {
    deformed
        .iter()
        .zip(&character.graph.influences)
        .map(|(y, inf)| {
            inf.iter().fold(Vector3::zeros(), |acc, &(k, w)| {
                acc + transforms.transforms[k].apply(y) * w
            })
        })
        .collect()
}

/// `V_i = R_c'^T V_cam,i + t`.
pub fn to_world_mesh(posed: &[Vector3<f64>], camera: &Camera, t: &Vector3<f64>) -> Vec<Vector3<f64>> {
    rotate_to_world(posed, &camera.rotation, t)
}

pub fn mesh_state(
    character: &Character,
    params: &GraphParams,
    transforms: &NodeTransforms,
    camera: &Camera,
    t: &Vector3<f64>,
) -> Result<MeshState> {
    let deformed = deform(character, params)?;
    let posed = pose(character, &deformed, transforms);
    let world = to_world_mesh(&posed, camera, t);
    Ok(MeshState {
        deformed,
        posed,
        world,
    })
}

/// World positions of the graph-attached landmarks: each landmark follows
/// its bound node alone, with weight 1.
pub fn deform_landmarks(
    character: &Character,
    params: &GraphParams,
    transforms: &NodeTransforms,
    camera: &Camera,
    t: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>> {
    params.check(character.node_count())?;
    let rest = character.rig.skeleton.rest_landmark_positions();
    let g = &character.graph;
    let rt = camera.rotation.transpose();
    Ok(rest
        .iter()
        .zip(&g.landmark_nodes)
        .map(|(l, &k)| {
            let y = euler_xyz(&params.angles[k]) * (l - g.nodes[k]) + g.nodes[k] + params.translations[k];
            rt * transforms.transforms[k].apply(&y) + t
        })
        .collect())
}

/// Pulls `dL/dV_world` back to `dL/dY` through posing and the world
/// rotation (the translation `t` is constant here).
pub fn world_to_deformed_vjp(
    character: &Character,
    transforms: &NodeTransforms,
    camera: &Camera,
    grad_world: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    grad_world
        .iter()
        .zip(&character.graph.influences)
        .map(|(gw, inf)| {
            let gc = camera.rotation * gw;
            inf.iter().fold(Vector3::zeros(), |acc, &(k, w)| {
                acc + transforms.transforms[k].rotation.transpose() * gc * w
            })
        })
        .collect()
}

/// Gradient of a scalar with respect to the graph parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphGradient {
    pub angles: Vec<Vector3<f64>>,
    pub translations: Vec<Vector3<f64>>,
}

impl GraphGradient {
    pub fn zeros(nodes: usize) -> Self {
        Self {
            angles: vec![Vector3::zeros(); nodes],
            translations: vec![Vector3::zeros(); nodes],
        }
    }

    pub fn add_scaled(&mut self, other: &GraphGradient, s: f64) {
        for (a, b) in self.angles.iter_mut().zip(&other.angles) {
            *a += b * s;
        }
        for (a, b) in self.translations.iter_mut().zip(&other.translations) {
            *a += b * s;
        }
    }
}

/// Pulls `dL/dY` back to `(dL/dA, dL/dT)`.
pub fn deform_vjp(character: &Character, frames: &NodeFrames, grad_deformed: &[Vector3<f64>]) -> GraphGradient {
    let g = &character.graph;
    let mut out = GraphGradient::zeros(g.node_count());
    for ((v, inf), gy) in character.rig.mesh.vertices.iter().zip(&g.influences).zip(grad_deformed) {
        if *gy == Vector3::zeros() {
            continue;
        }
        for &(k, w) in inf {
            let gw = gy * w;
            out.translations[k] += gw;
            let moment = (frames.rotations[k] * (v - g.nodes[k])).cross(&gw);
            for j in 0..3 {
                out.angles[k][j] += frames.axes[k][j].dot(&moment);
            }
        }
    }
    out
}

/// Pulls `dL/dM_m` (world landmarks) back to `(dL/dA, dL/dT)`.
pub fn landmark_graph_vjp(
    character: &Character,
    frames: &NodeFrames,
    transforms: &NodeTransforms,
    camera: &Camera,
    grad_landmarks: &[Vector3<f64>],
) -> GraphGradient {
    let rest = character.rig.skeleton.rest_landmark_positions();
    let g = &character.graph;
    let mut out = GraphGradient::zeros(g.node_count());
    for ((l, &k), gm) in rest.iter().zip(&g.landmark_nodes).zip(grad_landmarks) {
        let gy = transforms.transforms[k].rotation.transpose() * (camera.rotation * gm);
        out.translations[k] += gy;
        let moment = (frames.rotations[k] * (l - g.nodes[k])).cross(&gy);
        for j in 0..3 {
            out.angles[k][j] += frames.axes[k][j].dot(&moment);
        }
    }
    out
}

/// Pulls `dL/dV_cam` back to the pose parameters (`theta` then `alpha`)
/// given forward-mode node transform tangents.
pub fn pose_param_vjp(
    character: &Character,
    tangents: &[Vec<TransformTangent>],
    deformed: &[Vector3<f64>],
    grad_posed: &[Vector3<f64>],
) -> Vec<f64> {
    let nodes = character.node_count();
    // per node: sum_i w_ik g_i y_i^T and sum_i w_ik g_i
    let mut outer = vec![Matrix3::zeros(); nodes];
    let mut sum = vec![Vector3::zeros(); nodes];
    for ((y, g), inf) in deformed.iter().zip(grad_posed).zip(&character.graph.influences) {
        for &(k, w) in inf {
            outer[k] += g * y.transpose() * w;
            sum[k] += g * w;
        }
    }
    tangents
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, tan)| tan.rotation.component_mul(&outer[k]).sum() + tan.translation.dot(&sum[k]))
                .sum()
        })
        .collect()
}
