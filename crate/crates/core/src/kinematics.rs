//! Forward kinematics of the skeleton and dual-quaternion node transforms.
//!
//! Positions produced here are camera-root-relative: the root joint sits at
//! the origin and the whole skeleton is pre-rotated by `R(alpha)`.

use nalgebra::{Matrix3, Quaternion, Vector3};

use crate::assets::{Character, Skeleton};
use crate::camproj::Camera;
use crate::error::{Error, Result};
use crate::math::{chain_axes, euler_xyz, euler_xyz_axes, quat_to_matrix_tangent, skew, DualQuat};

/// Skeletal pose: joint angles, camera-relative root rotation and the
/// world translation solved by the alignment layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams {
    pub theta: Vec<f64>,
    pub alpha: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl PoseParams {
    pub fn rest(skeleton: &Skeleton) -> Self {
        Self {
            theta: vec![0.0; skeleton.dof_count()],
            alpha: Vector3::zeros(),
            t: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
            && self.alpha.iter().all(|v| v.is_finite())
            && self.t.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub positions: Vec<Vector3<f64>>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Per-node rigid transforms `(R_sk,k, t_sk,k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTransforms {
    pub transforms: Vec<RigidTransform>,
}

/// Posed joint frames plus what the chain rule needs.
#[derive(Debug, Clone)]
pub struct SkeletonState {
    /// Global joint rotations (rest frames are identity).
    pub rotations: Vec<Matrix3<f64>>,
    /// Global joint positions.
    pub positions: Vec<Vector3<f64>>,
    /// World rotation axis of every DoF.
    pub dof_axes: Vec<Vector3<f64>>,
    /// Joint owning every DoF.
    pub dof_joint: Vec<usize>,
    /// World rotation axes of `alpha` (pivot at the origin).
    pub alpha_axes: [Vector3<f64>; 3],
}

pub fn pose_skeleton(skeleton: &Skeleton, theta: &[f64], alpha: &Vector3<f64>) -> Result<SkeletonState> {
    if theta.len() != skeleton.dof_count() {
        return Err(Error::DimensionMismatch {
            what: "theta",
            expected: skeleton.dof_count(),
            got: theta.len(),
        });
    }
    let root = euler_xyz(alpha);
    let n = skeleton.joint_count();
    let mut rotations = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut dof_axes = Vec::with_capacity(theta.len());
    let mut dof_joint = Vec::with_capacity(theta.len());
    for (j, joint) in skeleton.joints.iter().enumerate() {
        let (parent_rot, pos) = match joint.parent {
            Some(p) => {
                let pr: Matrix3<f64> = rotations[p];
                (pr, positions[p] + pr * Vector3::from(joint.offset))
            }
            None => (root, root * Vector3::from(joint.offset)),
        };
        let start = skeleton.dof_start(j);
        let angles = &theta[start..start + joint.axes.len()];
        let (local, axes) = chain_axes(&joint.axes, angles);
        for a in axes {
            dof_axes.push(parent_rot * a);
            dof_joint.push(j);
        }
        rotations.push(parent_rot * local);
        positions.push(pos);
    }
    Ok(SkeletonState {
        rotations,
        positions,
        dof_axes,
        dof_joint,
        alpha_axes: euler_xyz_axes(alpha),
    })
}

fn landmarks_from_state(skeleton: &Skeleton, state: &SkeletonState) -> LandmarkSet {
    LandmarkSet {
        positions: skeleton
            .landmarks
            .iter()
            .map(|l| state.positions[l.joint] + state.rotations[l.joint] * Vector3::from(l.offset))
            .collect(),
    }
}

/// Camera-root-relative landmark positions `P_c'`.
pub fn forward_landmarks(skeleton: &Skeleton, theta: &[f64], alpha: &Vector3<f64>) -> Result<LandmarkSet> {
    let state = pose_skeleton(skeleton, theta, alpha)?;
    Ok(landmarks_from_state(skeleton, &state))
}

/// Landmarks together with the posed state used to produce them.
pub fn forward_landmarks_with_state(
    skeleton: &Skeleton,
    theta: &[f64],
    alpha: &Vector3<f64>,
) -> Result<(LandmarkSet, SkeletonState)> {
    let state = pose_skeleton(skeleton, theta, alpha)?;
    Ok((landmarks_from_state(skeleton, &state), state))
}

/// Pulls `dL/dP_c'` back to `(dL/dtheta, dL/dalpha)`.
pub fn landmark_vjp(
    skeleton: &Skeleton,
    state: &SkeletonState,
    landmarks: &LandmarkSet,
    grad: &[Vector3<f64>],
) -> (Vec<f64>, Vector3<f64>) {
    let mut d_theta = vec![0.0; state.dof_axes.len()];
    let mut d_alpha = Vector3::zeros();
    for (m, lm) in skeleton.landmarks.iter().enumerate() {
        let g = grad[m];
        if g == Vector3::zeros() {
            continue;
        }
        let p = landmarks.positions[m];
        for (dof, (&axis, &j)) in state.dof_axes.iter().zip(&state.dof_joint).enumerate() {
            if skeleton.is_ancestor(j, lm.joint) {
                d_theta[dof] += axis.dot(&(p - state.positions[j]).cross(&g));
            }
        }
        let moment = p.cross(&g);
        for k in 0..3 {
            d_alpha[k] += state.alpha_axes[k].dot(&moment);
        }
    }
    (d_theta, d_alpha)
}

/// `P_m = R_c'^T P_c',m + t`.
pub fn to_world(landmarks: &LandmarkSet, camera: &Camera, t: &Vector3<f64>) -> LandmarkSet {
    LandmarkSet {
        positions: rotate_to_world(&landmarks.positions, &camera.rotation, t),
    }
}

pub(crate) fn rotate_to_world(
    points: &[Vector3<f64>],
    rotation: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Vec<Vector3<f64>> {
    let rt = rotation.transpose();
    points.iter().map(|p| rt * p + t).collect()
}

/// Rest-to-posed transform of every bone (bones are joint frames).
pub fn bone_transforms(skeleton: &Skeleton, state: &SkeletonState) -> Vec<RigidTransform> {
    let rest = skeleton.rest_joint_positions();
    state
        .rotations
        .iter()
        .zip(&state.positions)
        .zip(&rest)
        .map(|((r, p), p_rest)| RigidTransform {
            rotation: *r,
            translation: p - r * p_rest,
        })
        .collect()
}

struct Blend {
    real: Quaternion<f64>,
    dual: Quaternion<f64>,
    signs: Vec<f64>,
}

fn blend_node(
    node: usize,
    skinning: &[(usize, f64)],
    bones: &[DualQuat],
) -> Result<Blend> {
    let pivot = skinning
        .iter()
        .copied()
        .fold(None::<(usize, f64)>, |best, (b, w)| match best {
            Some((_, bw)) if bw >= w => best,
            _ => Some((b, w)),
        })
        .map(|(b, _)| b)
        .ok_or(Error::DegenerateBlend { node })?;
    let pivot_real = bones[pivot].real;
    let mut acc = DualQuat::zero();
    let mut signs = Vec::with_capacity(skinning.len());
    for &(b, w) in skinning {
        let s = if bones[b].real.coords.dot(&pivot_real.coords) < 0.0 {
            -1.0
        } else {
            1.0
        };
        signs.push(s);
        acc = acc.add(&bones[b].scale(w * s));
    }
    if acc.real.norm() < 1e-12 {
        return Err(Error::DegenerateBlend { node });
    }
    Ok(Blend {
        real: acc.real,
        dual: acc.dual,
        signs,
    })
}

/// Dual-quaternion blend of bone transforms with per-node bone weights.
pub fn blend_transforms(
    bone_transforms: &[RigidTransform],
    node_skinning: &[Vec<(usize, f64)>],
) -> Result<NodeTransforms> {
    let bones: Vec<DualQuat> = bone_transforms
        .iter()
        .map(|t| DualQuat::from_rigid(&t.rotation, &t.translation))
        .collect();
    let transforms = node_skinning
        .iter()
        .enumerate()
        .map(|(k, skin)| {
            let b = blend_node(k, skin, &bones)?;
            let (rotation, translation) = DualQuat {
                real: b.real,
                dual: b.dual,
            }
            .to_rigid();
            Ok(RigidTransform {
                rotation,
                translation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NodeTransforms { transforms })
}

/// Node transforms `(R_sk,k, t_sk,k)` for pose `(theta, alpha)`.
pub fn node_transforms(character: &Character, theta: &[f64], alpha: &Vector3<f64>) -> Result<NodeTransforms> {
    let state = pose_skeleton(&character.rig.skeleton, theta, alpha)?;
    blend_transforms(
        &bone_transforms(&character.rig.skeleton, &state),
        &character.graph.node_skinning,
    )
}

/// Derivative of one node transform along one pose parameter.
#[derive(Debug, Clone, Copy)]
pub struct TransformTangent {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Forward-mode derivatives of every node transform with respect to every
/// pose parameter. Row `p` covers parameter `p`, ordered `theta` then
/// `alpha`; each row holds one tangent per node.
pub fn node_transform_tangents(
    character: &Character,
    theta: &[f64],
    alpha: &Vector3<f64>,
) -> Result<Vec<Vec<TransformTangent>>> {
    let skeleton = &character.rig.skeleton;
    let state = pose_skeleton(skeleton, theta, alpha)?;
    let transforms = bone_transforms(skeleton, &state);
    let bones: Vec<DualQuat> = transforms
        .iter()
        .map(|t| DualQuat::from_rigid(&t.rotation, &t.translation))
        .collect();
    let rest = skeleton.rest_joint_positions();
    let blends = character
        .graph
        .node_skinning
        .iter()
        .enumerate()
        .map(|(k, skin)| blend_node(k, skin, &bones))
        .collect::<Result<Vec<_>>>()?;

    let dofs = theta.len();
    let mut out = Vec::with_capacity(dofs + 3);
    for p in 0..dofs + 3 {
        let (axis, pivot, affects): (Vector3<f64>, Vector3<f64>, Box<dyn Fn(usize) -> bool>) = if p < dofs {
            let j = state.dof_joint[p];
            (
                state.dof_axes[p],
                state.positions[j],
                Box::new(move |b| skeleton.is_ancestor(j, b)),
            )
        } else {
            (state.alpha_axes[p - dofs], Vector3::zeros(), Box::new(|_| true))
        };
        let w = skew(&axis);
        let omega = Quaternion::from_parts(0.0, axis);
        let bone_tangents: Vec<Option<DualQuat>> = (0..bones.len())
            .map(|b| {
                if !affects(b) {
                    return None;
                }
                let r = state.rotations[b];
                let dt = axis.cross(&(state.positions[b] - pivot)) - w * r * rest[b];
                let real = bones[b].real;
                let d_real = omega * real * 0.5;
                let t = Quaternion::from_parts(0.0, transforms[b].translation);
                let d_dual = Quaternion::from_parts(0.0, dt) * real * 0.5 + t * d_real * 0.5;
                Some(DualQuat {
                    real: d_real,
                    dual: d_dual,
                })
            })
            .collect();
        let row = character
            .graph
            .node_skinning
            .iter()
            .zip(&blends)
            .map(|(skin, blend)| {
                let mut d = DualQuat::zero();
                for (&(b, wgt), &s) in skin.iter().zip(&blend.signs) {
                    if let Some(tb) = &bone_tangents[b] {
                        d = d.add(&tb.scale(wgt * s));
                    }
                }
                let n2 = blend.real.norm_squared();
                let dn2 = 2.0 * blend.real.coords.dot(&d.real.coords);
                let prod = blend.dual * blend.real.conjugate() * 2.0;
                let d_prod = (d.dual * blend.real.conjugate() + blend.dual * d.real.conjugate()) * 2.0;
                TransformTangent {
                    rotation: quat_to_matrix_tangent(&blend.real, &d.real),
                    translation: d_prod.imag() / n2 - prod.imag() * (dn2 / (n2 * n2)),
                }
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}
