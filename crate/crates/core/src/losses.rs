//! Weak-supervision energies and the two stage objectives.
//!
//! Every term returns its value together with its gradient. The silhouette
//! term is evaluated against a [`SilhouetteFrame`]: boundary sets, direction
//! gates and bilinear cells frozen from the current mesh, so that one
//! evaluation is a smooth function of the graph parameters.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{RayBundle, TranslationSolver};
use crate::assets::{vertex_normals, Character, DeformGraph, Skeleton};
use crate::camproj::{
    boundary_vertices_with, rasterize_depth, Camera, Cell, EdgeTopology, SilhouetteObservation,
};
use crate::error::{Error, Result};
use crate::graphdeform::{
    deform_landmarks, deform_vjp, deform_with, landmark_graph_vjp, pose, to_world_mesh,
    world_to_deformed_vjp, GraphGradient, GraphParams, NodeFrames,
};
use crate::kinematics::{forward_landmarks_with_state, landmark_vjp, LandmarkSet, NodeTransforms};

/// Detections below this confidence are ignored.
pub const MIN_CONFIDENCE: f64 = 0.4;

/// Smoothing of the L1 norm in the ARAP term (meters).
pub const ARAP_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint2D {
    pub p: Vector2<f64>,
    pub sigma: f64,
}

impl Keypoint2D {
    /// Clamps the confidence to `[0, 1]` and zeroes it below
    /// [`MIN_CONFIDENCE`].
    pub fn new(p: Vector2<f64>, sigma: f64) -> Self {
        let sigma = sigma.clamp(0.0, 1.0);
        Self {
            p,
            sigma: if sigma < MIN_CONFIDENCE { 0.0 } else { sigma },
        }
    }
}

/// Parses `x y sigma` rows (one per landmark; `#` starts a comment).
pub fn parse_keypoints(text: &str) -> Result<Vec<Keypoint2D>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::malformed("keypoints", format!("line {}: {e}", n + 1)))?;
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::malformed(
                "keypoints",
                format!("line {}: expected finite `x y sigma`", n + 1),
            ));
        }
        out.push(Keypoint2D::new(Vector2::new(v[0], v[1]), v[2]));
    }
    Ok(out)
}

pub fn read_keypoints(path: &Path) -> Result<Vec<Keypoint2D>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&text)
}

pub fn keypoints_string(keypoints: &[Keypoint2D]) -> String {
    keypoints
        .iter()
        .map(|k| format!("{} {} {}\n", k.p[0], k.p[1], k.sigma))
        .collect()
}

/// Stage weights and the hierarchical keypoint schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_kp: f64,
    pub w_limit: f64,
    pub w_sil: f64,
    pub w_kpg: f64,
    pub w_arap: f64,
    /// `lambda_m` of landmarks beyond the active chain depth.
    pub lambda_low: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_kp: 1.0,
            w_limit: 0.1,
            w_sil: 1.0,
            w_kpg: 0.5,
            w_arap: 5.0,
            lambda_low: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_kp,
            self.w_limit,
            self.w_sil,
            self.w_kpg,
            self.w_arap,
            self.lambda_low,
        ];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()))
        }
    }
}

/// `lambda_m = 1` for landmarks whose joint depth is at most
/// `1 + ceil(fraction * max_depth)`, `low` otherwise.
pub fn lambda_schedule(skeleton: &Skeleton, fraction: f64, low: f64) -> Vec<f64> {
    let depths: Vec<usize> = skeleton
        .landmarks
        .iter()
        .map(|l| skeleton.joint_depth(l.joint))
        .collect();
    let max = depths.iter().copied().max().unwrap_or(0) as f64;
    let active = 1.0 + (fraction.clamp(0.0, 1.0) * max).ceil();
    depths
        .iter()
        .map(|&d| if d as f64 <= active { 1.0 } else { low })
        .collect()
}

/// Value, gradient with respect to the world points, and the number of
/// terms skipped because the point was behind the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTerm {
    pub value: f64,
    pub grad: Vec<Vector3<f64>>,
    pub behind: usize,
}

/// `sum_c sum_m lambda_m sigma_cm |pi_c(P_m) - p_cm|^2` (pixels squared).
/// `lambdas = None` means all ones.
pub fn keypoint_loss(
    points: &[Vector3<f64>],
    cameras: &[&Camera],
    detections: &[Vec<Keypoint2D>],
    lambdas: Option<&[f64]>,
) -> KeypointTerm {
    let mut out = KeypointTerm {
        value: 0.0,
        grad: vec![Vector3::zeros(); points.len()],
        behind: 0,
    };
    for (cam, dets) in cameras.iter().zip(detections) {
        for (m, (x, det)) in points.iter().zip(dets).enumerate() {
            let weight = det.sigma * lambdas.map_or(1.0, |l| l[m]);
            if weight == 0.0 {
                continue;
            }
            let Ok(p) = cam.project(x) else {
                out.behind += 1;
                continue;
            };
            let r = p - det.p;
            out.value += weight * r.norm_squared();
            out.grad[m] += cam.projection_jacobian(x).transpose() * r * (2.0 * weight);
        }
    }
    out
}

/// `sum_i psi(theta_i)` with `psi` quadratic outside the limits.
pub fn limit_loss(theta: &[f64], limits: &[[f64; 2]]) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let grad = theta
        .iter()
        .zip(limits)
        .map(|(&x, &[lo, hi])| {
            let excess = if x > hi {
                x - hi
            } else if x < lo {
                x - lo
            } else {
                0.0
            };
            value += excess * excess;
            2.0 * excess
        })
        .collect();
    (value, grad)
}

/// Smoothed ARAP energy over the graph edges and its gradient.
pub fn arap_loss(graph: &DeformGraph, params: &GraphParams) -> (f64, GraphGradient) {
    let frames = NodeFrames::new(params);
    let mut value = 0.0;
    let mut grad = GraphGradient::zeros(graph.node_count());
    for (k, neighbors) in graph.neighbors.iter().enumerate() {
        let gk = graph.nodes[k];
        for &(l, u) in neighbors {
            let rel = frames.rotations[k] * (graph.nodes[l] - gk);
            let d = rel + params.translations[k] + gk - graph.nodes[l] - params.translations[l];
            let mut gd = Vector3::zeros();
            for j in 0..3 {
                let s = (d[j] * d[j] + ARAP_EPSILON * ARAP_EPSILON).sqrt();
                value += u * (s - ARAP_EPSILON);
                gd[j] = u * d[j] / s;
            }
            grad.translations[k] += gd;
            grad.translations[l] -= gd;
            let moment = rel.cross(&gd);
            for j in 0..3 {
                grad.angles[k][j] += frames.axes[k][j].dot(&moment);
            }
        }
    }
    (value, grad)
}

/// Nodes touching an edge with an ARAP residual component within
/// `margin * (1 + edge length)` of zero, where the energy has a kink.
pub fn arap_kink_nodes(graph: &DeformGraph, params: &GraphParams, margin: f64) -> Vec<bool> {
    let frames = NodeFrames::new(params);
    let mut out = vec![false; graph.node_count()];
    for (k, neighbors) in graph.neighbors.iter().enumerate() {
        let gk = graph.nodes[k];
        for &(l, _) in neighbors {
            let e = graph.nodes[l] - gk;
            let d = frames.rotations[k] * e + params.translations[k] - e - params.translations[l];
            if d.iter().any(|c| c.abs() < margin * (1.0 + e.norm())) {
                out[k] = true;
                out[l] = true;
            }
        }
    }
    out
}

/// Contour pixels lie on average half a pixel inside the edge of the
/// region they belong to, so `D` is sampled this far inward along the
/// image-space normal of each boundary vertex.
pub const CONTOUR_OFFSET: f64 = 0.5;

/// Boundary vertex with its frozen direction gate, sampling offset and
/// bilinear cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenVertex {
    pub index: usize,
    pub cell: Cell,
    pub rho: f64,
    /// Added to the projection before sampling `D` (px).
    pub offset: Vector2<f64>,
}

/// Per-camera boundary sets frozen for one gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteFrame {
    pub cameras: Vec<Vec<FrozenVertex>>,
}

impl SilhouetteFrame {
    /// True when no camera has any boundary vertex.
    pub fn is_empty(&self) -> bool {
        self.cameras.iter().all(|c| c.is_empty())
    }

    pub fn active_count(&self) -> usize {
        self.cameras
            .iter()
            .flatten()
            .filter(|v| v.rho > 0.0)
            .count()
    }
}

/// Extracts boundary vertices and their gates from the current world mesh.
pub fn freeze_silhouette(
    world: &[Vector3<f64>],
    faces: &[[usize; 3]],
    topology: &EdgeTopology,
    cameras: &[&Camera],
    silhouettes: &[&SilhouetteObservation],
) -> SilhouetteFrame {
    let normals = vertex_normals(world, faces);
    let cameras = cameras
        .par_iter()
        .zip(silhouettes)
        .map(|(cam, obs)| {
            let depth = rasterize_depth(cam, world, faces);
            boundary_vertices_with(cam, world, faces, &normals, topology, &depth)
                .into_iter()
                .filter_map(|b| {
                    let offset = -b.normal * CONTOUR_OFFSET;
                    let p = cam.project(&world[b.index]).ok()? + offset;
                    let rho = if obs.outward_direction(&p).dot(&b.normal) > 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    Some(FrozenVertex {
                        index: b.index,
                        cell: obs.cell(&p),
                        rho,
                        offset,
                    })
                })
                .collect()
        })
        .collect();
    SilhouetteFrame { cameras }
}

/// `sum_c sum_(i in B_c) rho_ci D_c(pi_c(V_i) + offset_ci)^2` under a frozen
/// frame.
/// Per-camera terms run in parallel and are summed in camera order.
pub fn silhouette_loss(
    world: &[Vector3<f64>],
    cameras: &[&Camera],
    silhouettes: &[&SilhouetteObservation],
    frame: &SilhouetteFrame,
) -> (f64, Vec<Vector3<f64>>) {
    let per_camera: Vec<(f64, Vec<(usize, Vector3<f64>)>)> = cameras
        .par_iter()
        .zip(silhouettes)
        .zip(&frame.cameras)
        .map(|((cam, obs), frozen)| {
            let mut value = 0.0;
            let mut grads = Vec::with_capacity(frozen.len());
            for v in frozen.iter().filter(|v| v.rho > 0.0) {
                let x = &world[v.index];
                let Ok(p) = cam.project(x) else { continue };
                let (d, dd) = obs.sample_in_cell(v.cell, &(p + v.offset));
                value += v.rho * d * d;
                grads.push((v.index, cam.projection_jacobian(x).transpose() * dd * (2.0 * v.rho * d)));
            }
            (value, grads)
        })
        .collect();
    let mut value = 0.0;
    let mut grad = vec![Vector3::zeros(); world.len()];
    for (v, gs) in per_camera {
        value += v;
        for (i, g) in gs {
            grad[i] += g;
        }
    }
    (value, grad)
}

/// Pose-stage objective `w_kp * keypoint + w_limit * limit`, with the world
/// translation solved in closed form from the rays of the detections.
#[derive(Debug, Clone)]
pub struct PoseObjective<'a> {
    pub skeleton: &'a Skeleton,
    pub cameras: Vec<&'a Camera>,
    /// Camera whose rotation defines the camera-relative root frame.
    pub input: &'a Camera,
    pub detections: Vec<&'a [Keypoint2D]>,
    pub solver: TranslationSolver,
    pub lambdas: Vec<f64>,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEvaluation {
    pub total: f64,
    pub keypoint: f64,
    pub limit: f64,
    pub behind: usize,
    pub t: Vector3<f64>,
    pub world_landmarks: Vec<Vector3<f64>>,
    pub grad_theta: Vec<f64>,
    pub grad_alpha: Vector3<f64>,
}

impl<'a> PoseObjective<'a> {
    pub fn new(
        skeleton: &'a Skeleton,
        cameras: Vec<&'a Camera>,
        input: &'a Camera,
        detections: Vec<&'a [Keypoint2D]>,
        weights: LossWeights,
        weighted_alignment: bool,
    ) -> Result<Self> {
        let m = skeleton.landmark_count();
        for d in &detections {
            if d.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "keypoints per camera",
                    expected: m,
                    got: d.len(),
                });
            }
        }
        let rays = RayBundle::from_detections(
            &cameras,
            &detections
                .iter()
                .map(|d| d.iter().map(|k| (k.p, k.sigma)).collect())
                .collect::<Vec<Vec<_>>>(),
        )?;
        Ok(Self {
            skeleton,
            solver: TranslationSolver::new(&rays, weighted_alignment)?,
            cameras,
            input,
            detections,
            lambdas: vec![1.0; m],
            weights,
        })
    }

    /// Applies the hierarchical schedule at optimization progress `fraction`.
    pub fn set_progress(&mut self, fraction: f64) {
        self.lambdas = lambda_schedule(self.skeleton, fraction, self.weights.lambda_low);
    }

    pub fn evaluate(&self, theta: &[f64], alpha: &Vector3<f64>) -> Result<PoseEvaluation> {
        let (local, state) = forward_landmarks_with_state(self.skeleton, theta, alpha)?;
        let rt = self.input.rotation.transpose();
        let rotated: Vec<Vector3<f64>> = local.positions.iter().map(|p| rt * p).collect();
        let t = self.solver.solve(&rotated);
        let world: Vec<Vector3<f64>> = rotated.iter().map(|q| q + t).collect();

        let dets: Vec<Vec<Keypoint2D>> = self.detections.iter().map(|d| d.to_vec()).collect();
        let kp = keypoint_loss(&world, &self.cameras, &dets, Some(&self.lambdas));
        let (limit, limit_grad) = limit_loss(theta, &self.skeleton.limits);

        // dL/dQ_m = dL/dP_m + (dt/dQ_m)^T sum_n dL/dP_n, then back to P_c'
        let w = self.weights;
        let grad_t: Vector3<f64> = kp.grad.iter().sum();
        let through_t = self.solver.vjp(&grad_t);
        let grad_local: Vec<Vector3<f64>> = kp
            .grad
            .iter()
            .zip(&through_t)
            .map(|(g, gt)| self.input.rotation * (g + gt) * w.w_kp)
            .collect();
        let (mut grad_theta, grad_alpha) = landmark_vjp(self.skeleton, &state, &local, &grad_local);
        for (g, l) in grad_theta.iter_mut().zip(&limit_grad) {
            *g += w.w_limit * l;
        }
        Ok(PoseEvaluation {
            total: w.w_kp * kp.value + w.w_limit * limit,
            keypoint: kp.value,
            limit,
            behind: kp.behind,
            t,
            world_landmarks: world,
            grad_theta,
            grad_alpha,
        })
    }
}

/// Deformation-stage objective `w_sil * silhouette + w_kpg * keypoint-graph
/// + w_arap * arap` at a fixed pose.
#[derive(Debug, Clone)]
pub struct DeformObjective<'a> {
    pub character: &'a Character,
    pub cameras: Vec<&'a Camera>,
    pub input: &'a Camera,
    pub silhouettes: Vec<&'a SilhouetteObservation>,
    pub detections: Vec<&'a [Keypoint2D]>,
    pub transforms: NodeTransforms,
    pub t: Vector3<f64>,
    pub weights: LossWeights,
    pub topology: EdgeTopology,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformEvaluation {
    pub total: f64,
    pub silhouette: f64,
    pub keypoint_graph: f64,
    pub arap: f64,
    pub behind: usize,
    pub grad: GraphGradient,
}

impl<'a> DeformObjective<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        character: &'a Character,
        cameras: Vec<&'a Camera>,
        input: &'a Camera,
        silhouettes: Vec<&'a SilhouetteObservation>,
        detections: Vec<&'a [Keypoint2D]>,
        transforms: NodeTransforms,
        t: Vector3<f64>,
        weights: LossWeights,
    ) -> Result<Self> {
        if silhouettes.len() != cameras.len() || detections.len() != cameras.len() {
            return Err(Error::DimensionMismatch {
                what: "observations per camera",
                expected: cameras.len(),
                got: silhouettes.len().min(detections.len()),
            });
        }
        Ok(Self {
            topology: EdgeTopology::new(&character.rig.mesh.faces),
            character,
            cameras,
            input,
            silhouettes,
            detections,
            transforms,
            t,
            weights,
        })
    }

    pub fn world_mesh(&self, params: &GraphParams) -> Vec<Vector3<f64>> {
        let y = deform_with(self.character, params, &NodeFrames::new(params));
        to_world_mesh(&pose(self.character, &y, &self.transforms), self.input, &self.t)
    }

    /// Boundary sets, gates and cells for the mesh at `params`.
    pub fn freeze(&self, params: &GraphParams) -> SilhouetteFrame {
        freeze_silhouette(
            &self.world_mesh(params),
            &self.character.rig.mesh.faces,
            &self.topology,
            &self.cameras,
            &self.silhouettes,
        )
    }

    pub fn evaluate(&self, params: &GraphParams, frame: &SilhouetteFrame) -> Result<DeformEvaluation> {
        let ch = self.character;
        if params.node_count() != ch.node_count() {
            return Err(Error::DimensionMismatch {
                what: "graph nodes",
                expected: ch.node_count(),
                got: params.node_count(),
            });
        }
        let w = self.weights;
        let frames = NodeFrames::new(params);
        let y = deform_with(ch, params, &frames);
        let world = to_world_mesh(&pose(ch, &y, &self.transforms), self.input, &self.t);

        let (sil, mut sil_grad) = silhouette_loss(&world, &self.cameras, &self.silhouettes, frame);
        sil_grad.iter_mut().for_each(|g| *g *= w.w_sil);
        let gy = world_to_deformed_vjp(ch, &self.transforms, self.input, &sil_grad);
        let mut grad = deform_vjp(ch, &frames, &gy);

        let marks = deform_landmarks(ch, params, &self.transforms, self.input, &self.t)?;
        let dets: Vec<Vec<Keypoint2D>> = self.detections.iter().map(|d| d.to_vec()).collect();
        let kpg = keypoint_graph_loss(&marks, &self.cameras, &dets);
        grad.add_scaled(
            &landmark_graph_vjp(ch, &frames, &self.transforms, self.input, &kpg.grad),
            w.w_kpg,
        );

        let (arap, arap_grad) = arap_loss(&ch.graph, params);
        grad.add_scaled(&arap_grad, w.w_arap);

        Ok(DeformEvaluation {
            total: w.w_sil * sil + w.w_kpg * kpg.value + w.w_arap * arap,
            silhouette: sil,
            keypoint_graph: kpg.value,
            arap,
            behind: kpg.behind,
            grad,
        })
    }
}

/// Keypoint loss on graph-attached landmarks (no hierarchical weights).
pub fn keypoint_graph_loss(
    landmarks: &[Vector3<f64>],
    cameras: &[&Camera],
    detections: &[Vec<Keypoint2D>],
) -> KeypointTerm {
    keypoint_loss(landmarks, cameras, detections, None)
}

/// Convenience: world landmarks of a pose, for reporting.
pub fn world_landmarks(local: &LandmarkSet, input: &Camera, t: &Vector3<f64>) -> Vec<Vector3<f64>> {
    to_world_mesh(&local.positions, input, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camproj::{distance_transform, rasterize_mask, Intrinsics, Mask};
    use crate::kinematics::forward_landmarks;
    use crate::math::euler_xyz;
    use crate::testutil::{icosphere, test_camera, test_character};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(x: f64, y: f64) -> Keypoint2D {
        Keypoint2D::new(Vector2::new(x, y), 1.0)
    }

    #[test]
    fn confidence_threshold() {
        assert_eq!(Keypoint2D::new(Vector2::zeros(), 0.39).sigma, 0.0);
        assert_eq!(Keypoint2D::new(Vector2::zeros(), 0.4).sigma, 0.4);
        let parsed = parse_keypoints("1 2 0.9\n# c\n3 4 0.1\n").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].sigma, 0.0);
        assert!(parse_keypoints("1 2\n").is_err());
        assert_eq!(parse_keypoints(&keypoints_string(&parsed)).unwrap(), parsed);
    }

    #[test]
    fn keypoint_345() {
        let cam = test_camera();
        let x = Vector3::new(0.1, 0.2, 0.0);
        let p = cam.project(&x).unwrap();
        let term = keypoint_loss(&[x], &[&cam], &[vec![kp(p[0] + 3.0, p[1] + 4.0)]], None);
        assert_relative_eq!(term.value, 25.0, epsilon = 1e-9);
        let exact = keypoint_loss(&[x], &[&cam], &[vec![kp(p[0], p[1])]], None);
        assert_eq!(exact.value, 0.0);
    }

    #[test]
    fn keypoint_behind_camera_is_skipped() {
        let cam = test_camera();
        let behind = cam.origin * 2.0;
        let term = keypoint_loss(&[behind], &[&cam], &[vec![kp(0.0, 0.0)]], None);
        assert_eq!(term.behind, 1);
        assert_eq!(term.value, 0.0);
    }

    #[test]
    fn keypoint_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cams: Vec<Camera> = (0..3)
            .map(|c| {
                let a = c as f64 * 2.0;
                Camera::look_at(
                    Vector3::new(4.0 * a.sin(), -0.5, -4.0 * a.cos()),
                    Vector3::zeros(),
                    Vector3::y(),
                    Intrinsics {
                        fx: 500.0,
                        fy: 500.0,
                        cx: 200.0,
                        cy: 200.0,
                    },
                    400,
                    400,
                )
                .unwrap()
            })
            .collect();
        let refs: Vec<&Camera> = cams.iter().collect();
        let pts: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
            .collect();
        let dets: Vec<Vec<Keypoint2D>> = (0..3)
            .map(|_| {
                (0..5)
                    .map(|_| Keypoint2D::new(Vector2::new(rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0)), rng.gen_range(0.0..1.0)))
                    .collect()
            })
            .collect();
        let lambdas: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..1.0)).collect();
        let mut expect = 0.0;
        for c in 0..3 {
            for m in 0..5 {
                let y = cams[c].projection * pts[m].push(1.0);
                let p = Vector2::new(y[0] / y[2], y[1] / y[2]);
                expect += lambdas[m] * dets[c][m].sigma * (p - dets[c][m].p).norm_squared();
            }
        }
        let term = keypoint_loss(&pts, &refs, &dets, Some(&lambdas));
        assert_relative_eq!(term.value, expect, max_relative = 1e-12);
    }

    #[test]
    fn limit_examples() {
        let limits = [[-1.0, 1.0], [0.0, 2.0]];
        assert_eq!(limit_loss(&[0.5, 1.0], &limits).0, 0.0);
        let (v, g) = limit_loss(&[1.1, 1.0], &limits);
        assert_relative_eq!(v, 0.01, epsilon = 1e-12);
        assert_relative_eq!(g[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(limit_loss(&[-3.0, 1.0], &limits).0, 4.0);
    }

    #[test]
    fn arap_zero_under_global_motion() {
        let ch = test_character();
        let k = ch.node_count();
        let mut p = GraphParams::zeros(k);
        p.translations = vec![Vector3::new(0.3, -0.1, 0.2); k];
        assert!(arap_loss(&ch.graph, &p).0 <= 1e-9);
        let e = Vector3::new(0.4, -0.3, 0.9);
        let r0 = euler_xyz(&e);
        p.angles = vec![e; k];
        p.translations = ch.graph.nodes.iter().map(|g| r0 * g - g).collect();
        assert!(arap_loss(&ch.graph, &p).0 <= 1e-9);
    }

    #[test]
    fn arap_single_edge_by_hand() {
        let graph = DeformGraph {
            nodes: vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)],
            node_vertex: vec![0, 1],
            neighbors: vec![vec![(1, 0.5)], vec![]],
            influences: vec![],
            node_skinning: vec![],
            landmark_nodes: vec![],
        };
        let p = GraphParams {
            angles: vec![Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), Vector3::zeros()],
            translations: vec![Vector3::new(0.1, 0.0, 0.0), Vector3::new(0.0, 0.0, 0.3)],
        };
        // d = R (1,0,0) + T0 + G0 - G1 - T1 = (0,1,0) + (0.1,0,0) - (1,0,0) - (0,0,0.3)
        let l1: f64 = 0.9 + 1.0 + 0.3;
        assert_relative_eq!(arap_loss(&graph, &p).0, 0.5 * l1, epsilon = 3.0 * ARAP_EPSILON);
    }

    #[test]
    fn arap_scales_with_rigidity() {
        let ch = test_character();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = ch.node_count();
        let p = GraphParams {
            angles: (0..k).map(|_| Vector3::new(rng.gen_range(-0.2..0.2), 0.1, 0.0)).collect(),
            translations: (0..k).map(|_| Vector3::new(0.0, rng.gen_range(-0.1..0.1), 0.0)).collect(),
        };
        let mut g2 = ch.graph.clone();
        g2.neighbors.iter_mut().flatten().for_each(|(_, u)| *u *= 3.0);
        assert_relative_eq!(arap_loss(&g2, &p).0, 3.0 * arap_loss(&ch.graph, &p).0, max_relative = 1e-12);
    }

    #[test]
    fn lambda_schedule_grows_outward() {
        let ch = test_character();
        let sk = &ch.rig.skeleton;
        let start = lambda_schedule(sk, 0.0, 0.1);
        let end = lambda_schedule(sk, 1.0, 0.1);
        assert!(end.iter().all(|&l| l == 1.0));
        assert!(start.iter().any(|&l| l == 0.1));
        assert!(start.iter().any(|&l| l == 1.0));
    }

    #[test]
    fn silhouette_single_vertex() {
        // foreground is the right half; the vertex projects two pixels inside
        let mask = Mask::from_fn(20, 20, |x, _| x >= 10);
        let obs = distance_transform(&mask).unwrap();
        let cam = Camera::new(
            Matrix3::identity(),
            Vector3::zeros(),
            Intrinsics {
                fx: 10.0,
                fy: 10.0,
                cx: 0.0,
                cy: 0.0,
            },
            20,
            20,
        )
        .unwrap();
        let x = Vector3::new(12.5, 5.5, 10.0);
        let p = cam.project(&x).unwrap();
        assert_relative_eq!(obs.sample(&p), 2.0, epsilon = 1e-12);
        let frame = SilhouetteFrame {
            cameras: vec![vec![FrozenVertex {
                index: 0,
                cell: obs.cell(&p),
                rho: 1.0,
                offset: Vector2::zeros(),
            }]],
        };
        let (v, _) = silhouette_loss(&[x], &[&cam], &[&obs], &frame);
        assert_relative_eq!(v, 4.0, epsilon = 1e-12);
        let gated = SilhouetteFrame {
            cameras: vec![vec![FrozenVertex {
                rho: 0.0,
                ..frame.cameras[0][0]
            }]],
        };
        assert_eq!(silhouette_loss(&[x], &[&cam], &[&obs], &gated).0, 0.0);
    }

    #[test]
    fn silhouette_gate_inside_large_mask() {
        let cam = test_camera();
        let (world, faces) = icosphere(0.3, Vector3::zeros(), 3);
        let big = Mask::from_fn(400, 400, |x, y| (20..380).contains(&x) && (10..390).contains(&y));
        let obs = distance_transform(&big).unwrap();
        let topo = EdgeTopology::new(&faces);
        let frame = freeze_silhouette(&world, &faces, &topo, &[&cam], &[&obs]);
        assert!(!frame.is_empty());
        assert_eq!(frame.active_count(), frame.cameras[0].len());
        // flipped winding turns every normal inward: every gate closes
        let flipped: Vec<[usize; 3]> = faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
        let topo = EdgeTopology::new(&flipped);
        let frame = freeze_silhouette(&world, &flipped, &topo, &[&cam], &[&obs]);
        assert!(!frame.is_empty());
        assert_eq!(frame.active_count(), 0);
        assert_eq!(silhouette_loss(&world, &[&cam], &[&obs], &frame).0, 0.0);
    }

    #[test]
    fn silhouette_self_render_bound() {
        let ch = test_character();
        let cam = test_camera();
        let world = &ch.rig.mesh.vertices;
        let faces = &ch.rig.mesh.faces;
        let obs = distance_transform(&rasterize_mask(&cam, world, faces)).unwrap();
        let topo = EdgeTopology::new(faces);
        let frame = freeze_silhouette(world, faces, &topo, &[&cam], &[&obs]);
        let (v, _) = silhouette_loss(world, &[&cam], &[&obs], &frame);
        let n = frame.cameras[0].len() as f64;
        assert!(n > 0.0 && v < 2.0 * n, "loss {v} for {n} boundary vertices");
    }

    #[test]
    fn pose_objective_zero_at_truth() {
        let ch = test_character();
        let sk = &ch.rig.skeleton;
        let cams: Vec<Camera> = (0..3)
            .map(|c| {
                let a = c as f64 * 2.1;
                Camera::look_at(
                    Vector3::new(4.0 * a.sin(), -0.3, -4.0 * a.cos()),
                    Vector3::zeros(),
                    Vector3::y(),
                    Intrinsics {
                        fx: 480.0,
                        fy: 480.0,
                        cx: 200.0,
                        cy: 200.0,
                    },
                    400,
                    400,
                )
                .unwrap()
            })
            .collect();
        let theta: Vec<f64> = sk.limits.iter().map(|l| 0.3 * l[0] + 0.7 * l[1]).collect();
        let alpha = Vector3::new(0.0, 0.3, 0.0);
        let t = Vector3::new(0.1, -0.05, 0.2);
        let local = forward_landmarks(sk, &theta, &alpha).unwrap();
        let world = world_landmarks(&local, &cams[0], &t);
        let dets: Vec<Vec<Keypoint2D>> = cams
            .iter()
            .map(|c| world.iter().map(|x| Keypoint2D::new(c.project(x).unwrap(), 1.0)).collect())
            .collect();
        let refs: Vec<&Camera> = cams.iter().collect();
        let obj = PoseObjective::new(
            sk,
            refs,
            &cams[0],
            dets.iter().map(|d| d.as_slice()).collect(),
            LossWeights::default(),
            true,
        )
        .unwrap();
        let e = obj.evaluate(&theta, &alpha).unwrap();
        assert!(e.total < 1e-12, "{}", e.total);
        assert!((e.t - t).norm() < 1e-8);
    }
}
