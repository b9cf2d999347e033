//! Staged per-frame optimization: pose (stage A), then graph deformation at
//! the frozen pose (stage B), plus temporal smoothing of the output meshes.

use log::{debug, warn};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::{Character, Skeleton};
use crate::camproj::Camera;
use crate::dataset::{Dataset, FrameObservations};
use crate::error::{Error, Result};
use crate::graphdeform::{mesh_state, GraphParams, MeshState};
use crate::kinematics::{node_transforms, PoseParams};
use crate::losses::{DeformObjective, LossWeights, PoseObjective};
use crate::metrics::eval_joints;

/// Adam with exponentially decaying step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step size at the last iteration relative to the first.
    pub final_lr_fraction: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            final_lr_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        let c = self.config;
        self.t += 1;
        let b1 = 1.0 - c.beta1.powi(self.t);
        let b2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            x[i] -= lr * (self.m[i] / b1) / ((self.v[i] / b2).sqrt() + c.epsilon);
        }
    }

    /// Step size at iteration `i` of `n`.
    pub fn schedule(&self, base: f64, i: usize, n: usize) -> f64 {
        base * self.config.final_lr_fraction.powf(i as f64 / (n.max(2) - 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub pose_iterations: usize,
    pub deform_iterations: usize,
    pub pose_lr: f64,
    pub deform_lr: f64,
    pub adam: AdamConfig,
    /// Start each frame from the previous frame's result.
    pub warm_start: bool,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub weights: LossWeights,
    /// Weight the alignment normal equations by detection confidence.
    pub weighted_alignment: bool,
    /// Camera defining the camera-relative root frame.
    pub input_camera: usize,
    /// Supervising cameras (all when absent).
    pub cameras: Option<Vec<usize>>,
    /// Skip stage B.
    pub pose_only: bool,
    /// Worker threads for per-camera evaluation (0: all cores).
    pub jobs: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            pose_iterations: 300,
            deform_iterations: 300,
            pose_lr: 1e-2,
            deform_lr: 1e-3,
            adam: AdamConfig::default(),
            warm_start: true,
            kernel_size: 5,
            kernel_sigma: 1.0,
            weights: LossWeights::default(),
            weighted_alignment: true,
            input_camera: 0,
            cameras: None,
            pose_only: false,
            jobs: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pose_iterations == 0 || self.deform_iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig("smoothing kernel size must be odd".into()));
        }
        if !(self.kernel_sigma > 0.0) || !(self.pose_lr > 0.0) || !(self.deform_lr > 0.0) {
            return Err(Error::InvalidConfig("sigma and step sizes must be positive".into()));
        }
        self.weights.validate()
    }

    /// Supervising camera indices for a rig of `count` cameras.
    pub fn supervision(&self, count: usize) -> Result<Vec<usize>> {
        let cams = self.cameras.clone().unwrap_or_else(|| (0..count).collect());
        if cams.is_empty() || cams.iter().any(|&c| c >= count) || self.input_camera >= count {
            return Err(Error::InvalidConfig(format!(
                "camera selection {cams:?} / input {} invalid for {count} cameras",
                self.input_camera
            )));
        }
        Ok(cams)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTrace {
    pub total: f64,
    pub keypoint: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformTrace {
    pub total: f64,
    pub silhouette: f64,
    pub keypoint_graph: f64,
    pub arap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFit {
    pub pose: PoseParams,
    pub loss: f64,
    pub trace: Vec<PoseTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformFit {
    pub graph: GraphParams,
    pub loss: f64,
    pub trace: Vec<DeformTrace>,
}

/// Observations of one frame restricted to the supervising cameras.
pub struct FrameView<'a> {
    pub cameras: Vec<&'a Camera>,
    pub input: &'a Camera,
    pub observations: &'a FrameObservations,
    pub selection: Vec<usize>,
}

impl<'a> FrameView<'a> {
    pub fn new(cameras: &'a [Camera], observations: &'a FrameObservations, config: &FitConfig) -> Result<Self> {
        let selection = config.supervision(cameras.len())?;
        if observations.keypoints.len() != cameras.len() || observations.silhouettes.len() != cameras.len() {
            return Err(Error::DimensionMismatch {
                what: "cameras in frame",
                expected: cameras.len(),
                got: observations.keypoints.len(),
            });
        }
        Ok(Self {
            cameras: selection.iter().map(|&c| &cameras[c]).collect(),
            input: &cameras[config.input_camera],
            observations,
            selection,
        })
    }
}

/// Stage A: gradient steps on the pose objective with the translation
/// re-solved in closed form at every iterate. Returns the best iterate
/// (scored with all hierarchical weights at 1).
pub fn fit_pose(
    character: &Character,
    view: &FrameView,
    config: &FitConfig,
    init: &PoseParams,
) -> Result<PoseFit> {
    let skeleton = &character.rig.skeleton;
    let mut objective = PoseObjective::new(
        skeleton,
        view.cameras.clone(),
        view.input,
        view.selection.iter().map(|&c| view.observations.keypoints[c].as_slice()).collect(),
        config.weights,
        config.weighted_alignment,
    )?;
    let n = config.pose_iterations;
    let mut theta = init.theta.clone();
    let mut alpha = init.alpha;
    let mut adam = Adam::new(theta.len() + 3, config.adam);
    let mut trace = Vec::with_capacity(n + 1);
    let mut best: Option<(f64, PoseParams)> = None;
    let mut params = vec![0.0; theta.len() + 3];

    for i in 0..=n {
        objective.set_progress(1.0);
        let full = objective.evaluate(&theta, &alpha)?;
        if !full.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "pose",
                iteration: i,
            });
        }
        trace.push(PoseTrace {
            total: full.total,
            keypoint: full.keypoint,
            limit: full.limit,
        });
        if best.as_ref().map_or(true, |(b, _)| full.total < *b) {
            best = Some((
                full.total,
                PoseParams {
                    theta: theta.clone(),
                    alpha,
                    t: full.t,
                },
            ));
        }
        if i == n {
            break;
        }
        let fraction = i as f64 / n as f64;
        objective.set_progress(fraction);
        let e = if fraction >= 1.0 || objective.lambdas.iter().all(|&l| l == 1.0) {
            full
        } else {
            objective.evaluate(&theta, &alpha)?
        };
        params[..theta.len()].copy_from_slice(&theta);
        params[theta.len()..].copy_from_slice(alpha.as_slice());
        let mut grad = e.grad_theta;
        grad.extend_from_slice(e.grad_alpha.as_slice());
        adam.step(&mut params, &grad, adam.schedule(config.pose_lr, i, n));
        let d = theta.len();
        theta.copy_from_slice(&params[..d]);
        alpha = Vector3::new(params[d], params[d + 1], params[d + 2]);
    }
    let (loss, pose) = best.expect("at least one iterate");
    debug!("pose fit: loss {:.4e} -> {loss:.4e}", trace[0].total);
    Ok(PoseFit { pose, loss, trace })
}

/// Stage B: gradient steps on the deformation objective at a fixed pose;
/// boundary sets and gates are recomputed at every iterate.
pub fn fit_deform(
    character: &Character,
    view: &FrameView,
    config: &FitConfig,
    pose: &PoseParams,
    init: &GraphParams,
) -> Result<DeformFit> {
    let transforms = node_transforms(character, &pose.theta, &pose.alpha)?;
    let objective = DeformObjective::new(
        character,
        view.cameras.clone(),
        view.input,
        view.selection.iter().map(|&c| &view.observations.silhouettes[c]).collect(),
        view.selection.iter().map(|&c| view.observations.keypoints[c].as_slice()).collect(),
        transforms,
        pose.t,
        config.weights,
    )?;
    let k = character.node_count();
    if init.node_count() != k {
        return Err(Error::DimensionMismatch {
            what: "graph nodes",
            expected: k,
            got: init.node_count(),
        });
    }
    let n = config.deform_iterations;
    let mut x = crate::grad::flatten(&init.angles);
    x.extend(crate::grad::flatten(&init.translations));
    let mut adam = Adam::new(x.len(), config.adam);
    let mut trace = Vec::with_capacity(n + 1);
    let mut best: Option<(f64, GraphParams)> = None;
    for i in 0..=n {
        let params = GraphParams {
            angles: crate::grad::unflatten(&x[..3 * k]),
            translations: crate::grad::unflatten(&x[3 * k..]),
        };
        let frame = objective.freeze(&params);
        if frame.is_empty() {
            warn!("no boundary vertices in any camera at iteration {i}");
        }
        let e = objective.evaluate(&params, &frame)?;
        if !e.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "deform",
                iteration: i,
            });
        }
        trace.push(DeformTrace {
            total: e.total,
            silhouette: e.silhouette,
            keypoint_graph: e.keypoint_graph,
            arap: e.arap,
        });
        if best.as_ref().map_or(true, |(b, _)| e.total < *b) {
            best = Some((e.total, params));
        }
        if i == n {
            break;
        }
        let mut grad = crate::grad::flatten(&e.grad.angles);
        grad.extend(crate::grad::flatten(&e.grad.translations));
        adam.step(&mut x, &grad, adam.schedule(config.deform_lr, i, n));
    }
    let (loss, graph) = best.expect("at least one iterate");
    debug!("deform fit: loss {:.4e} -> {loss:.4e}", trace[0].total);
    Ok(DeformFit { graph, loss, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    pub pose: PoseParams,
    pub graph: GraphParams,
    pub mesh: MeshState,
    pub pose_trace: Vec<PoseTrace>,
    pub deform_trace: Vec<DeformTrace>,
    /// Failure message when the frame could not be fitted (the result then
    /// holds the rest pose).
    pub error: Option<String>,
}

/// Stage A then stage B for one frame.
pub fn fit_frame(
    character: &Character,
    cameras: &[Camera],
    observations: &FrameObservations,
    config: &FitConfig,
    frame: usize,
    init: Option<(&PoseParams, &GraphParams)>,
) -> Result<FrameResult> {
    let view = FrameView::new(cameras, observations, config)?;
    let rest_pose = PoseParams::rest(&character.rig.skeleton);
    let rest_graph = GraphParams::zeros(character.node_count());
    let (pose_init, graph_init) = init.unwrap_or((&rest_pose, &rest_graph));
    let pose = fit_pose(character, &view, config, pose_init)?;
    let deform = if config.pose_only {
        None
    } else {
        Some(fit_deform(character, &view, config, &pose.pose, graph_init)?)
    };
    let graph = deform.as_ref().map_or(rest_graph.clone(), |d| d.graph.clone());
    let transforms = node_transforms(character, &pose.pose.theta, &pose.pose.alpha)?;
    let mesh = mesh_state(character, &graph, &transforms, view.input, &pose.pose.t)?;
    Ok(FrameResult {
        frame,
        pose: pose.pose,
        graph,
        mesh,
        pose_trace: pose.trace,
        deform_trace: deform.map(|d| d.trace).unwrap_or_default(),
        error: None,
    })
}

fn failed_frame(character: &Character, input: &Camera, frame: usize, error: &Error) -> Result<FrameResult> {
    let pose = PoseParams::rest(&character.rig.skeleton);
    let graph = GraphParams::zeros(character.node_count());
    let transforms = node_transforms(character, &pose.theta, &pose.alpha)?;
    let mesh = mesh_state(character, &graph, &transforms, input, &pose.t)?;
    Ok(FrameResult {
        frame,
        pose,
        graph,
        mesh,
        pose_trace: Vec::new(),
        deform_trace: Vec::new(),
        error: Some(error.to_string()),
    })
}

/// Normalized Gaussian weights of the window around `center` truncated to
/// `[0, len)`.
pub fn kernel_weights(center: usize, len: usize, size: usize, sigma: f64) -> Vec<(usize, f64)> {
    let half = (size / 2) as i64;
    let mut w: Vec<(usize, f64)> = (-half..=half)
        .filter_map(|k| {
            let j = center as i64 + k;
            (0..len as i64)
                .contains(&j)
                .then(|| (j as usize, (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()))
        })
        .collect();
    let total: f64 = w.iter().map(|x| x.1).sum();
    w.iter_mut().for_each(|x| x.1 /= total);
    w
}

fn smooth_points(frames: &[&Vec<Vector3<f64>>], size: usize, sigma: f64) -> Vec<Vec<Vector3<f64>>> {
    (0..frames.len())
        .map(|f| {
            let w = kernel_weights(f, frames.len(), size, sigma);
            (0..frames[f].len())
                .map(|i| w.iter().fold(Vector3::zeros(), |acc, &(j, wj)| acc + frames[j][i] * wj))
                .collect()
        })
        .collect()
}

/// Per-vertex temporal Gaussian smoothing, renormalized at the ends.
pub fn smooth_sequence(frames: &[MeshState], size: usize, sigma: f64) -> Result<Vec<MeshState>> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    if size % 2 == 0 || !(sigma > 0.0) {
        return Err(Error::InvalidConfig("kernel size must be odd and sigma positive".into()));
    }
    let pick = |f: fn(&MeshState) -> &Vec<Vector3<f64>>| {
        smooth_points(&frames.iter().map(f).collect::<Vec<_>>(), size, sigma)
    };
    let deformed = pick(|m| &m.deformed);
    let posed = pick(|m| &m.posed);
    let world = pick(|m| &m.world);
    Ok(deformed
        .into_iter()
        .zip(posed)
        .zip(world)
        .map(|((deformed, posed), world)| MeshState {
            deformed,
            posed,
            world,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub frames: Vec<FrameResult>,
    pub smoothed: Vec<MeshState>,
}

impl SequenceResult {
    /// Evaluation joints of every fitted frame.
    pub fn joints(&self, skeleton: &Skeleton, input: &Camera) -> Result<Vec<Vec<Vector3<f64>>>> {
        self.frames.iter().map(|f| eval_joints(skeleton, &f.pose, input)).collect()
    }

    pub fn world_meshes(&self) -> Vec<Vec<Vector3<f64>>> {
        self.frames.iter().map(|f| f.mesh.world.clone()).collect()
    }

    pub fn failures(&self) -> usize {
        self.frames.iter().filter(|f| f.error.is_some()).count()
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Fits every frame of the dataset. With warm start, frames run in order
/// and each starts from its predecessor; a failing frame is retried from
/// the rest pose and, if it fails again, recorded and skipped. Without warm
/// start, frames are fitted in parallel.
pub fn fit_sequence(character: &Character, dataset: &Dataset, config: &FitConfig) -> Result<SequenceResult> {
    config.validate()?;
    config.supervision(dataset.cameras.len())?;
    let input = &dataset.cameras[config.input_camera];
    let frames = with_pool(config.jobs, || -> Result<Vec<FrameResult>> {
        let run = |f: usize, obs: &FrameObservations, init: Option<(&PoseParams, &GraphParams)>| {
            let index = dataset.first_frame + f;
            let first = fit_frame(character, &dataset.cameras, obs, config, index, init);
            match (first, init) {
                (Ok(r), _) => Ok(r),
                (Err(e), Some(_)) if e.is_numerical() => {
                    warn!("frame {index}: {e}; retrying from the rest pose");
                    fit_frame(character, &dataset.cameras, obs, config, index, None)
                }
                (Err(e), _) => Err(e),
            }
            .or_else(|e| {
                if e.is_numerical() {
                    warn!("frame {index} failed: {e}");
                    failed_frame(character, input, index, &e)
                } else {
                    Err(e)
                }
            })
        };
        if config.warm_start {
            let mut out: Vec<FrameResult> = Vec::with_capacity(dataset.frames.len());
            for (f, obs) in dataset.frames.iter().enumerate() {
                let init = out
                    .last()
                    .filter(|r| r.error.is_none())
                    .map(|r| (&r.pose, &r.graph));
                let r = run(f, obs, init)?;
                out.push(r);
            }
            Ok(out)
        } else {
            dataset
                .frames
                .par_iter()
                .enumerate()
                .map(|(f, obs)| run(f, obs, None))
                .collect()
        }
    })??;
    let meshes: Vec<MeshState> = frames.iter().map(|f| f.mesh.clone()).collect();
    let smoothed = smooth_sequence(&meshes, config.kernel_size, config.kernel_sigma)?;
    Ok(SequenceResult { frames, smoothed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: f64) -> MeshState {
        let p = vec![Vector3::new(v, 2.0 * v, -v)];
        MeshState {
            deformed: p.clone(),
            posed: p.clone(),
            world: p,
        }
    }

    #[test]
    fn constant_sequence_is_unchanged() {
        let seq: Vec<MeshState> = (0..6).map(|_| state(0.3)).collect();
        let out = smooth_sequence(&seq, 5, 1.0).unwrap();
        for m in &out {
            assert!((m.world[0] - seq[0].world[0]).norm() < 1e-15);
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let mut seq: Vec<MeshState> = (0..9).map(|_| state(0.0)).collect();
        seq[4] = state(1.0);
        let out = smooth_sequence(&seq, 5, 1.0).unwrap();
        let norm: f64 = (-2..=2).map(|k: i32| (-(k * k) as f64 / 2.0).exp()).sum();
        for (f, m) in out.iter().enumerate() {
            let k = f as i32 - 4;
            let expect = if k.abs() <= 2 {
                (-(k * k) as f64 / 2.0).exp() / norm
            } else {
                0.0
            };
            assert!((m.world[0][0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_is_normalized_at_boundaries() {
        for len in 1..7 {
            for c in 0..len {
                let s: f64 = kernel_weights(c, len, 5, 1.0).iter().map(|x| x.1).sum();
                assert!((s - 1.0).abs() < 1e-15);
            }
        }
        assert!(matches!(smooth_sequence(&[], 5, 1.0), Err(Error::EmptySequence)));
        assert!(smooth_sequence(&[state(1.0)], 4, 1.0).is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut x = vec![1.0, -2.0];
        for i in 0..500 {
            let g = vec![2.0 * x[0], 8.0 * x[1]];
            adam.step(&mut x, &g, adam.schedule(0.05, i, 500));
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            kernel_size: 4,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let cams = FitConfig {
            cameras: Some(vec![0, 9]),
            ..FitConfig::default()
        };
        assert!(cams.supervision(7).is_err());
        assert_eq!(FitConfig::default().supervision(3).unwrap(), vec![0, 1, 2]);
    }
}
