//! Synthetic multi-view datasets with known ground truth.
//!
//! Joint angles follow per-DoF sinusoids kept inside the joint limits, the
//! root drifts linearly, and a script of per-node signals drives the graph.
//! Cameras sit on a ring around the subject; camera 0 looks along +z.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::Character;
use crate::camproj::{distance_transform, rasterize_mask, Camera, Intrinsics, Mask};
use crate::dataset::{gt_file, Dataset, write_frame, write_header, DatasetMeta, FrameObservations, FrameParams};
use crate::error::{Error, Result};
use crate::metrics::JointSequence;
use crate::graphdeform::{mesh_state, GraphParams};
use crate::kinematics::{forward_landmarks, node_transforms, to_world, PoseParams};
use crate::losses::Keypoint2D;
use crate::metrics::{eval_joint_tree, eval_joints};

/// A time-varying rigid offset applied to a set of graph nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformSignal {
    pub nodes: Vec<usize>,
    #[serde(default)]
    pub angles: [f64; 3],
    #[serde(default)]
    pub translation: [f64; 3],
    /// Cycles per frame; 0 holds the offset constant.
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl DeformSignal {
    fn gain(&self, frame: usize) -> f64 {
        if self.frequency == 0.0 {
            1.0
        } else {
            (TAU * self.frequency * frame as f64 + self.phase).sin()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub cameras: usize,
    pub frames: usize,
    /// Ring radius around the subject (m).
    pub ring_radius: f64,
    /// Camera heights are jittered uniformly by up to this much (m).
    pub height_jitter: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Sinusoid amplitude range as a fraction of half the usable DoF range.
    pub amplitude: [f64; 2],
    /// Sinusoid frequency range (cycles per frame).
    pub frequency: [f64; 2],
    /// Angles stay this far inside the joint limits (rad).
    pub limit_margin: f64,
    /// Root translation at frame 0 and its per-frame drift (m).
    pub start: [f64; 3],
    pub drift: [f64; 3],
    pub deformations: Vec<DeformSignal>,
    /// Gaussian keypoint noise (px).
    pub keypoint_noise: f64,
    /// Probability of a keypoint being reported with zero confidence.
    pub dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            cameras: 7,
            frames: 20,
            ring_radius: 4.0,
            height_jitter: 0.3,
            width: 400,
            height: 400,
            focal: 480.0,
            amplitude: [0.2, 0.6],
            frequency: [0.01, 0.05],
            limit_margin: 0.2,
            start: [0.0, 0.0, 0.0],
            drift: [0.01, 0.0, 0.005],
            deformations: Vec::new(),
            keypoint_noise: 0.0,
            dropout: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.cameras < 2 {
            return bad("synth needs at least 2 cameras");
        }
        if self.frames == 0 {
            return bad("synth needs at least 1 frame");
        }
        if !(self.ring_radius > 0.0 && self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return bad("ring radius, focal length and image size must be positive");
        }
        if !(0.0 <= self.amplitude[0] && self.amplitude[0] <= self.amplitude[1] && self.amplitude[1] <= 1.0) {
            return bad("amplitude range must satisfy 0 <= lo <= hi <= 1");
        }
        if !(0.0 <= self.frequency[0] && self.frequency[0] <= self.frequency[1]) {
            return bad("frequency range must satisfy 0 <= lo <= hi");
        }
        if !(self.limit_margin >= 0.0 && self.height_jitter >= 0.0 && self.keypoint_noise >= 0.0) {
            return bad("margins, jitter and noise must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }
}

/// Sinusoid of one DoF.
#[derive(Debug, Clone, Copy)]
struct Wave {
    center: f64,
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

impl Wave {
    fn at(&self, frame: usize) -> f64 {
        self.center + self.amplitude * (TAU * self.frequency * frame as f64 + self.phase).sin()
    }
}

/// Everything generated for a sequence, before it is written.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub meta: DatasetMeta,
    pub cameras: Vec<Camera>,
    pub frames: Vec<FrameObservations>,
    pub gt: Vec<FrameParams>,
}

impl SynthData {
    /// The sequence as an in-memory dataset.
    pub fn dataset(&self) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            cameras: self.cameras.clone(),
            first_frame: 0,
            frames: self.frames.clone(),
        }
    }

    pub fn eval_parents(&self) -> Vec<Option<usize>> {
        self.meta.eval_parents.iter().map(|&p| usize::try_from(p).ok()).collect()
    }

    /// Ground-truth evaluation joints.
    pub fn gt_joints(&self) -> JointSequence {
        JointSequence::new(self.gt.iter().map(|g| g.joints.clone()).collect(), self.eval_parents())
    }

    /// Ground-truth masks `[frame][camera]`.
    pub fn masks(&self) -> Vec<Vec<Mask>> {
        self.frames
            .iter()
            .map(|f| f.silhouettes.iter().map(|s| s.mask.clone()).collect())
            .collect()
    }
}

fn ring_cameras(config: &SynthConfig, target: Vector3<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<Camera>> {
    let k = Intrinsics {
        fx: config.focal,
        fy: config.focal,
        cx: config.width as f64 / 2.0,
        cy: config.height as f64 / 2.0,
    };
    (0..config.cameras)
        .map(|c| {
            let phi = TAU * c as f64 / config.cameras as f64;
            let jitter = if config.height_jitter > 0.0 {
                rng.gen_range(-config.height_jitter..=config.height_jitter)
            } else {
                0.0
            };
            let origin = target
                + Vector3::new(config.ring_radius * phi.sin(), jitter, -config.ring_radius * phi.cos());
            Camera::look_at(origin, target, Vector3::y(), k, config.width, config.height)
        })
        .collect()
}

fn motion(character: &Character, config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Wave>> {
    let m = config.limit_margin;
    character
        .rig
        .skeleton
        .limits
        .iter()
        .enumerate()
        .map(|(dof, &[lo, hi])| {
            let half = (hi - lo - 2.0 * m) / 2.0;
            if half < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "limit margin {m} leaves no room on DoF {dof} [{lo}, {hi}]"
                )));
            }
            let amplitude = half * rng.gen_range(config.amplitude[0]..=config.amplitude[1]);
            let (a, b) = (lo + m + amplitude, hi - m - amplitude);
            let center = if b > a { rng.gen_range(a..=b) } else { (a + b) / 2.0 };
            Ok(Wave {
                center,
                amplitude,
                frequency: rng.gen_range(config.frequency[0]..=config.frequency[1]),
                phase: rng.gen_range(0.0..TAU),
            })
        })
        .collect()
}

/// Ground-truth graph parameters of one frame.
pub fn scripted_graph(nodes: usize, script: &[DeformSignal], frame: usize) -> GraphParams {
    let mut g = GraphParams::zeros(nodes);
    for s in script {
        let gain = s.gain(frame);
        for &k in &s.nodes {
            g.angles[k] += Vector3::from(s.angles) * gain;
            g.translations[k] += Vector3::from(s.translation) * gain;
        }
    }
    g
}

/// Ground-truth root translation of one frame.
pub fn scripted_translation(config: &SynthConfig, frame: usize) -> Vector3<f64> {
    Vector3::from(config.start) + Vector3::from(config.drift) * frame as f64
}

fn render_frame(
    character: &Character,
    config: &SynthConfig,
    cameras: &[Camera],
    waves: &[Wave],
    frame: usize,
) -> Result<(FrameObservations, FrameParams)> {
    let skeleton = &character.rig.skeleton;
    let pose = PoseParams {
        theta: waves.iter().map(|w| w.at(frame)).collect(),
        alpha: Vector3::zeros(),
        t: scripted_translation(config, frame),
    };
    let graph = scripted_graph(character.node_count(), &config.deformations, frame);
    let transforms = node_transforms(character, &pose.theta, &pose.alpha)?;
    let input = &cameras[0];
    let mesh = mesh_state(character, &graph, &transforms, input, &pose.t)?;
    let faces = &character.rig.mesh.faces;
    let landmarks = to_world(&forward_landmarks(skeleton, &pose.theta, &pose.alpha)?, input, &pose.t);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(frame as u64 + 1);
    let noise = Normal::new(0.0, config.keypoint_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut keypoints = Vec::with_capacity(cameras.len());
    let mut silhouettes = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let mut kps = Vec::with_capacity(landmarks.len());
        for p in &landmarks.positions {
            let mut uv = cam.project(p)?;
            if config.keypoint_noise > 0.0 {
                uv += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
            let dropped = config.dropout > 0.0 && rng.gen_bool(config.dropout);
            kps.push(Keypoint2D::new(uv, if dropped { 0.0 } else { 1.0 }));
        }
        keypoints.push(kps);
        silhouettes.push(distance_transform(&rasterize_mask(cam, &mesh.world, faces))?);
    }
    let joints = eval_joints(skeleton, &pose, input)?;
    Ok((
        FrameObservations {
            keypoints,
            silhouettes,
        },
        FrameParams { pose, graph, joints },
    ))
}

/// Generates a sequence in memory. Deterministic for a given seed.
pub fn synthesize(character: &Character, config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let k = character.node_count();
    for s in &config.deformations {
        if let Some(&bad) = s.nodes.iter().find(|&&n| n >= k) {
            return Err(Error::InvalidConfig(format!("deformation node {bad} out of range (graph has {k})")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let waves = motion(character, config, &mut rng)?;
    let mean_t = (0..config.frames)
        .map(|f| scripted_translation(config, f))
        .sum::<Vector3<f64>>()
        / config.frames as f64;
    let cameras = ring_cameras(config, mean_t, &mut rng)?;

    let rendered = (0..config.frames)
        .into_par_iter()
        .map(|f| render_frame(character, config, &cameras, &waves, f))
        .collect::<Result<Vec<_>>>()?;
    let (frames, gt): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();

    let skeleton = &character.rig.skeleton;
    let (names, parents) = eval_joint_tree(skeleton);
    let meta = DatasetMeta {
        frames: config.frames,
        cameras: config.cameras,
        landmarks: skeleton.landmark_count(),
        input_camera: 0,
        seed: config.seed,
        eval_joints: names,
        eval_parents: parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
    };
    Ok(SynthData {
        meta,
        cameras,
        frames,
        gt,
    })
}

pub fn write_dataset(root: &Path, data: &SynthData) -> Result<()> {
    write_header(root, &data.meta, &data.cameras)?;
    for (f, (obs, gt)) in data.frames.iter().zip(&data.gt).enumerate() {
        write_frame(root, f, obs)?;
        gt.write(&gt_file(root, f))?;
    }
    Ok(())
}

/// Generates and writes a dataset to `root`.
pub fn generate(character: &Character, config: &SynthConfig, root: &Path) -> Result<SynthData> {
    let data = synthesize(character, config)?;
    write_dataset(root, &data)?;
    Ok(data)
}
