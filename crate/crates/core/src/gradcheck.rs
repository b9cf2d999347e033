//! Finite-difference verification of both stage objectives on random
//! synthetic configurations.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::Character;
use crate::error::{Error, Result};
use crate::grad::{fd_check, graph_blocks, pose_blocks, BlockError, FdOptions, FrozenDeform};
use crate::graphdeform::GraphParams;
use crate::kinematics::node_transforms;
use crate::losses::{DeformObjective, LossWeights, PoseObjective};
use crate::synthgen::{synthesize, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub configurations: usize,
    pub step: f64,
    pub tolerance: f64,
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Uniform perturbation of the pose around the generated one (rad).
    pub pose_perturbation: f64,
    /// Uniform ranges of the random node rotations (rad) and translations (m).
    pub angle_range: f64,
    pub translation_range: f64,
    /// Check a random subset of this many coordinates per block.
    pub max_coords: Option<usize>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            configurations: 20,
            step: 1e-5,
            tolerance: 1e-4,
            cameras: 4,
            width: 200,
            height: 200,
            focal: 240.0,
            pose_perturbation: 0.1,
            angle_range: 0.1,
            translation_range: 0.02,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub configuration: usize,
    pub objective: &'static str,
    pub block: BlockError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.block.max_error < self.tolerance && r.block.checked > 0)
    }

    pub fn worst(&self) -> Option<&GradcheckRow> {
        self.rows
            .iter()
            .max_by(|a, b| a.block.max_error.total_cmp(&b.block.max_error))
    }
}

fn check_configuration(
    character: &Character,
    config: &GradcheckConfig,
    weights: LossWeights,
    seed: u64,
    index: usize,
) -> Result<Vec<GradcheckRow>> {
    let synth = SynthConfig {
        seed: seed.wrapping_mul(1_000_003).wrapping_add(index as u64),
        cameras: config.cameras,
        frames: 1,
        width: config.width,
        height: config.height,
        focal: config.focal,
        ..SynthConfig::default()
    };
    let data = synthesize(character, &synth)?;
    let gt = &data.gt[0].pose;
    let obs = &data.frames[0];
    let cameras: Vec<_> = data.cameras.iter().collect();
    let input = &data.cameras[0];
    let detections: Vec<_> = obs.keypoints.iter().map(|k| k.as_slice()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(synth.seed);
    rng.set_stream(u64::MAX);
    let skeleton = &character.rig.skeleton;
    let p = config.pose_perturbation;
    let theta: Vec<f64> = gt
        .theta
        .iter()
        .zip(&skeleton.limits)
        .map(|(t, &[lo, hi])| (t + rng.gen_range(-p..=p)).clamp(lo, hi))
        .collect();
    let alpha = Vector3::new(rng.gen_range(-p..=p), rng.gen_range(-p..=p), rng.gen_range(-p..=p));
    let mut pose = PoseObjective::new(skeleton, cameras.clone(), input, detections.clone(), weights, true)?;
    pose.set_progress(rng.gen_range(0.0..1.0));
    let options = FdOptions {
        step: config.step,
        seed: synth.seed,
        max_coords: config.max_coords,
    };
    let mut rows: Vec<GradcheckRow> = fd_check(&pose, &pose_blocks(&theta, &alpha), options)?
        .into_iter()
        .map(|block| GradcheckRow {
            configuration: index,
            objective: "pose",
            block,
        })
        .collect();

    let transforms = node_transforms(character, &gt.theta, &gt.alpha)?;
    let deform = DeformObjective::new(
        character,
        cameras,
        input,
        obs.silhouettes.iter().collect(),
        detections,
        transforms,
        gt.t,
        weights,
    )?;
    let k = character.node_count();
    let mut sample = |s: f64| -> Vec<Vector3<f64>> {
        (0..k)
            .map(|_| Vector3::new(rng.gen_range(-s..=s), rng.gen_range(-s..=s), rng.gen_range(-s..=s)))
            .collect()
    };
    let params = GraphParams {
        angles: sample(config.angle_range),
        translations: sample(config.translation_range),
    };
    let frozen = FrozenDeform::at(&deform, &params);
    rows.extend(
        fd_check(&frozen, &graph_blocks(&params), options)?
            .into_iter()
            .map(|block| GradcheckRow {
                configuration: index,
                objective: "deform",
                block,
            }),
    );
    Ok(rows)
}

/// Runs the check on `config.configurations` random frames, in parallel.
pub fn gradcheck_suite(
    character: &Character,
    config: &GradcheckConfig,
    weights: LossWeights,
    seed: u64,
) -> Result<GradcheckReport> {
    if config.configurations == 0 || config.cameras < 2 {
        return Err(Error::InvalidConfig(
            "gradcheck needs at least one configuration and two cameras".into(),
        ));
    }
    let rows = (0..config.configurations)
        .into_par_iter()
        .map(|i| check_configuration(character, config, weights, seed, i))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(GradcheckReport {
        rows,
        tolerance: config.tolerance,
    })
}
