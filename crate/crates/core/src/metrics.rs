//! Pose and silhouette evaluation metrics.
//!
//! Joint sequences hold the world root joint followed by the evaluation
//! landmarks named in the skeleton file. Distances are reported in
//! millimeters, PCK and AUC in percent.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::assets::Skeleton;
use crate::camproj::{rasterize_mask, Camera, Mask};
use crate::error::{Error, Result};
use crate::kinematics::{pose_skeleton, PoseParams};

pub const PCK_THRESHOLD_MM: f64 = 150.0;
pub const AUC_STEP_MM: f64 = 5.0;

/// World joints per frame plus the evaluation subset and bone tree.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSequence {
    pub frames: Vec<Vec<Vector3<f64>>>,
    /// Parent of every joint (`None` for the root, which comes first).
    pub parents: Vec<Option<usize>>,
    /// Joints included in PCK/AUC/MPJPE.
    pub mask: Vec<bool>,
}

impl JointSequence {
    pub fn new(frames: Vec<Vec<Vector3<f64>>>, parents: Vec<Option<usize>>) -> Self {
        let mask = (0..parents.len()).map(|j| parents[j].is_some()).collect();
        Self {
            frames,
            parents,
            mask,
        }
    }

    fn check(&self, other: &JointSequence) -> Result<()> {
        if self.frames.len() != other.frames.len() {
            return Err(Error::FrameMismatch(self.frames.len(), other.frames.len()));
        }
        if self.frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(())
    }

    fn masked(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, m)| **m).map(|(j, _)| j)
    }
}

/// Names and parents of the evaluation joints: the root joint, then every
/// evaluation landmark hanging off its nearest evaluation ancestor (or the
/// root).
pub fn eval_joint_tree(skeleton: &Skeleton) -> (Vec<String>, Vec<Option<usize>>) {
    let lm_parents = skeleton.landmark_parents();
    let slot = |lm: usize| skeleton.eval_landmarks.iter().position(|&e| e == lm);
    let mut names = vec![skeleton.joints[0].name.clone()];
    let mut parents = vec![None];
    for &lm in &skeleton.eval_landmarks {
        let mut p = lm_parents[lm];
        while let Some(q) = p {
            if slot(q).is_some() {
                break;
            }
            p = lm_parents[q];
        }
        names.push(skeleton.landmarks[lm].name.clone());
        parents.push(Some(p.and_then(slot).map_or(0, |s| s + 1)));
    }
    (names, parents)
}

/// World evaluation joints of a pose seen from the input camera.
pub fn eval_joints(skeleton: &Skeleton, pose: &PoseParams, input: &Camera) -> Result<Vec<Vector3<f64>>> {
    let state = pose_skeleton(skeleton, &pose.theta, &pose.alpha)?;
    let rt = input.rotation.transpose();
    let mut out = vec![rt * state.positions[0] + pose.t];
    for &lm in &skeleton.eval_landmarks {
        let l = &skeleton.landmarks[lm];
        let p = state.positions[l.joint] + state.rotations[l.joint] * Vector3::from(l.offset);
        out.push(rt * p + pose.t);
    }
    Ok(out)
}

pub fn bone_lengths(joints: &[Vector3<f64>], parents: &[Option<usize>]) -> Vec<f64> {
    parents
        .iter()
        .enumerate()
        .map(|(j, p)| p.map_or(0.0, |p| (joints[j] - joints[p]).norm()))
        .collect()
}

/// Joint indices with every parent before its children.
pub fn topological_order(parents: &[Option<usize>]) -> Vec<usize> {
    fn visit(j: usize, parents: &[Option<usize>], done: &mut [bool], out: &mut Vec<usize>) {
        if done[j] {
            return;
        }
        done[j] = true;
        if let Some(p) = parents[j] {
            visit(p, parents, done, out);
        }
        out.push(j);
    }
    let mut done = vec![false; parents.len()];
    let mut out = Vec::with_capacity(parents.len());
    for j in 0..parents.len() {
        visit(j, parents, &mut done, &mut out);
    }
    out
}

/// Keeps every predicted bone direction and sets its length to the ground
/// truth, root outward. Returns the re-posed joints and the number of
/// zero-length bones that inherited their parent's direction.
pub fn rescale_bones(
    joints: &[Vector3<f64>],
    parents: &[Option<usize>],
    lengths: &[f64],
) -> (Vec<Vector3<f64>>, usize) {
    let mut out = joints.to_vec();
    let mut dirs = vec![Vector3::zeros(); joints.len()];
    let mut flagged = 0;
    for j in topological_order(parents) {
        let Some(p) = parents[j] else { continue };
        let d = joints[j] - joints[p];
        let n = d.norm();
        dirs[j] = if n > 1e-12 {
            d / n
        } else {
            flagged += 1;
            dirs[p]
        };
        out[j] = out[p] + dirs[j] * lengths[j];
    }
    (out, flagged)
}

/// Rescales every frame of `pred` to the bone lengths of `gt`.
pub fn rescale_sequence(pred: &JointSequence, gt: &JointSequence) -> Result<(JointSequence, usize)> {
    pred.check(gt)?;
    let mut flagged = 0;
    let frames = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| {
            let (r, f) = rescale_bones(p, &pred.parents, &bone_lengths(g, &gt.parents));
            flagged += f;
            r
        })
        .collect();
    Ok((
        JointSequence {
            frames,
            ..pred.clone()
        },
        flagged,
    ))
}

/// Mean root position error (mm).
pub fn gle(pred: &JointSequence, gt: &JointSequence) -> Result<f64> {
    pred.check(gt)?;
    let total: f64 = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| (p[0] - g[0]).norm())
        .sum();
    Ok(1000.0 * total / pred.frames.len() as f64)
}

fn root_aligned_errors(pred: &JointSequence, gt: &JointSequence) -> Result<Vec<f64>> {
    pred.check(gt)?;
    let mut out = Vec::new();
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        for j in pred.masked() {
            out.push(1000.0 * ((p[j] - p[0]) - (g[j] - g[0])).norm());
        }
    }
    Ok(out)
}

fn pck_of(errors: &[f64], threshold: f64) -> f64 {
    100.0 * errors.iter().filter(|&&e| e <= threshold).count() as f64 / errors.len() as f64
}

/// Percentage of root-aligned joints within `threshold_mm`.
pub fn pck3d(pred: &JointSequence, gt: &JointSequence, threshold_mm: f64) -> Result<f64> {
    Ok(pck_of(&root_aligned_errors(pred, gt)?, threshold_mm))
}

/// Mean PCK over thresholds 0, 5, ..., 150 mm.
pub fn auc(pred: &JointSequence, gt: &JointSequence) -> Result<f64> {
    let errors = root_aligned_errors(pred, gt)?;
    let steps = (PCK_THRESHOLD_MM / AUC_STEP_MM).round() as usize;
    let total: f64 = (0..=steps)
        .map(|s| pck_of(&errors, s as f64 * AUC_STEP_MM))
        .sum();
    Ok(total / (steps + 1) as f64)
}

/// Similarity transform `(scale, R, t)` minimizing `|s R x + t - y|^2`.
pub fn similarity_align(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / n;
    let my = y.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (b - my) * (a - mx).transpose();
        var += (a - mx).norm_squared();
    }
    cov /= n;
    var /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    let scale = if var > 0.0 {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var
    } else {
        1.0
    };
    (scale, r, my - r * mx * scale)
}

/// Mean per-joint error after per-frame similarity alignment (mm).
pub fn mpjpe_procrustes(pred: &JointSequence, gt: &JointSequence) -> Result<f64> {
    pred.check(gt)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        let idx: Vec<usize> = pred.masked().collect();
        let x: Vec<Vector3<f64>> = idx.iter().map(|&j| p[j]).collect();
        let y: Vec<Vector3<f64>> = idx.iter().map(|&j| g[j]).collect();
        let (s, r, t) = similarity_align(&x, &y);
        for (a, b) in x.iter().zip(&y) {
            total += 1000.0 * ((r * a) * s + t - b).norm();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `|A & B| / |A | B|`, 1 when both are empty.
pub fn iou(a: &Mask, b: &Mask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IouFamily {
    /// Mean over all views.
    pub amviou: f64,
    /// Mean over all views except the input view.
    pub rviou: f64,
    /// Input view only.
    pub sviou: f64,
}

/// IoU means from a `[frame][camera]` IoU table.
pub fn iou_summary(table: &[Vec<f64>], input: usize) -> Result<IouFamily> {
    if table.is_empty() {
        return Err(Error::EmptySequence);
    }
    let c = table[0].len();
    let (mut all, mut rest, mut single) = (0.0, 0.0, 0.0);
    for row in table {
        for (cam, v) in row.iter().enumerate() {
            all += v;
            if cam == input {
                single += v;
            } else {
                rest += v;
            }
        }
    }
    let f = table.len() as f64;
    Ok(IouFamily {
        amviou: all / (f * c as f64),
        rviou: if c > 1 { rest / (f * (c - 1) as f64) } else { f64::NAN },
        sviou: single / f,
    })
}

/// The joint metrics of one prediction. PCK, AUC and MPJPE are computed
/// after rescaling the prediction to the ground-truth bone lengths; GLE on
/// the raw prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseScores {
    pub gle_mm: f64,
    pub pck3d: f64,
    pub auc: f64,
    pub mpjpe_pa_mm: f64,
    /// Zero-length predicted bones met while rescaling.
    pub flagged: usize,
}

pub fn pose_scores(pred: &JointSequence, gt: &JointSequence) -> Result<PoseScores> {
    let (rescaled, flagged) = rescale_sequence(pred, gt)?;
    Ok(PoseScores {
        gle_mm: gle(pred, gt)?,
        pck3d: pck3d(&rescaled, gt, PCK_THRESHOLD_MM)?,
        auc: auc(&rescaled, gt)?,
        mpjpe_pa_mm: mpjpe_procrustes(&rescaled, gt)?,
        flagged,
    })
}

/// Rasterizes each fitted mesh in every camera and compares it with the
/// ground-truth masks `[frame][camera]`.
pub fn iou_family(
    meshes: &[Vec<Vector3<f64>>],
    faces: &[[usize; 3]],
    gt_masks: &[Vec<Mask>],
    cameras: &[Camera],
    input: usize,
) -> Result<IouFamily> {
    if meshes.len() != gt_masks.len() {
        return Err(Error::FrameMismatch(meshes.len(), gt_masks.len()));
    }
    let table: Vec<Vec<f64>> = meshes
        .iter()
        .zip(gt_masks)
        .map(|(v, masks)| {
            cameras
                .iter()
                .zip(masks)
                .map(|(cam, gt)| iou(&rasterize_mask(cam, v, faces), gt))
                .collect()
        })
        .collect();
    iou_summary(&table, input)
}
