//! On-disk dataset and parameter-file layout.
//!
//! ```text
//! DIR/cameras.json
//! DIR/dataset.json
//! DIR/frames/NNNN/kp_CC.txt     x y sigma per landmark
//! DIR/frames/NNNN/mask_CC.pgm   binary PGM, 0/255
//! DIR/frames/NNNN/dt_CC.bin     distance image
//! DIR/gt/NNNN.txt               parameter file
//! ```
//!
//! Parameter files are keyed lines of whitespace-separated numbers:
//! `theta`, `alpha`, `t`, `A` and `T` (node-major, 3 values per node) and
//! `joints` (world evaluation joints, 3 values each).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camproj::{
    cameras_from_json, cameras_to_json, read_silhouette, write_dt, write_pgm, Camera,
    SilhouetteObservation,
};
use crate::error::{Error, Result};
use crate::grad::{flatten, unflatten};
use crate::graphdeform::GraphParams;
use crate::kinematics::PoseParams;
use crate::losses::{keypoints_string, read_keypoints, Keypoint2D};

pub const CAMERAS_FILE: &str = "cameras.json";
pub const META_FILE: &str = "dataset.json";

/// Observations of one frame, indexed by camera.
#[derive(Debug, Clone)]
pub struct FrameObservations {
    pub keypoints: Vec<Vec<Keypoint2D>>,
    pub silhouettes: Vec<SilhouetteObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub frames: usize,
    pub cameras: usize,
    pub landmarks: usize,
    pub input_camera: usize,
    pub seed: u64,
    /// Names of the evaluation joints (root first).
    pub eval_joints: Vec<String>,
    /// Parent of every evaluation joint, `-1` for the root.
    pub eval_parents: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub cameras: Vec<Camera>,
    /// Index of the first loaded frame.
    pub first_frame: usize,
    pub frames: Vec<FrameObservations>,
}

pub fn frame_dir(root: &Path, frame: usize) -> PathBuf {
    root.join("frames").join(format!("{frame:04}"))
}

pub fn gt_file(root: &Path, frame: usize) -> PathBuf {
    root.join("gt").join(format!("{frame:04}.txt"))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_meta(root: &Path) -> Result<DatasetMeta> {
    let path = root.join(META_FILE);
    serde_json::from_str(&read_text(&path)?)
        .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))
}

pub fn read_cameras(root: &Path) -> Result<Vec<Camera>> {
    cameras_from_json(&read_text(&root.join(CAMERAS_FILE))?)
}

pub fn write_header(root: &Path, meta: &DatasetMeta, cameras: &[Camera]) -> Result<()> {
    write_text(&root.join(CAMERAS_FILE), &cameras_to_json(cameras))?;
    write_text(
        &root.join(META_FILE),
        &serde_json::to_string_pretty(meta).expect("meta serializes"),
    )
}

pub fn write_frame(root: &Path, frame: usize, obs: &FrameObservations) -> Result<()> {
    let dir = frame_dir(root, frame);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (c, (kp, sil)) in obs.keypoints.iter().zip(&obs.silhouettes).enumerate() {
        write_text(&dir.join(format!("kp_{c:02}.txt")), &keypoints_string(kp))?;
        write_pgm(&dir.join(format!("mask_{c:02}.pgm")), &sil.mask)?;
        write_dt(&dir.join(format!("dt_{c:02}.bin")), sil)?;
    }
    Ok(())
}

pub fn read_frame(root: &Path, frame: usize, cameras: usize, landmarks: usize) -> Result<FrameObservations> {
    let dir = frame_dir(root, frame);
    let mut keypoints = Vec::with_capacity(cameras);
    let mut silhouettes = Vec::with_capacity(cameras);
    for c in 0..cameras {
        let kp_path = dir.join(format!("kp_{c:02}.txt"));
        let kp = read_keypoints(&kp_path)?;
        if kp.len() != landmarks {
            return Err(Error::malformed(
                kp_path.display().to_string(),
                format!("{} keypoints, expected {landmarks}", kp.len()),
            ));
        }
        keypoints.push(kp);
        silhouettes.push(read_silhouette(
            &dir.join(format!("mask_{c:02}.pgm")),
            &dir.join(format!("dt_{c:02}.bin")),
        )?);
    }
    Ok(FrameObservations {
        keypoints,
        silhouettes,
    })
}

/// Loads all frames, or the inclusive range `frames`.
pub fn load_dataset(root: &Path, frames: Option<(usize, usize)>) -> Result<Dataset> {
    let meta = read_meta(root)?;
    let cameras = read_cameras(root)?;
    if cameras.len() != meta.cameras {
        return Err(Error::malformed(
            "dataset",
            format!("{} cameras on file, {} in metadata", cameras.len(), meta.cameras),
        ));
    }
    let (first, last) = frames.unwrap_or((0, meta.frames.saturating_sub(1)));
    if meta.frames == 0 || first > last || last >= meta.frames {
        return Err(Error::InvalidConfig(format!(
            "frame range {first}..{last} outside dataset of {} frames",
            meta.frames
        )));
    }
    let loaded = (first..=last)
        .into_par_iter()
        .map(|f| read_frame(root, f, meta.cameras, meta.landmarks))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta,
        cameras,
        first_frame: first,
        frames: loaded,
    })
}

/// Everything stored per frame: pose, graph parameters and world
/// evaluation joints.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameParams {
    pub pose: PoseParams,
    pub graph: GraphParams,
    pub joints: Vec<Vector3<f64>>,
}

fn push_line(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        write!(out, " {v}").expect("write to string");
    }
    out.push('\n');
}

impl FrameParams {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        push_line(&mut out, "theta", &self.pose.theta);
        push_line(&mut out, "alpha", self.pose.alpha.as_slice());
        push_line(&mut out, "t", self.pose.t.as_slice());
        push_line(&mut out, "A", &flatten(&self.graph.angles));
        push_line(&mut out, "T", &flatten(&self.graph.translations));
        push_line(&mut out, "joints", &flatten(&self.joints));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line");
            let values = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::malformed("parameter file", format!("line {}: {e}", n + 1)))?;
            fields.insert(key, values);
        }
        let mut take = |key: &str| {
            fields
                .remove(key)
                .ok_or_else(|| Error::malformed("parameter file", format!("missing `{key}`")))
        };
        let vec3 = |v: Vec<f64>, what: &'static str| -> Result<Vector3<f64>> {
            if v.len() != 3 {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: 3,
                    got: v.len(),
                });
            }
            Ok(Vector3::new(v[0], v[1], v[2]))
        };
        let triples = |v: Vec<f64>, what: &'static str| -> Result<Vec<Vector3<f64>>> {
            if v.len() % 3 != 0 {
                return Err(Error::malformed("parameter file", format!("`{what}` length not a multiple of 3")));
            }
            Ok(unflatten(&v))
        };
        let theta = take("theta")?;
        let alpha = vec3(take("alpha")?, "alpha")?;
        let t = vec3(take("t")?, "t")?;
        let angles = triples(take("A")?, "A")?;
        let translations = triples(take("T")?, "T")?;
        let joints = triples(take("joints")?, "joints")?;
        if angles.len() != translations.len() {
            return Err(Error::malformed("parameter file", "A and T differ in length"));
        }
        Ok(Self {
            pose: PoseParams { theta, alpha, t },
            graph: GraphParams {
                angles,
                translations,
            },
            joints,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?).map_err(|e| match e {
            Error::Malformed { detail, .. } => Error::malformed(path.display().to_string(), detail),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }
}

/// Reads `DIR/<NNNN>.txt` parameter files for consecutive frames starting
/// at `first` until one is missing.
pub fn read_param_dir(dir: &Path, first: usize) -> Result<Vec<FrameParams>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("{:04}.txt", first + out.len()));
        if !path.exists() {
            break;
        }
        out.push(FrameParams::read(&path)?);
    }
    Ok(out)
}
