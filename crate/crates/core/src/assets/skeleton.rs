//! Kinematic skeleton and its JSON file format.
//!
//! File schema:
//!
//! ```text
//! {
//!   "joints":    [{"name": "pelvis", "parent": -1, "offset": [0,0,0], "axes": []}, ...],
//!   "landmarks": [{"name": "neck", "joint": 2, "offset": [0,0,0]}, ...],
//!   "limits":    [[min, max], ...],              // one per DoF, radians
//!   "skinning":  [[[bone, weight], ...], ...],   // one list per mesh vertex
//!   "eval_landmarks": ["nose", "neck", ...]      // evaluation subset
//! }
//! ```
//!
//! Offsets are rest-pose vectors from the parent joint in meters. Joint
//! axes compose in declared order, `R = R_a0(q0) * R_a1(q1) * ...`; the
//! rest pose has identity joint frames. The canonical frame is x right,
//! y down, z away from the input camera.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Axis;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    #[serde(with = "parent_index")]
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    #[serde(default)]
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub joint: usize,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkeletonFile {
    joints: Vec<Joint>,
    landmarks: Vec<Landmark>,
    limits: Vec<[f64; 2]>,
    skinning: Vec<Vec<(usize, f64)>>,
    #[serde(default)]
    eval_landmarks: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    pub landmarks: Vec<Landmark>,
    pub limits: Vec<[f64; 2]>,
    /// Per mesh vertex `(bone, weight)` pairs; bones are joint indices.
    pub skinning: Vec<Vec<(usize, f64)>>,
    /// Indices into `landmarks` used by the pose metrics.
    pub eval_landmarks: Vec<usize>,
    dof_start: Vec<usize>,
    dof_count: usize,
}

impl Skeleton {
    pub fn new(
        joints: Vec<Joint>,
        landmarks: Vec<Landmark>,
        limits: Vec<[f64; 2]>,
        skinning: Vec<Vec<(usize, f64)>>,
        eval_names: &[String],
    ) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        for (j, joint) in joints.iter().enumerate() {
            match joint.parent {
                None if j != 0 => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {j} ({}) has no parent but is not the root",
                        joint.name
                    )))
                }
                Some(p) if p >= j => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {j} ({}) has parent {p}, parents must precede children",
                        joint.name
                    )))
                }
                _ => {}
            }
        }
        if joints[0].parent.is_some() {
            return Err(Error::InvalidSkeleton("joint 0 must be the root".into()));
        }
        let mut dof_start = Vec::with_capacity(joints.len());
        let mut dof_count = 0;
        for joint in &joints {
            dof_start.push(dof_count);
            dof_count += joint.axes.len();
        }
        if limits.len() != dof_count {
            return Err(Error::DimensionMismatch {
                what: "joint limits",
                expected: dof_count,
                got: limits.len(),
            });
        }
        for (dof, &[min, max]) in limits.iter().enumerate() {
            if !(min <= max) {
                return Err(Error::InvalidLimits { dof, min, max });
            }
        }
        for (m, lm) in landmarks.iter().enumerate() {
            if lm.joint >= joints.len() {
                return Err(Error::InvalidSkeleton(format!(
                    "landmark {m} ({}) references joint {}",
                    lm.name, lm.joint
                )));
            }
        }
        for (i, weights) in skinning.iter().enumerate() {
            let mut sum = 0.0;
            for &(bone, w) in weights {
                if bone >= joints.len() || !(w >= 0.0) {
                    return Err(Error::InvalidSkeleton(format!(
                        "vertex {i} has invalid skinning entry ({bone}, {w})"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::SkinningNotNormalized { vertex: i, sum });
            }
        }
        let eval_landmarks = eval_names
            .iter()
            .map(|name| {
                landmarks
                    .iter()
                    .position(|l| &l.name == name)
                    .ok_or_else(|| {
                        Error::InvalidSkeleton(format!("unknown evaluation landmark '{name}'"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            joints,
            landmarks,
            limits,
            skinning,
            eval_landmarks,
            dof_start,
            dof_count,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SkeletonFile = serde_json::from_str(text)
            .map_err(|e| Error::malformed("skeleton file", e.to_string()))?;
        Self::new(
            file.joints,
            file.landmarks,
            file.limits,
            file.skinning,
            &file.eval_landmarks,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = SkeletonFile {
            joints: self.joints.clone(),
            landmarks: self.landmarks.clone(),
            limits: self.limits.clone(),
            skinning: self.skinning.clone(),
            eval_landmarks: self
                .eval_landmarks
                .iter()
                .map(|&m| self.landmarks[m].name.clone())
                .collect(),
        };
        serde_json::to_string(&file).expect("skeleton serializes")
    }

    pub fn dof_count(&self) -> usize {
        self.dof_count
    }

    /// Index of the first DoF owned by `joint`.
    pub fn dof_start(&self, joint: usize) -> usize {
        self.dof_start[joint]
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.len()
    }

    /// Rest-pose joint positions relative to the root.
    pub fn rest_joint_positions(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(self.joints.len());
        for joint in &self.joints {
            let offset = Vector3::from(joint.offset);
            let p = match joint.parent {
                Some(p) => out[p] + offset,
                None => offset,
            };
            out.push(p);
        }
        out
    }

    pub fn rest_landmark_positions(&self) -> Vec<Vector3<f64>> {
        let joints = self.rest_joint_positions();
        self.landmarks
            .iter()
            .map(|l| joints[l.joint] + Vector3::from(l.offset))
            .collect()
    }

    /// Number of joints between `joint` and the root (root has depth 0).
    pub fn joint_depth(&self, mut joint: usize) -> usize {
        let mut depth = 0;
        while let Some(p) = self.joints[joint].parent {
            depth += 1;
            joint = p;
        }
        depth
    }

    /// Whether `ancestor` lies on the path from `joint` to the root
    /// (a joint is its own ancestor).
    pub fn is_ancestor(&self, ancestor: usize, mut joint: usize) -> bool {
        loop {
            if joint == ancestor {
                return true;
            }
            match self.joints[joint].parent {
                Some(p) => joint = p,
                None => return false,
            }
        }
    }

    /// For every landmark, the nearest landmark on a strict ancestor joint,
    /// or `None` when only the root lies above it.
    pub fn landmark_parents(&self) -> Vec<Option<usize>> {
        self.landmarks
            .iter()
            .map(|lm| {
                let mut j = self.joints[lm.joint].parent;
                while let Some(joint) = j {
                    if let Some(m) = self.landmarks.iter().position(|l| l.joint == joint) {
                        return Some(m);
                    }
                    j = self.joints[joint].parent;
                }
                None
            })
            .collect()
    }
}

mod parent_index {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(v.map_or(-1, |p| p as i64))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let v = i64::deserialize(d)?;
        Ok(if v < 0 { None } else { Some(v as usize) })
    }
}
