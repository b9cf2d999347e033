//! Procedural "capsule person": a blend of capsules polygonized with
//! surface nets, rigged with a 27-DoF skeleton and 21 landmarks.
//!
//! DoF layout (declared axis order per joint):
//!
//! | joint        | axes  | | joint       | axes  |
//! |--------------|-------| |-------------|-------|
//! | spine        | x y z | | l/r hip     | x y z |
//! | neck         | x z   | | l/r knee    | x     |
//! | l/r clavicle | z     | | l/r ankle   | x     |
//! | l/r shoulder | x y z | |             |       |
//! | l/r elbow    | y     | |             |       |
//! | l/r wrist    | z     | |             |       |
//!
//! The rest pose is a T-pose in the canonical frame (y down, facing -z).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;

use super::{
    mesh::{connected_components, obj_string},
    CharacterRig, Joint, Landmark, RigManifest, RigidityTable, Skeleton, TemplateMesh,
};
use crate::assets::GraphSettings;
use crate::error::{Error, Result};
use crate::math::Axis;

/// Generated asset, ready to be written as a rig directory.
#[derive(Debug, Clone)]
pub struct CapsulePerson {
    pub mesh: TemplateMesh,
    pub skeleton: Skeleton,
    pub table: RigidityTable,
}

impl CapsulePerson {
    pub fn into_rig(self) -> Result<CharacterRig> {
        CharacterRig::new(self.mesh, self.skeleton, &self.table)
    }

    pub fn write_dir(&self, dir: &Path, graph: GraphSettings) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write(
            super::MESH_FILE,
            obj_string(&self.mesh.vertices, &self.mesh.faces),
        )?;
        let classes: String = self
            .mesh
            .rigidity_class
            .iter()
            .map(|c| format!("{c}\n"))
            .collect();
        write(super::RIGIDITY_FILE, classes)?;
        write(super::SKELETON_FILE, self.skeleton.to_json())?;
        let manifest = RigManifest {
            rigidity_weights: self
                .table
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            graph,
        };
        write(
            super::MANIFEST_FILE,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
    }
}

struct Capsule {
    a: Vector3<f64>,
    b: Vector3<f64>,
    radius: f64,
    /// Depth (z) squash factor of the cross-section.
    depth: f64,
}

impl Capsule {
    fn new(a: [f64; 3], b: [f64; 3], radius: f64, depth: f64) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            radius,
            depth,
        }
    }

    fn field(&self, p: &Vector3<f64>) -> f64 {
        let d = segment_distance_vec(p, &self.a, &self.b);
        Vector3::new(d[0], d[1], d[2] / self.depth).norm() - self.radius
    }
}

fn segment_distance_vec(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p - (a + ab * t)
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

struct JointSpec {
    name: &'static str,
    parent: i64,
    offset: [f64; 3],
    axes: &'static [Axis],
    limits: &'static [[f64; 2]],
}

const fn js(
    name: &'static str,
    parent: i64,
    offset: [f64; 3],
    axes: &'static [Axis],
    limits: &'static [[f64; 2]],
) -> JointSpec {
    JointSpec {
        name,
        parent,
        offset,
        axes,
        limits,
    }
}

use Axis::{X, Y, Z};

const JOINTS: [JointSpec; 22] = [
    js("pelvis", -1, [0.0, 0.0, 0.0], &[], &[]),
    js("spine", 0, [0.0, -0.25, 0.0], &[X, Y, Z], &[[-0.5, 0.5], [-0.5, 0.5], [-0.4, 0.4]]),
    js("neck", 1, [0.0, -0.28, 0.0], &[X, Z], &[[-0.5, 0.5], [-0.4, 0.4]]),
    js("head", 2, [0.0, -0.12, 0.0], &[], &[]),
    js("l_clavicle", 1, [0.04, -0.22, 0.0], &[Z], &[[-0.25, 0.25]]),
    js("l_shoulder", 4, [0.15, 0.02, 0.0], &[X, Y, Z], &[[-1.2, 1.2], [-1.0, 1.0], [-0.6, 1.3]]),
    js("l_elbow", 5, [0.28, 0.0, 0.0], &[Y], &[[0.0, 2.3]]),
    js("l_wrist", 6, [0.25, 0.0, 0.0], &[Z], &[[-0.7, 0.7]]),
    js("l_hand", 7, [0.08, 0.0, 0.0], &[], &[]),
    js("r_clavicle", 1, [-0.04, -0.22, 0.0], &[Z], &[[-0.25, 0.25]]),
    js("r_shoulder", 9, [-0.15, 0.02, 0.0], &[X, Y, Z], &[[-1.2, 1.2], [-1.0, 1.0], [-1.3, 0.6]]),
    js("r_elbow", 10, [-0.28, 0.0, 0.0], &[Y], &[[-2.3, 0.0]]),
    js("r_wrist", 11, [-0.25, 0.0, 0.0], &[Z], &[[-0.7, 0.7]]),
    js("r_hand", 12, [-0.08, 0.0, 0.0], &[], &[]),
    js("l_hip", 0, [0.1, 0.05, 0.0], &[X, Y, Z], &[[-1.5, 0.5], [-0.6, 0.6], [-0.6, 0.3]]),
    js("l_knee", 14, [0.0, 0.42, 0.0], &[X], &[[0.0, 2.2]]),
    js("l_ankle", 15, [0.0, 0.42, 0.0], &[X], &[[-0.6, 0.6]]),
    js("l_toe", 16, [0.0, 0.06, -0.13], &[], &[]),
    js("r_hip", 0, [-0.1, 0.05, 0.0], &[X, Y, Z], &[[-1.5, 0.5], [-0.6, 0.6], [-0.3, 0.6]]),
    js("r_knee", 18, [0.0, 0.42, 0.0], &[X], &[[0.0, 2.2]]),
    js("r_ankle", 19, [0.0, 0.42, 0.0], &[X], &[[-0.6, 0.6]]),
    js("r_toe", 20, [0.0, 0.06, -0.13], &[], &[]),
];

const HEAD: usize = 3;

const LANDMARKS: [(&str, &str, [f64; 3]); 21] = [
    ("neck", "neck", [0.0, 0.0, 0.0]),
    ("l_shoulder", "l_shoulder", [0.0, 0.0, 0.0]),
    ("l_elbow", "l_elbow", [0.0, 0.0, 0.0]),
    ("l_wrist", "l_wrist", [0.0, 0.0, 0.0]),
    ("l_hand", "l_hand", [0.0, 0.0, 0.0]),
    ("r_shoulder", "r_shoulder", [0.0, 0.0, 0.0]),
    ("r_elbow", "r_elbow", [0.0, 0.0, 0.0]),
    ("r_wrist", "r_wrist", [0.0, 0.0, 0.0]),
    ("r_hand", "r_hand", [0.0, 0.0, 0.0]),
    ("l_hip", "l_hip", [0.0, 0.0, 0.0]),
    ("l_knee", "l_knee", [0.0, 0.0, 0.0]),
    ("l_ankle", "l_ankle", [0.0, 0.0, 0.0]),
    ("l_toe", "l_toe", [0.0, 0.0, 0.0]),
    ("r_hip", "r_hip", [0.0, 0.0, 0.0]),
    ("r_knee", "r_knee", [0.0, 0.0, 0.0]),
    ("r_ankle", "r_ankle", [0.0, 0.0, 0.0]),
    ("r_toe", "r_toe", [0.0, 0.0, 0.0]),
    ("nose", "head", [0.0, -0.11, -0.1]),
    ("l_eye", "head", [0.035, -0.14, -0.085]),
    ("r_eye", "head", [-0.035, -0.14, -0.085]),
    ("chin", "head", [0.0, -0.04, -0.075]),
];

const EVAL_LANDMARKS: [&str; 14] = [
    "nose",
    "neck",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
];

/// Class labels: 0 skin, 1 clothing (torso and thighs).
const CLOTHING_BONES: [&str; 6] = ["pelvis", "spine", "l_clavicle", "r_clavicle", "l_hip", "r_hip"];

fn shape() -> Vec<Capsule> {
    let mut parts = vec![
        Capsule::new([0.0, -0.76, 0.0], [0.0, -0.76, 0.0], 0.1, 1.0),
        Capsule::new([0.0, -0.5, 0.0], [0.0, -0.68, 0.0], 0.05, 1.0),
        Capsule::new([0.0, -0.05, 0.0], [0.0, -0.42, 0.0], 0.15, 0.65),
        Capsule::new([-0.19, -0.45, 0.0], [0.19, -0.45, 0.0], 0.06, 1.0),
        Capsule::new([-0.1, 0.04, 0.0], [0.1, 0.04, 0.0], 0.12, 0.75),
    ];
    for s in [1.0, -1.0] {
        parts.push(Capsule::new([0.19 * s, -0.45, 0.0], [0.47 * s, -0.45, 0.0], 0.05, 1.0));
        parts.push(Capsule::new([0.47 * s, -0.45, 0.0], [0.72 * s, -0.45, 0.0], 0.042, 1.0));
        parts.push(Capsule::new([0.72 * s, -0.45, 0.0], [0.81 * s, -0.45, 0.0], 0.038, 0.7));
        parts.push(Capsule::new([0.1 * s, 0.05, 0.0], [0.1 * s, 0.47, 0.0], 0.07, 1.0));
        parts.push(Capsule::new([0.1 * s, 0.47, 0.0], [0.1 * s, 0.89, 0.0], 0.05, 1.0));
        parts.push(Capsule::new([0.1 * s, 0.89, 0.0], [0.1 * s, 0.95, -0.13], 0.04, 1.0));
    }
    parts
}

fn field(parts: &[Capsule], p: &Vector3<f64>) -> f64 {
    parts
        .iter()
        .map(|c| c.field(p))
        .fold(f64::INFINITY, |acc, d| {
            if acc.is_infinite() {
                d
            } else {
                smooth_min(acc, d, 0.025)
            }
        })
}

/// Surface-nets polygonization of `f < 0` on a regular grid.
fn surface_nets(
    f: impl Fn(&Vector3<f64>) -> f64,
    min: Vector3<f64>,
    max: Vector3<f64>,
    cell: f64,
) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let dims = ((max - min) / cell).map(|d| d.ceil() as usize + 1);
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let idx = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let pos = |i: usize, j: usize, k: usize| {
        min + Vector3::new(i as f64, j as f64, k as f64) * cell
    };
    let mut values = vec![0.0; nx * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                values[idx(i, j, k)] = f(&pos(i, j, k));
            }
        }
    }

    const CORNERS: [[usize; 3]; 8] = [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ];
    const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (2, 3),
        (4, 5),
        (6, 7),
        (0, 2),
        (1, 3),
        (4, 6),
        (5, 7),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];
    let cidx = |i: usize, j: usize, k: usize| (k * (ny - 1) + j) * (nx - 1) + i;
    let mut cell_vertex = vec![usize::MAX; (nx - 1) * (ny - 1) * (nz - 1)];
    let mut vertices = Vec::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let v: Vec<f64> = CORNERS
                    .iter()
                    .map(|c| values[idx(i + c[0], j + c[1], k + c[2])])
                    .collect();
                let mut sum = Vector3::zeros();
                let mut count = 0;
                for &(a, b) in &EDGES {
                    if (v[a] < 0.0) != (v[b] < 0.0) {
                        let t = v[a] / (v[a] - v[b]);
                        let pa = pos(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = pos(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        sum += pa + (pb - pa) * t;
                        count += 1;
                    }
                }
                if count > 0 {
                    cell_vertex[cidx(i, j, k)] = vertices.len();
                    vertices.push(sum / count as f64);
                }
            }
        }
    }

    let mut faces = Vec::new();
    for k in 1..nz - 1 {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let here = values[idx(i, j, k)];
                let steps = [
                    (idx(i + 1, j, k), Vector3::x(), [(i, j, k), (i, j - 1, k), (i, j - 1, k - 1), (i, j, k - 1)]),
                    (idx(i, j + 1, k), Vector3::y(), [(i, j, k), (i - 1, j, k), (i - 1, j, k - 1), (i, j, k - 1)]),
                    (idx(i, j, k + 1), Vector3::z(), [(i, j, k), (i - 1, j, k), (i - 1, j - 1, k), (i, j - 1, k)]),
                ];
                for (next, dir, cells) in steps {
                    let there = values[next];
                    if (here < 0.0) == (there < 0.0) {
                        continue;
                    }
                    let outward = if here < 0.0 { dir } else { -dir };
                    let q: Vec<usize> = cells
                        .iter()
                        .map(|&(a, b, c)| cell_vertex[cidx(a, b, c)])
                        .collect();
                    if q.iter().any(|&v| v == usize::MAX) {
                        continue;
                    }
                    for tri in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
                        let n = (vertices[tri[1]] - vertices[tri[0]])
                            .cross(&(vertices[tri[2]] - vertices[tri[0]]));
                        if n.norm_squared() < 1e-20 {
                            continue;
                        }
                        faces.push(if n.dot(&outward) >= 0.0 {
                            tri
                        } else {
                            [tri[0], tri[2], tri[1]]
                        });
                    }
                }
            }
        }
    }
    compact(vertices, faces)
}

/// Drops unreferenced vertices and all but the largest component.
fn compact(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let n = vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in &faces {
        for e in 0..3 {
            let a = find(&mut parent, f[e]);
            let b = find(&mut parent, f[(e + 1) % 3]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut size: BTreeMap<usize, usize> = BTreeMap::new();
    for f in &faces {
        *size.entry(find(&mut parent, f[0])).or_default() += 1;
    }
    let keep = size
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&r, _)| r)
        .unwrap_or(0);
    let mut remap = vec![usize::MAX; n];
    let mut out_v = Vec::new();
    let mut out_f = Vec::new();
    for f in faces {
        if find(&mut parent, f[0]) != keep {
            continue;
        }
        let mut g = [0; 3];
        for (slot, &v) in g.iter_mut().zip(&f) {
            if remap[v] == usize::MAX {
                remap[v] = out_v.len();
                out_v.push(vertices[v]);
            }
            *slot = remap[v];
        }
        out_f.push(g);
    }
    (out_v, out_f)
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    segment_distance_vec(p, a, b).norm()
}

/// Builds the asset with polygonization cell size `cell` (meters).
pub fn capsule_person(cell: f64) -> Result<CapsulePerson> {
    let parts = shape();
    let (vertices, faces) = surface_nets(
        |p| field(&parts, p),
        Vector3::new(-0.92, -0.92, -0.24),
        Vector3::new(0.92, 1.04, 0.22),
        cell,
    );
    debug_assert_eq!(connected_components(vertices.len(), &faces), 1);

    let joints: Vec<Joint> = JOINTS
        .iter()
        .map(|j| Joint {
            name: j.name.to_string(),
            parent: (j.parent >= 0).then_some(j.parent as usize),
            offset: j.offset,
            axes: j.axes.to_vec(),
        })
        .collect();
    let limits: Vec<[f64; 2]> = JOINTS.iter().flat_map(|j| j.limits.iter().copied()).collect();
    let joint_index = |name: &str| JOINTS.iter().position(|j| j.name == name).expect("joint");
    let landmarks: Vec<Landmark> = LANDMARKS
        .iter()
        .map(|(name, joint, offset)| Landmark {
            name: name.to_string(),
            joint: joint_index(joint),
            offset: *offset,
        })
        .collect();

    // bone segments: joint to each child, plus the head's own extent
    let mut rest = Vec::<Vector3<f64>>::new();
    for j in &JOINTS {
        let o = Vector3::from(j.offset);
        let p = if j.parent >= 0 { rest[j.parent as usize] + o } else { o };
        rest.push(p);
    }
    let mut segments: Vec<(usize, Vector3<f64>, Vector3<f64>)> = Vec::new();
    for (c, j) in JOINTS.iter().enumerate() {
        if j.parent >= 0 {
            let p = j.parent as usize;
            segments.push((p, rest[p], rest[c]));
        }
    }
    segments.push((HEAD, rest[HEAD], rest[HEAD] + Vector3::new(0.0, -0.21, 0.0)));

    let mut skinning = Vec::with_capacity(vertices.len());
    let mut classes = Vec::with_capacity(vertices.len());
    for v in &vertices {
        let mut per_bone: BTreeMap<usize, f64> = BTreeMap::new();
        for (bone, a, b) in &segments {
            let d = point_segment_distance(v, a, b);
            let e = per_bone.entry(*bone).or_insert(f64::INFINITY);
            *e = e.min(d);
        }
        let mut scored: Vec<(usize, f64)> = per_bone
            .into_iter()
            .map(|(b, d)| (b, (d + 0.01).powi(-6)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(3);
        let total: f64 = scored.iter().map(|s| s.1).sum();
        scored.retain(|s| s.1 / total >= 1e-3);
        let total: f64 = scored.iter().map(|s| s.1).sum();
        let weights: Vec<(usize, f64)> = scored.into_iter().map(|(b, w)| (b, w / total)).collect();
        let dominant = JOINTS[weights[0].0].name;
        classes.push(i64::from(CLOTHING_BONES.contains(&dominant)));
        skinning.push(weights);
    }

    let eval: Vec<String> = EVAL_LANDMARKS.iter().map(|s| s.to_string()).collect();
    let skeleton = Skeleton::new(joints, landmarks, limits, skinning, &eval)?;
    let mesh = TemplateMesh::new(vertices, faces, classes)?;
    let table: RigidityTable = [(0, 1.0), (1, 0.5)].into_iter().collect();
    Ok(CapsulePerson {
        mesh,
        skeleton,
        table,
    })
}
