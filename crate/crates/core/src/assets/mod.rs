//! The trackable character: template mesh, skeleton with skinning,
//! rigidity weights and the embedded deformation graph.

mod capsule;
mod graph;
mod mesh;
mod skeleton;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use capsule::{capsule_person, CapsulePerson};
pub use graph::{build_graph, geodesic_from, DeformGraph, GraphSettings};
pub use mesh::{
    connected_components, obj_string, parse_rigidity_classes, read_obj, vertex_normals,
    write_obj, TemplateMesh,
};
pub use skeleton::{Joint, Landmark, Skeleton};

/// Material class label to rigidity weight `s_i`.
pub type RigidityTable = BTreeMap<i64, f64>;

#[derive(Debug, Clone)]
pub struct CharacterRig {
    pub mesh: TemplateMesh,
    pub skeleton: Skeleton,
    /// Per-vertex rigidity weights `s_i`.
    pub rigidity: Vec<f64>,
}

impl CharacterRig {
    pub fn new(mesh: TemplateMesh, skeleton: Skeleton, table: &RigidityTable) -> Result<Self> {
        if skeleton.skinning.len() != mesh.vertex_count() {
            return Err(Error::DimensionMismatch {
                what: "per-vertex skinning",
                expected: mesh.vertex_count(),
                got: skeleton.skinning.len(),
            });
        }
        let rigidity = mesh
            .rigidity_class
            .iter()
            .map(|c| table.get(c).copied().ok_or(Error::MissingRigidityClass(*c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mesh,
            skeleton,
            rigidity,
        })
    }
}

/// Loads an OBJ mesh, its rigidity sidecar and a skeleton file.
pub fn load_character(
    mesh_file: &Path,
    rigidity_file: &Path,
    skeleton_file: &Path,
    table: &RigidityTable,
) -> Result<CharacterRig> {
    let (vertices, faces) = read_obj(mesh_file)?;
    let classes_text =
        std::fs::read_to_string(rigidity_file).map_err(|e| Error::io(rigidity_file, e))?;
    let classes = parse_rigidity_classes(&classes_text)?;
    let mesh = TemplateMesh::new(vertices, faces, classes)?;
    let skeleton = Skeleton::load(skeleton_file)?;
    CharacterRig::new(mesh, skeleton, table)
}

/// Contents of `rig.json` in a rig directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigManifest {
    pub rigidity_weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub graph: GraphSettings,
}

impl RigManifest {
    pub fn table(&self) -> Result<RigidityTable> {
        self.rigidity_weights
            .iter()
            .map(|(k, &v)| {
                k.parse::<i64>()
                    .map(|k| (k, v))
                    .map_err(|_| Error::malformed("rig.json", format!("class label '{k}'")))
            })
            .collect()
    }
}

/// A rig together with its deformation graph.
#[derive(Debug, Clone)]
pub struct Character {
    pub rig: CharacterRig,
    pub graph: DeformGraph,
}

pub const MESH_FILE: &str = "mesh.obj";
pub const RIGIDITY_FILE: &str = "rigidity.txt";
pub const SKELETON_FILE: &str = "skeleton.json";
pub const MANIFEST_FILE: &str = "rig.json";

impl Character {
    pub fn new(rig: CharacterRig, settings: GraphSettings) -> Result<Self> {
        let graph = build_graph(&rig, settings)?;
        Ok(Self { rig, graph })
    }

    /// Loads a rig directory (`mesh.obj`, `rigidity.txt`, `skeleton.json`,
    /// `rig.json`) and builds its graph. `nodes` overrides the node count
    /// stored in the manifest.
    pub fn load_dir(dir: &Path, nodes: Option<usize>) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: RigManifest = serde_json::from_str(&text)
            .map_err(|e| Error::malformed("rig.json", e.to_string()))?;
        let rig = load_character(
            &dir.join(MESH_FILE),
            &dir.join(RIGIDITY_FILE),
            &dir.join(SKELETON_FILE),
            &manifest.table()?,
        )?;
        let mut settings = manifest.graph;
        if let Some(k) = nodes {
            settings.nodes = k;
        }
        Self::new(rig, settings)
    }

    pub fn vertex_count(&self) -> usize {
        self.rig.mesh.vertex_count()
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }
}

/// Path of the capsule-person rig shipped with the crate.
pub fn shipped_rig_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/capsule_person")
}
