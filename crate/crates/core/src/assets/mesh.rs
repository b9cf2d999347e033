use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Rest-pose template surface.
#[derive(Debug, Clone)]
pub struct TemplateMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub normals: Vec<Vector3<f64>>,
    pub rigidity_class: Vec<i64>,
}

impl TemplateMesh {
    /// Validates face indices and edge connectivity and derives normals.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        rigidity_class: Vec<i64>,
    ) -> Result<Self> {
        let n = vertices.len();
        if rigidity_class.len() != n {
            return Err(Error::DimensionMismatch {
                what: "rigidity classes",
                expected: n,
                got: rigidity_class.len(),
            });
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::malformed(
                    "mesh",
                    format!("face {fi} references a vertex out of range"),
                ));
            }
        }
        let components = connected_components(n, &faces);
        if components != 1 {
            return Err(Error::DisconnectedMesh { components });
        }
        let normals = vertex_normals(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            normals,
            rigidity_class,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        unique_edges(&self.faces)
    }

    /// Per-vertex neighbor lists with Euclidean edge lengths.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            let len = (self.vertices[a] - self.vertices[b]).norm();
            adj[a].push((b, len));
            adj[b].push((a, len));
        }
        adj
    }
}

pub(crate) fn unique_edges(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            set.insert((a.min(b), a.max(b)));
        }
    }
    set.into_iter().collect()
}

/// Number of edge-connected components; vertices in no face count as
/// their own component.
pub fn connected_components(n: usize, faces: &[[usize; 3]]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in faces {
        for k in 0..3 {
            let a = find(&mut parent, f[k]);
            let b = find(&mut parent, f[(k + 1) % 3]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Area-weighted unit vertex normals.
pub fn vertex_normals(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for f in faces {
        let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
        for &i in f {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 1e-300 {
                n / len
            } else {
                Vector3::z()
            }
        })
        .collect()
}

/// Reads the vertices and triangles of an OBJ file, keeping the file's
/// vertex order (per-vertex sidecars index into it). Polygons are
/// fan-triangulated; texture and normal indices are ignored.
pub fn read_obj(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<[usize; 3]>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text).map_err(|detail| Error::malformed(format!("OBJ {}", path.display()), detail))
}

fn parse_obj(text: &str) -> std::result::Result<(Vec<Vector3<f64>>, Vec<[usize; 3]>), String> {
    let mut vertices = Vec::new();
    let mut polygons = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let xyz: Vec<f64> = tokens
                    .take(3)
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", n + 1))?;
                if xyz.len() != 3 {
                    return Err(format!("line {}: vertex needs 3 coordinates", n + 1));
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let corners: Vec<i64> = tokens
                    .map(|t| t.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", n + 1))?;
                if corners.len() < 3 {
                    return Err(format!("line {}: face needs 3 corners", n + 1));
                }
                polygons.push((n + 1, vertices.len(), corners));
            }
            _ => {}
        }
    }
    let mut faces = Vec::new();
    for (line, seen, corners) in polygons {
        // negative indices count back from the vertices defined so far
        let index = |i: i64| -> std::result::Result<usize, String> {
            let r = if i > 0 { i - 1 } else { seen as i64 + i };
            if r < 0 || r as usize >= vertices.len() {
                return Err(format!("line {line}: vertex index {i} out of range"));
            }
            Ok(r as usize)
        };
        let first = index(corners[0])?;
        for w in corners[1..].windows(2) {
            faces.push([first, index(w[0])?, index(w[1])?]);
        }
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err("no geometry".into());
    }
    Ok((vertices, faces))
}

/// Serializes a triangle mesh as OBJ text. Coordinates are printed with
/// shortest round-trip formatting so files are byte-stable.
pub fn obj_string(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> String {
    let mut s = String::with_capacity(vertices.len() * 40 + faces.len() * 20);
    for v in vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

/// Writes an OBJ file, creating missing parent directories.
pub fn write_obj(path: &Path, vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, obj_string(vertices, faces)).map_err(|e| Error::io(path, e))
}

/// Parses the rigidity sidecar: one integer class label per line.
pub fn parse_rigidity_classes(text: &str) -> Result<Vec<i64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<i64>().map_err(|e| {
                Error::malformed("rigidity sidecar", format!("line {}: {e}", i + 1))
            })
        })
        .collect()
}
