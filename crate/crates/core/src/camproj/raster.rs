//! Z-buffered triangle scan conversion, sampled at pixel centers.

use nalgebra::{Vector2, Vector3};

use super::camera::{Camera, MIN_DEPTH};

/// Binary image, row-major, `true` for foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Nearest depth per pixel; `f64::INFINITY` where nothing was drawn.
#[derive(Debug, Clone)]
pub struct DepthBuffer {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            pixels: self.depth.iter().map(|d| d.is_finite()).collect(),
        }
    }
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Owner of samples lying exactly on an edge; opposite edge directions get
/// opposite answers, so a shared edge is drawn once.
fn owns_edge(d: &Vector2<f64>) -> bool {
    d[1] > 0.0 || (d[1] == 0.0 && d[0] < 0.0)
}

/// Rasterizes all triangles (both facings). Triangles with a vertex at or
/// behind the image plane are skipped.
pub fn rasterize_depth(camera: &Camera, vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> DepthBuffer {
    let (w, h) = (camera.width, camera.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let projected: Vec<(Vector2<f64>, f64)> =
        vertices.iter().map(|v| camera.project_with_depth(v)).collect();
    for f in faces {
        let (a, za) = projected[f[0]];
        let (mut b, mut zb) = projected[f[1]];
        let (mut c, mut zc) = projected[f[2]];
        if za <= MIN_DEPTH || zb <= MIN_DEPTH || zc <= MIN_DEPTH {
            continue;
        }
        let mut area = cross(&(b - a), &(c - a));
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut b, &mut c);
            std::mem::swap(&mut zb, &mut zc);
            area = -area;
        }
        let min_x = (a[0].min(b[0]).min(c[0]) - 0.5).ceil().max(0.0);
        let max_x = (a[0].max(b[0]).max(c[0]) - 0.5).floor().min(w as f64 - 1.0);
        let min_y = (a[1].min(b[1]).min(c[1]) - 0.5).ceil().max(0.0);
        let max_y = (a[1].max(b[1]).max(c[1]) - 0.5).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let edges = [(b, c), (c, a), (a, b)];
        let own = edges.map(|(p, q)| owns_edge(&(q - p)));
        let inv = [1.0 / za, 1.0 / zb, 1.0 / zc];
        for y in min_y as usize..=max_y as usize {
            for x in min_x as usize..=max_x as usize {
                let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut bary = [0.0; 3];
                let mut inside = true;
                for (e, (s, t)) in edges.iter().enumerate() {
                    let v = cross(&(t - s), &(p - s));
                    if v < 0.0 || (v == 0.0 && !own[e]) {
                        inside = false;
                        break;
                    }
                    bary[e] = v / area;
                }
                if !inside {
                    continue;
                }
                let z = 1.0 / (bary[0] * inv[0] + bary[1] * inv[1] + bary[2] * inv[2]);
                let slot = &mut depth[y * w + x];
                if z < *slot {
                    *slot = z;
                }
            }
        }
    }
    DepthBuffer {
        width: w,
        height: h,
        depth,
    }
}

/// Binary silhouette of a mesh seen from `camera`.
pub fn rasterize_mask(camera: &Camera, vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Mask {
    rasterize_depth(camera, vertices, faces).mask()
}
