//! Exact Euclidean distance to the silhouette contour.

use nalgebra::Vector2;

use super::raster::Mask;
use crate::error::{Error, Result};

/// A silhouette with its contour distance transform.
#[derive(Debug, Clone)]
pub struct SilhouetteObservation {
    pub mask: Mask,
    /// Distance (px) from each pixel center to the nearest contour pixel.
    pub dt: Vec<f64>,
    /// Central-difference gradient of `dt`, index-clamped at the border.
    pub grad: Vec<Vector2<f64>>,
}

/// Bilinear cell a sample was taken from; frozen during one gradient
/// evaluation so the sampled field is a single smooth polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub x0: usize,
    pub y0: usize,
}

/// Foreground pixels with at least one in-image background 4-neighbor.
pub fn contour(mask: &Mask) -> Vec<bool> {
    let (w, h) = (mask.width, mask.height);
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let bg = (x > 0 && !mask.get(x - 1, y))
                || (x + 1 < w && !mask.get(x + 1, y))
                || (y > 0 && !mask.get(x, y - 1))
                || (y + 1 < h && !mask.get(x, y + 1));
            out[y * w + x] = bg;
        }
    }
    out
}

/// Squared Euclidean distance transform of a binary seed image, using the
/// two-pass separable algorithm of Meijster et al. with integer arithmetic.
pub fn squared_edt(seeds: &[bool], width: usize, height: usize) -> Vec<i64> {
    let inf = (width + height) as i64 + 1;
    let mut g = vec![0i64; width * height];
    for x in 0..width {
        g[x] = if seeds[x] { 0 } else { inf };
        for y in 1..height {
            let i = y * width + x;
            g[i] = if seeds[i] { 0 } else { (g[i - width] + 1).min(inf) };
        }
        for y in (0..height.saturating_sub(1)).rev() {
            let i = y * width + x;
            if g[i + width] < g[i] {
                g[i] = g[i + width] + 1;
            }
        }
    }
    let mut out = vec![0i64; width * height];
    let mut s = vec![0usize; width];
    let mut t = vec![0i64; width];
    for y in 0..height {
        let row = &g[y * width..(y + 1) * width];
        let f = |x: usize, i: usize| {
            let d = x as i64 - i as i64;
            d * d + row[i] * row[i]
        };
        let sep = |i: usize, u: usize| {
            let (i, u) = (i as i64, u as i64);
            (u * u - i * i + row[u as usize] * row[u as usize] - row[i as usize] * row[i as usize])
                .div_euclid(2 * (u - i))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..width {
            while q >= 0 && f(t[q as usize] as usize, s[q as usize]) > f(t[q as usize] as usize, u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let w = 1 + sep(s[q as usize], u);
                if w < width as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = w;
                }
            }
        }
        for u in (0..width).rev() {
            out[y * width + u] = f(u, s[q as usize]);
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    out
}

/// Distance-to-contour image of `mask` and its gradient.
pub fn distance_transform(mask: &Mask) -> Result<SilhouetteObservation> {
    let seeds = contour(mask);
    if !seeds.iter().any(|&s| s) {
        return Err(Error::EmptyContour);
    }
    let (w, h) = (mask.width, mask.height);
    let dt: Vec<f64> = squared_edt(&seeds, w, h)
        .into_iter()
        .map(|d| (d as f64).sqrt())
        .collect();
    let grad = central_gradient(&dt, w, h);
    Ok(SilhouetteObservation {
        mask: mask.clone(),
        dt,
        grad,
    })
}

pub(crate) fn central_gradient(dt: &[f64], w: usize, h: usize) -> Vec<Vector2<f64>> {
    let mut grad = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            grad.push(Vector2::new(
                (dt[y * w + xr] - dt[y * w + xl]) * 0.5,
                (dt[yd * w + x] - dt[yu * w + x]) * 0.5,
            ));
        }
    }
    grad
}

impl SilhouetteObservation {
    /// Rebuilds the observation from a stored distance image.
    pub fn from_parts(mask: Mask, dt: Vec<f64>) -> Result<Self> {
        if dt.len() != mask.width * mask.height {
            return Err(Error::DimensionMismatch {
                what: "distance image",
                expected: mask.width * mask.height,
                got: dt.len(),
            });
        }
        let grad = central_gradient(&dt, mask.width, mask.height);
        Ok(Self { mask, dt, grad })
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn dt_at(&self, x: usize, y: usize) -> f64 {
        self.dt[y * self.mask.width + x]
    }

    /// Bilinear cell containing continuous pixel position `p` (pixel
    /// centers at half-integers), clamped to the image.
    pub fn cell(&self, p: &Vector2<f64>) -> Cell {
        let clamp = |v: f64, n: usize| {
            let hi = n.saturating_sub(2) as f64;
            (v - 0.5).floor().clamp(0.0, hi) as usize
        };
        Cell {
            x0: clamp(p[0], self.width()),
            y0: clamp(p[1], self.height()),
        }
    }

    /// Value and gradient of the bilinear interpolant of `dt` over `cell`,
    /// extended linearly outside it.
    pub fn sample_in_cell(&self, cell: Cell, p: &Vector2<f64>) -> (f64, Vector2<f64>) {
        let w = self.width();
        let x1 = (cell.x0 + 1).min(w - 1);
        let y1 = (cell.y0 + 1).min(self.height() - 1);
        let d00 = self.dt[cell.y0 * w + cell.x0];
        let d10 = self.dt[cell.y0 * w + x1];
        let d01 = self.dt[y1 * w + cell.x0];
        let d11 = self.dt[y1 * w + x1];
        let tx = p[0] - 0.5 - cell.x0 as f64;
        let ty = p[1] - 0.5 - cell.y0 as f64;
        let top = d00 + (d10 - d00) * tx;
        let bottom = d01 + (d11 - d01) * tx;
        let value = top + (bottom - top) * ty;
        let dx = (d10 - d00) * (1.0 - ty) + (d11 - d01) * ty;
        let dy = bottom - top;
        (value, Vector2::new(dx, dy))
    }

    pub fn sample(&self, p: &Vector2<f64>) -> f64 {
        self.sample_in_cell(self.cell(p), p).0
    }

    /// Bilinearly sampled direction pointing away from the silhouette
    /// interior: the `dt` gradient outside the mask, its negation inside.
    pub fn outward_direction(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let cell = self.cell(p);
        let w = self.width();
        let tx = (p[0] - 0.5 - cell.x0 as f64).clamp(0.0, 1.0);
        let ty = (p[1] - 0.5 - cell.y0 as f64).clamp(0.0, 1.0);
        let mut acc = Vector2::zeros();
        for (dx, dy, wgt) in [
            (0, 0, (1.0 - tx) * (1.0 - ty)),
            (1, 0, tx * (1.0 - ty)),
            (0, 1, (1.0 - tx) * ty),
            (1, 1, tx * ty),
        ] {
            let x = (cell.x0 + dx).min(w - 1);
            let y = (cell.y0 + dy).min(self.height() - 1);
            let sign = if self.mask.get(x, y) { -1.0 } else { 1.0 };
            acc += self.grad[y * w + x] * (sign * wgt);
        }
        acc
    }
}
