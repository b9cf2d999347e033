use nalgebra::{Matrix2x3, Matrix3, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the image plane count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Calibrated pinhole camera. Camera axes are x right, y down, z forward;
/// pixel `(x, y)` covers `[x, x+1) x [y, y+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-to-image matrix `E`: `E [X;1] = (z u, z v, z, 1)` with `z` the
    /// camera depth.
    pub projection: Matrix4<f64>,
    /// World-to-camera rotation `R`.
    pub rotation: Matrix3<f64>,
    /// Camera center `o` in world coordinates.
    pub origin: Vector3<f64>,
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        origin: Vector3<f64>,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(Error::InvalidConfig("focal lengths must be positive".into()));
        }
        Ok(Self {
            projection: projection_matrix(&rotation, &origin, &intrinsics),
            rotation,
            origin,
            intrinsics,
            width,
            height,
        })
    }

    /// Camera at `origin` looking at `target`, with `down` giving the image
    /// y direction (approximately).
    pub fn look_at(
        origin: Vector3<f64>,
        target: Vector3<f64>,
        down: Vector3<f64>,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - origin).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::new(rotation, origin, intrinsics, width, height)
    }

    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (x - self.origin)
    }

    pub fn depth(&self, x: &Vector3<f64>) -> f64 {
        self.rotation.row(2).transpose().dot(&(x - self.origin))
    }

    /// Pixel coordinates and depth without the behind-camera check.
    pub fn project_with_depth(&self, x: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let c = self.to_camera(x);
        let k = &self.intrinsics;
        (
            Vector2::new(k.fx * c[0] / c[2] + k.cx, k.fy * c[1] / c[2] + k.cy),
            c[2],
        )
    }

    pub fn project(&self, x: &Vector3<f64>) -> Result<Vector2<f64>> {
        let (p, depth) = self.project_with_depth(x);
        if depth <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth });
        }
        Ok(p)
    }

    /// `d pixel / d X` (world coordinates).
    pub fn projection_jacobian(&self, x: &Vector3<f64>) -> Matrix2x3<f64> {
        let c = self.to_camera(x);
        let k = &self.intrinsics;
        let iz = 1.0 / c[2];
        let j = Matrix2x3::new(
            k.fx * iz,
            0.0,
            -k.fx * c[0] * iz * iz,
            0.0,
            k.fy * iz,
            -k.fy * c[1] * iz * iz,
        );
        j * self.rotation
    }

    /// Projection through the 4x4 matrix alone.
    pub fn project_homogeneous(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let y = self.projection * Vector4::new(x[0], x[1], x[2], 1.0);
        Vector2::new(y[0] / y[2], y[1] / y[2])
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] < self.width as f64 && p[1] < self.height as f64
    }
}

pub fn projection_matrix(
    rotation: &Matrix3<f64>,
    origin: &Vector3<f64>,
    intrinsics: &Intrinsics,
) -> Matrix4<f64> {
    let kr = intrinsics.matrix() * rotation;
    let kt = -(kr * origin);
    let mut e = Matrix4::identity();
    e.fixed_view_mut::<3, 3>(0, 0).copy_from(&kr);
    e.fixed_view_mut::<3, 1>(0, 3).copy_from(&kt);
    e
}

/// Serialized camera record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    #[serde(rename = "E")]
    pub projection: [[f64; 4]; 4],
    #[serde(rename = "R")]
    pub rotation: [[f64; 3]; 3],
    #[serde(rename = "o")]
    pub origin: [f64; 3],
    pub intrinsics: Intrinsics,
    pub resolution: [usize; 2],
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        Self {
            projection: std::array::from_fn(|r| std::array::from_fn(|k| c.projection[(r, k)])),
            rotation: std::array::from_fn(|r| std::array::from_fn(|k| c.rotation[(r, k)])),
            origin: [c.origin[0], c.origin[1], c.origin[2]],
            intrinsics: c.intrinsics,
            resolution: [c.width, c.height],
        }
    }
}

impl TryFrom<CameraRecord> for Camera {
    type Error = Error;

    /// Rebuilds the camera and checks that `E` agrees with `R`, `o` and
    /// the intrinsics.
    fn try_from(r: CameraRecord) -> Result<Self> {
        let rotation = Matrix3::from_fn(|i, k| r.rotation[i][k]);
        let origin = Vector3::from(r.origin);
        let cam = Camera::new(rotation, origin, r.intrinsics, r.resolution[0], r.resolution[1])?;
        let stored = Matrix4::from_fn(|i, k| r.projection[i][k]);
        let scale = stored.abs().max().max(1.0);
        if (stored - cam.projection).abs().max() > 1e-9 * scale {
            return Err(Error::malformed(
                "camera",
                "projection matrix E is inconsistent with R, o and intrinsics",
            ));
        }
        Ok(Camera {
            projection: stored,
            ..cam
        })
    }
}

pub fn cameras_to_json(cameras: &[Camera]) -> String {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    serde_json::to_string_pretty(&records).expect("cameras serialize")
}

pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>> {
    let records: Vec<CameraRecord> =
        serde_json::from_str(text).map_err(|e| Error::malformed("cameras file", e.to_string()))?;
    records.into_iter().map(Camera::try_from).collect()
}
