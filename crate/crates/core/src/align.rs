//! Closed-form global translation from multi-view keypoint rays.
//!
//! For rotated landmarks `Q_m` and rays `(o_c, d_cm, sigma_cm)` the
//! translation minimizing `sum sigma |(Q_m + t - o_c) x d_cm|^2` solves
//! `W t = sum sigma (I - D)(o_c - Q_m)` with `W = sum sigma (I - D)`,
//! `D = d d^T`. `t` is affine in `Q`, so its Jacobian is constant.

use nalgebra::{Matrix3, Vector2, Vector3, Vector4};

use crate::camproj::Camera;
use crate::error::{Error, Result};

/// Rays whose `W` exceeds this condition number are rejected.
pub const MAX_CONDITION: f64 = 1e8;

/// Unit direction of the ray from the camera origin through pixel `p`.
pub fn ray_direction(camera: &Camera, p: &Vector2<f64>) -> Result<Vector3<f64>> {
    let inv = camera.projection.try_inverse().ok_or(Error::SingularCamera)?;
    let x = inv * Vector4::new(p[0], p[1], 1.0, 1.0);
    if x[3].abs() < f64::EPSILON {
        return Err(Error::SingularCamera);
    }
    let d = x.xyz() / x[3] - camera.origin;
    let n = d.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::SingularCamera);
    }
    Ok(d / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub sigma: f64,
}

/// Rays indexed `[camera][landmark]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle {
    pub rays: Vec<Vec<Ray>>,
}

impl RayBundle {
    /// Rays through 2D detections `(pixel, sigma)` per camera and landmark.
    pub fn from_detections(cameras: &[&Camera], detections: &[Vec<(Vector2<f64>, f64)>]) -> Result<Self> {
        let rays = cameras
            .iter()
            .zip(detections)
            .map(|(cam, dets)| {
                dets.iter()
                    .map(|(p, sigma)| {
                        Ok(Ray {
                            origin: cam.origin,
                            direction: ray_direction(cam, p)?,
                            sigma: *sigma,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rays })
    }

    pub fn landmark_count(&self) -> usize {
        self.rays.first().map_or(0, |r| r.len())
    }
}

/// Precomputed affine map `Q -> t`.
#[derive(Debug, Clone)]
pub struct TranslationSolver {
    w_inv: Matrix3<f64>,
    /// `S_m = sum_c sigma (I - D)`.
    per_landmark: Vec<Matrix3<f64>>,
    /// `sum sigma (I - D) o`.
    offset: Vector3<f64>,
}

impl TranslationSolver {
    /// `weighted = false` drops the confidences from `W` and the sum (they
    /// only mask out rays), as in the unweighted normal equations.
    pub fn new(rays: &RayBundle, weighted: bool) -> Result<Self> {
        let m = rays.landmark_count();
        let mut w = Matrix3::zeros();
        let mut per_landmark = vec![Matrix3::zeros(); m];
        let mut offset = Vector3::zeros();
        for cam in &rays.rays {
            if cam.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "rays per camera",
                    expected: m,
                    got: cam.len(),
                });
            }
            for (lm, ray) in cam.iter().enumerate() {
                if ray.sigma <= 0.0 {
                    continue;
                }
                let s = if weighted { ray.sigma } else { 1.0 };
                let p = (Matrix3::identity() - ray.direction * ray.direction.transpose()) * s;
                w += p;
                per_landmark[lm] += p;
                offset += p * ray.origin;
            }
        }
        let eig = w.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::DegenerateRays { condition });
        }
        let w_inv = w.try_inverse().ok_or(Error::DegenerateRays { condition })?;
        Ok(Self {
            w_inv,
            per_landmark,
            offset,
        })
    }

    pub fn solve(&self, rotated: &[Vector3<f64>]) -> Vector3<f64> {
        let mut rhs = self.offset;
        for (s, q) in self.per_landmark.iter().zip(rotated) {
            rhs -= s * q;
        }
        self.w_inv * rhs
    }

    /// `dt/dQ_m` (a 3x3 block per landmark).
    pub fn jacobian(&self, landmark: usize) -> Matrix3<f64> {
        -self.w_inv * self.per_landmark[landmark]
    }

    /// Pulls `dL/dt` back to `dL/dQ_m` for every landmark.
    pub fn vjp(&self, grad_t: &Vector3<f64>) -> Vec<Vector3<f64>> {
        let g = self.w_inv.transpose() * grad_t;
        self.per_landmark.iter().map(|s| -(s.transpose() * g)).collect()
    }
}

/// `t` minimizing [`alignment_residual`] with confidence-weighted rays.
pub fn solve_translation(rotated: &[Vector3<f64>], rays: &RayBundle) -> Result<Vector3<f64>> {
    if rotated.len() != rays.landmark_count() {
        return Err(Error::DimensionMismatch {
            what: "landmarks",
            expected: rays.landmark_count(),
            got: rotated.len(),
        });
    }
    Ok(TranslationSolver::new(rays, true)?.solve(rotated))
}

/// `sum sigma |(Q_m + t - o_c) x d_cm|^2`.
pub fn alignment_residual(rotated: &[Vector3<f64>], t: &Vector3<f64>, rays: &RayBundle) -> f64 {
    let mut total = 0.0;
    for cam in &rays.rays {
        for (q, ray) in rotated.iter().zip(cam) {
            if ray.sigma > 0.0 {
                total += ray.sigma * (q + t - ray.origin).cross(&ray.direction).norm_squared();
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camproj::Intrinsics;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ray(o: [f64; 3], d: [f64; 3]) -> Ray {
        Ray {
            origin: o.into(),
            direction: Vector3::from(d).normalize(),
            sigma: 1.0,
        }
    }

    fn canonical() -> Camera {
        let k = Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
        };
        Camera::new(Matrix3::identity(), Vector3::zeros(), k, 640, 480).unwrap()
    }

    #[test]
    fn optical_axis_and_45_degrees() {
        let cam = canonical();
        let d = ray_direction(&cam, &Vector2::new(320.0, 240.0)).unwrap();
        assert_relative_eq!(d, Vector3::z(), epsilon = 1e-12);
        let d = ray_direction(&cam, &Vector2::new(820.0, 240.0)).unwrap();
        assert_relative_eq!(d, Vector3::new(1.0, 0.0, 1.0).normalize(), epsilon = 1e-12);
    }

    #[test]
    fn ray_reprojects_to_its_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let origin = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0));
            let target = Vector3::new(rng.gen_range(-0.3..0.3), 0.0, rng.gen_range(-0.3..0.3));
            let k = Intrinsics {
                fx: rng.gen_range(300.0..700.0),
                fy: rng.gen_range(300.0..700.0),
                cx: 200.0,
                cy: 210.0,
            };
            let cam = Camera::look_at(origin, target, Vector3::y(), k, 400, 400).unwrap();
            let p = Vector2::new(rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0));
            let d = ray_direction(&cam, &p).unwrap();
            let back = cam.project(&(cam.origin + d * rng.gen_range(0.5..10.0))).unwrap();
            assert!((back - p).norm() < 1e-6);
        }
    }

    #[test]
    fn two_ray_intersection() {
        let rays = RayBundle {
            rays: vec![vec![ray([0.0; 3], [0.0, 0.0, 1.0])], vec![ray([5.0, 0.0, 5.0], [-1.0, 0.0, 0.0])]],
        };
        let t = solve_translation(&[Vector3::zeros()], &rays).unwrap();
        assert!((t - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-9);
        assert!(alignment_residual(&[Vector3::zeros()], &t, &rays) < 1e-18);
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let rays = RayBundle {
            rays: vec![
                vec![ray([0.0; 3], [0.0, 0.0, 1.0]), ray([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])],
                vec![ray([0.0, 1.0, 0.0], [0.0, 0.0, 1.0]), ray([2.0, 1.0, 0.0], [0.0, 0.0, 1.0])],
            ],
        };
        let err = solve_translation(&[Vector3::zeros(), Vector3::x()], &rays).unwrap_err();
        assert!(matches!(err, Error::DegenerateRays { .. }));
    }

    #[test]
    fn point_line_distance() {
        let rays = RayBundle {
            rays: vec![vec![ray([0.0; 3], [0.0, 0.0, 1.0])]],
        };
        let r = alignment_residual(&[Vector3::new(0.3, 0.4, 7.0)], &Vector3::zeros(), &rays);
        assert_relative_eq!(r, 0.25, epsilon = 1e-12);
    }

    fn random_instance(rng: &mut ChaCha8Rng, cams: usize, lms: usize) -> (Vec<Vector3<f64>>, RayBundle) {
        let q: Vec<Vector3<f64>> = (0..lms)
            .map(|_| Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.8..0.8), rng.gen_range(-0.3..0.3)))
            .collect();
        let rays = (0..cams)
            .map(|_| {
                let o = Vector3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-1.0..1.0), rng.gen_range(-4.0..4.0));
                (0..lms)
                    .map(|_| Ray {
                        origin: o,
                        direction: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                            .normalize(),
                        sigma: if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.4..1.0) },
                    })
                    .collect()
            })
            .collect();
        (q, RayBundle { rays })
    }

    #[test]
    fn zero_gradient_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (q, rays) = random_instance(&mut rng, 4, 6);
        let t = solve_translation(&q, &rays).unwrap();
        let mut grad = Vector3::zeros();
        for cam in &rays.rays {
            for (qm, r) in q.iter().zip(cam) {
                let p = Matrix3::identity() - r.direction * r.direction.transpose();
                grad += p * (qm + t - r.origin) * (2.0 * r.sigma);
            }
        }
        assert!(grad.norm() < 1e-8);
    }

    #[test]
    fn affine_in_landmarks() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (q1, rays) = random_instance(&mut rng, 3, 5);
        let (q2, _) = random_instance(&mut rng, 3, 5);
        let (a, b) = (0.3, 0.7);
        let mix: Vec<_> = q1.iter().zip(&q2).map(|(x, y)| x * a + y * b).collect();
        let lhs = solve_translation(&mix, &rays).unwrap();
        let rhs = solve_translation(&q1, &rays).unwrap() * a + solve_translation(&q2, &rays).unwrap() * b;
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (q, rays) = random_instance(&mut rng, 3, 4);
        let solver = TranslationSolver::new(&rays, true).unwrap();
        let h = 1e-6;
        for m in 0..q.len() {
            let jac = solver.jacobian(m);
            for k in 0..3 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[m][k] += h;
                qm[m][k] -= h;
                let fd = (solver.solve(&qp) - solver.solve(&qm)) / (2.0 * h);
                let col = jac.column(k).into_owned();
                assert!((fd - col).norm() <= 1e-6 * col.norm().max(1.0));
            }
        }
        let g = Vector3::new(0.2, -1.0, 0.5);
        let back = solver.vjp(&g);
        for m in 0..q.len() {
            assert_relative_eq!(back[m], solver.jacobian(m).transpose() * g, epsilon = 1e-12);
        }
    }

    #[test]
    fn unweighted_variant_ignores_confidence_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (q, mut rays) = random_instance(&mut rng, 3, 4);
        for cam in &mut rays.rays {
            for r in cam {
                r.sigma = if r.sigma > 0.0 { 1.0 } else { 0.0 };
            }
        }
        let a = TranslationSolver::new(&rays, false).unwrap().solve(&q);
        let b = TranslationSolver::new(&rays, true).unwrap().solve(&q);
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }
}
