//! Places a posed skeleton in the world from 2D detections alone: the
//! translation that best aligns camera rays with the landmarks has a
//! closed form.

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use template_fit::align::{alignment_residual, solve_translation, RayBundle};
use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::kinematics::forward_landmarks;
use template_fit::synthgen::{synthesize, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let data = synthesize(&character, &SynthConfig { frames: 1, ..SynthConfig::default() })?;
    let gt = &data.gt[0].pose;
    let input = &data.cameras[0];

    // landmarks relative to the root, rotated into world axes
    let local = forward_landmarks(&character.rig.skeleton, &gt.theta, &gt.alpha)?;
    let rotated: Vec<Vector3<f64>> = local.positions.iter().map(|p| input.rotation.transpose() * p).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 2.0)?;
    for (label, sigma_px) in [("exact detections", 0.0), ("2 px noise", 1.0)] {
        for views in [2, 3, 7] {
            let cams: Vec<_> = data.cameras.iter().take(views).collect();
            let detections: Vec<Vec<(Vector2<f64>, f64)>> = cams
                .iter()
                .map(|cam| {
                    rotated
                        .iter()
                        .map(|q| {
                            let p = cam.project(&(q + gt.t)).expect("subject in front of camera");
                            let jitter = Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)) * sigma_px;
                            (p + jitter, 1.0)
                        })
                        .collect()
                })
                .collect();
            let rays = RayBundle::from_detections(&cams, &detections)?;
            let t = solve_translation(&rotated, &rays)?;
            println!(
                "{label:<17} {views} views: |t - t_gt| = {:.3e} m, residual {:.3e}",
                (t - gt.t).norm(),
                alignment_residual(&rotated, &t, &rays)
            );
        }
    }
    Ok(())
}
