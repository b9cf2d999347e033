//! Silhouette distance transform: exact Euclidean distance from every pixel
//! to the mask contour, printed as ASCII for a small rendered silhouette.

use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::camproj::{distance_transform, rasterize_mask, Camera, Intrinsics};
use template_fit::graphdeform::{mesh_state, GraphParams};
use template_fit::kinematics::{node_transforms, PoseParams};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let k = Intrinsics { fx: 52.0, fy: 52.0, cx: 24.0, cy: 24.0 };
    let cam = Camera::look_at(Vector3::new(0.0, 0.0, -2.8), Vector3::zeros(), Vector3::y(), k, 48, 48)?;

    let pose = PoseParams::rest(&character.rig.skeleton);
    let transforms = node_transforms(&character, &pose.theta, &pose.alpha)?;
    let mesh = mesh_state(&character, &GraphParams::zeros(character.node_count()), &transforms, &cam, &pose.t)?;
    let mask = rasterize_mask(&cam, &mesh.world, &character.rig.mesh.faces);
    let obs = distance_transform(&mask)?;

    const RAMP: &[u8] = b"0123456789";
    for y in 0..mask.height {
        let row: String = (0..mask.width)
            .map(|x| {
                let d = obs.dt_at(x, y).round() as usize;
                if mask.get(x, y) {
                    RAMP[d.min(9)] as char
                } else if d < 10 {
                    '.'
                } else {
                    ' '
                }
            })
            .collect();
        println!("{row}");
    }
    let max = obs.dt.iter().copied().fold(0.0, f64::max);
    println!("{} foreground pixels, farthest pixel {max:.2} px from the contour", mask.count());
    Ok(())
}
