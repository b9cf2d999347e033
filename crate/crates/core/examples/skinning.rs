//! Poses the shipped character with dual-quaternion skinning of the graph
//! nodes and writes rest and posed meshes as OBJ.
//!
//! cargo run --example skinning -- [OUT_DIR]

use std::path::PathBuf;

use nalgebra::Vector3;
use template_fit::assets::{shipped_rig_dir, write_obj, Character};
use template_fit::graphdeform::{deform, pose};
use template_fit::graphdeform::GraphParams;
use template_fit::kinematics::node_transforms;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("template-fit-skinning"));
    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let skeleton = &character.rig.skeleton;

    // raise both arms and bend a knee, within the limits
    let mut theta = vec![0.0; skeleton.dof_count()];
    for (j, joint) in skeleton.joints.iter().enumerate() {
        let start = skeleton.dof_start(j);
        let set = |theta: &mut Vec<f64>, k: usize, v: f64| {
            if k < joint.axes.len() {
                let [lo, hi] = skeleton.limits[start + k];
                theta[start + k] = v.clamp(lo, hi);
            }
        };
        match joint.name.as_str() {
            "l_shoulder" => set(&mut theta, joint.axes.len() - 1, -1.0),
            "r_shoulder" => set(&mut theta, joint.axes.len() - 1, 1.0),
            "l_knee" => set(&mut theta, 0, 1.2),
            _ => {}
        }
    }
    let alpha = Vector3::new(0.0, 0.6, 0.0);
    let transforms = node_transforms(&character, &theta, &alpha)?;
    let rest = deform(&character, &GraphParams::zeros(character.node_count()))?;
    let posed = pose(&character, &rest, &transforms);

    let faces = &character.rig.mesh.faces;
    write_obj(&out.join("rest.obj"), &rest, faces)?;
    write_obj(&out.join("posed.obj"), &posed, faces)?;
    let worst = transforms
        .transforms
        .iter()
        .map(|t| (t.rotation.transpose() * t.rotation - nalgebra::Matrix3::identity()).norm())
        .fold(0.0, f64::max);
    println!("wrote {} and {}", out.join("rest.obj").display(), out.join("posed.obj").display());
    println!("{} node transforms, max |R^T R - I| = {worst:.1e}", transforms.transforms.len());
    Ok(())
}
