//! Recovers a scripted 5 cm bump of one graph node from silhouettes.
//! Compares the pose-only mesh with the deformed one, in IoU and in how far
//! the bumped node ends up from where the data put it.
//!
//! cargo run --release --example deformation_recovery -- [NODE] [W_ARAP]

use nalgebra::Vector3;
use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::fitter::{fit_frame, FitConfig};
use template_fit::metrics::iou_family;
use template_fit::synthgen::{synthesize, DeformSignal, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let node: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(13);
    let w_arap: Option<f64> = args.next().map(|s| s.parse()).transpose()?;

    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let bump = Vector3::new(0.0, 0.05, 0.0);
    let data = synthesize(
        &character,
        &SynthConfig {
            frames: 1,
            deformations: vec![DeformSignal {
                nodes: vec![node],
                angles: [0.0; 3],
                translation: bump.into(),
                frequency: 0.0,
                phase: 0.0,
            }],
            ..SynthConfig::default()
        },
    )?;
    let mut config = FitConfig::default();
    if let Some(w) = w_arap {
        config.weights.w_arap = w;
    }
    let gt = &data.gt[0];
    let init = Some((&gt.pose, &gt.graph));
    let faces = &character.rig.mesh.faces;
    let score = |mesh: &Vec<Vector3<f64>>| iou_family(std::slice::from_ref(mesh), faces, &data.masks(), &data.cameras, 0);

    let pose_only = fit_frame(
        &character,
        &data.cameras,
        &data.frames[0],
        &FitConfig {
            pose_only: true,
            ..config.clone()
        },
        0,
        init,
    )?;
    let full = fit_frame(&character, &data.cameras, &data.frames[0], &config, 0, Some((&pose_only.pose, &pose_only.graph)))?;

    let before = score(&pose_only.mesh.world)?;
    let after = score(&full.mesh.world)?;
    println!("node {node} at {:?}, bump {:?} m", character.graph.nodes[node].as_slice(), bump.as_slice());
    println!("AMVIoU pose-only {:.4} -> deformed {:.4} ({:+.2} points)", before.amviou, after.amviou, 100.0 * (after.amviou - before.amviou));
    let t = full.graph.translations[node];
    println!("recovered node translation {:.4?} ({:.1} of {:.1} cm along the bump)", t.as_slice(), 100.0 * t.dot(&bump.normalize()), 100.0 * bump.norm());
    Ok(())
}
