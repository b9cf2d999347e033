//! Fits pose and surface deformation to a synthetic sequence held in
//! memory and scores the result.
//!
//! cargo run --release --example fit_sequence -- [FRAMES] [DEFORM_ITERATIONS]

use std::time::Instant;

use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::fitter::{fit_sequence, FitConfig};
use template_fit::metrics::{iou_family, pose_scores, JointSequence};
use template_fit::synthgen::{synthesize, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let deform_iterations: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);

    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let data = synthesize(
        &character,
        &SynthConfig {
            frames,
            keypoint_noise: 1.0,
            ..SynthConfig::default()
        },
    )?;
    let config = FitConfig {
        deform_iterations,
        ..FitConfig::default()
    };

    let start = Instant::now();
    let result = fit_sequence(&character, &data.dataset(), &config)?;
    println!("fitted {frames} frames in {:.1?} ({} failed)", start.elapsed(), result.failures());

    let input = &data.cameras[config.input_camera];
    let pred = JointSequence::new(result.joints(&character.rig.skeleton, input)?, data.eval_parents());
    let pose = pose_scores(&pred, &data.gt_joints())?;
    let iou = iou_family(
        &result.world_meshes(),
        &character.rig.mesh.faces,
        &data.masks(),
        &data.cameras,
        config.input_camera,
    )?;
    println!("GLE {:.1} mm  3DPCK {:.1}%  AUC {:.1}  MPJPE-PA {:.2} mm", pose.gle_mm, pose.pck3d, pose.auc, pose.mpjpe_pa_mm);
    println!("AMVIoU {:.4}  RVIoU {:.4}  SVIoU {:.4}", iou.amviou, iou.rviou, iou.sviou);
    for f in &result.frames {
        let last = f.deform_trace.last().map_or(f64::NAN, |t| t.total);
        println!("  frame {}: pose loss {:.3e}, deform loss {:.3e}", f.frame, f.pose_trace.last().map_or(f64::NAN, |t| t.total), last);
    }
    Ok(())
}
