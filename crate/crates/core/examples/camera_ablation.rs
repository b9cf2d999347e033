//! Pose-only fits of the same sequence supervised by 1, 2, 4 and 7 cameras.
//! Going from one to two views removes the depth ambiguity; more views
//! mostly average out keypoint noise.
//!
//! cargo run --release --example camera_ablation -- [FRAMES] [NOISE_PX]

use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::fitter::{fit_sequence, FitConfig};
use template_fit::metrics::{pose_scores, JointSequence};
use template_fit::synthgen::{synthesize, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let noise: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1.0);

    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let data = synthesize(
        &character,
        &SynthConfig {
            frames,
            keypoint_noise: noise,
            ..SynthConfig::default()
        },
    )?;
    let dataset = data.dataset();
    let gt = data.gt_joints();

    println!("{:>8} {:>8} {:>8} {:>12}", "cameras", "3DPCK", "AUC", "MPJPE-PA mm");
    for cams in [vec![0], vec![0, 1], vec![0, 2, 4, 6], (0..7).collect()] {
        let config = FitConfig {
            pose_only: true,
            cameras: Some(cams.clone()),
            ..FitConfig::default()
        };
        let result = fit_sequence(&character, &dataset, &config)?;
        let pred = JointSequence::new(result.joints(&character.rig.skeleton, &data.cameras[0])?, data.eval_parents());
        let s = pose_scores(&pred, &gt)?;
        println!("{:>8} {:>8.1} {:>8.1} {:>12.2}", cams.len(), s.pck3d, s.auc, s.mpjpe_pa_mm);
    }
    Ok(())
}
